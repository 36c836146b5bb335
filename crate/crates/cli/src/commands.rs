use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use plim_core::analysis::{relative_l2, resample, running_average, self_intersections};
use plim_core::atlas::{load_atlas, save_atlas};
use plim_core::dynamics::{coarse_integrate, coarse_integrate_supplemented, lift_trajectory};
use plim_core::elastowave::{
    build_coupled_store, run_coupled_homogeneous, run_coupled_plim, run_subdomain_experiment, CoupledComparison,
};
use plim_core::gsolve::LsfemSolver;
use plim_core::io::{write_coarse_run, write_columns, write_transfers, Table};
use plim_core::systems::{anchor_tasks, bundle, generate_atlas, GenerationReport, SystemBundle};
use plim_core::{fine_integrate, Atlas, BlockId, CoarseConfig, CoarseRun, RunStatus, Trajectory};

use crate::config::{ElastowaveMode, RunConfig};
use crate::fail::{config_error, Failure};
use crate::plot;

type Outcome = Result<(), Failure>;

pub fn variable_names(system: &str) -> &'static [&'static str] {
    match system {
        "lorenz" => &["x", "y", "z"],
        "hamiltonian4" => &["x1", "x2", "x3", "x4"],
        "oscillator" => &["x", "y"],
        _ => &["ubar", "vbar"],
    }
}

fn create(dir: &Path, name: &str) -> Result<BufWriter<File>, Failure> {
    std::fs::create_dir_all(dir)?;
    Ok(BufWriter::new(File::create(dir.join(name))?))
}

fn default_atlas_path(cfg: &RunConfig) -> PathBuf {
    cfg.out.join(format!("{}.atlas", cfg.system))
}

fn ode_only(cfg: &RunConfig, what: &str) -> Outcome {
    if cfg.system == "elastowave" {
        return Err(config_error(format!(
            "{what} is not available for elastowave; its manifolds are built inside compare"
        )));
    }
    Ok(())
}

/// Solves every anchor task of the configured layout.
fn generate(cfg: &RunConfig, b: &SystemBundle, f0: &[f64]) -> Result<(Atlas, GenerationReport), Failure> {
    let spec = cfg.atlas_spec()?;
    let mut atlas = spec.empty_atlas(&b.projection)?;
    let blocks: Option<Vec<BlockId>> = if cfg.generation.visited_only {
        let fine = fine_integrate(&b.system, f0, cfg.fine_step(), cfg.horizon)?;
        let mut ids: Vec<BlockId> = fine
            .states
            .iter()
            .filter_map(|f| atlas.block_of(&b.projection.apply(f)).ok())
            .collect();
        ids.sort();
        ids.dedup();
        Some(ids)
    } else {
        None
    };
    let tasks = anchor_tasks(&spec, &atlas, &b.projection, blocks.as_deref())?;
    if tasks.is_empty() {
        eprintln!("warning: no anchors in the configured layout, the atlas is empty");
    }
    let report = generate_atlas(
        &mut atlas,
        &b.geq,
        spec.mode,
        &tasks,
        &cfg.gsolve_config(),
        cfg.generation.keep_failed,
    )?;
    Ok((atlas, report))
}

fn histogram(objectives: &[f64]) -> String {
    let mut bins = std::collections::BTreeMap::new();
    for o in objectives {
        let decade = if *o > 0.0 { o.log10().floor() as i32 } else { i32::MIN };
        *bins.entry(decade).or_insert(0usize) += 1;
    }
    bins.iter()
        .map(|(d, n)| {
            if *d == i32::MIN {
                format!("  0: {n}")
            } else {
                format!("  [1e{d}, 1e{}): {n}", d + 1)
            }
        })
        .collect::<Vec<_>>()
        .join("\n")
}

fn report_text(r: &GenerationReport) -> String {
    format!(
        "sheets solved {}, failed {} (kept {})\nobjective histogram:\n{}",
        r.solved,
        r.failed,
        r.kept_failed,
        histogram(&r.objectives)
    )
}

pub fn precompute(cfg: &RunConfig, atlas_path: Option<&Path>) -> Outcome {
    ode_only(cfg, "precompute")?;
    let b = bundle(&cfg.system)?;
    let f0 = if cfg.generation.visited_only {
        cfg.initial_state()?
    } else {
        Vec::new()
    };
    let (atlas, report) = generate(cfg, &b, &f0)?;
    println!("{}", report_text(&report));
    if let Some(max) = cfg.generation.max_failures {
        if report.failed > max {
            return Err(Failure::Solver(format!(
                "{} solves failed, budget is {max}; no atlas written",
                report.failed
            )));
        }
    }
    let path = atlas_path.map_or_else(|| default_atlas_path(cfg), Path::to_path_buf);
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    save_atlas(&atlas, &path)?;
    println!(
        "{} sheets in {} blocks written to {}",
        atlas.len(),
        atlas.block_ids().len(),
        path.display()
    );
    Ok(())
}

/// Loads the atlas, or starts from an empty one (supplemented runs) or a generated one.
fn obtain_atlas(cfg: &RunConfig, b: &SystemBundle, atlas_path: Option<&Path>, f0: &[f64]) -> Result<Atlas, Failure> {
    if let Some(p) = atlas_path.filter(|p| p.exists()) {
        return Ok(load_atlas(p)?);
    }
    if atlas_path.is_none() && cfg.supplement {
        return Ok(cfg.atlas_spec()?.empty_atlas(&b.projection)?);
    }
    let (atlas, report) = generate(cfg, b, f0)?;
    eprintln!("{}", report_text(&report));
    if let Some(p) = atlas_path {
        save_atlas(&atlas, p)?;
    }
    Ok(atlas)
}

fn coarse_run(cfg: &RunConfig, b: &SystemBundle, atlas: &mut Atlas, f0: &[f64]) -> Result<CoarseRun, Failure> {
    let mut cc = CoarseConfig::new(cfg.dt, cfg.horizon);
    cc.supplement_threshold = cfg.supplement_threshold;
    let run = if cfg.supplement {
        let solver = LsfemSolver {
            geq: b.geq.clone(),
            mode: b.mode,
            config: cfg.gsolve_config(),
        };
        coarse_integrate_supplemented(&b.system, &b.projection, atlas, &solver, f0, &cc)?
    } else {
        coarse_integrate(&b.system, &b.projection, atlas, f0, &cc)?
    };
    Ok(run)
}

fn status_check(run: &CoarseRun) -> Outcome {
    if run.status == RunStatus::Completed {
        return Ok(());
    }
    Err(Failure::Run(format!(
        "coarse run stopped at t = {} with status {:?}{}",
        run.final_time(),
        run.status,
        run.message.as_ref().map(|m| format!(": {m}")).unwrap_or_default()
    )))
}

fn resolve_atlas_path(cfg: &RunConfig, flag: Option<&Path>) -> Option<PathBuf> {
    flag.map(Path::to_path_buf).or_else(|| cfg.atlas.clone())
}

/// Keeps supplemental sheets for later runs.
fn store_supplemented(cfg: &RunConfig, atlas: &Atlas, run: &CoarseRun, path: Option<&Path>) -> Outcome {
    if run.supplemented == 0 {
        return Ok(());
    }
    let path = path.map_or_else(|| default_atlas_path(cfg), Path::to_path_buf);
    std::fs::create_dir_all(&cfg.out)?;
    save_atlas(atlas, &path)?;
    println!(
        "atlas with {} supplemental sheets written to {}",
        run.supplemented,
        path.display()
    );
    Ok(())
}

pub fn evolve(cfg: &RunConfig, atlas_flag: Option<&Path>) -> Outcome {
    if cfg.system == "elastowave" {
        return compare(cfg, atlas_flag);
    }
    let b = bundle(&cfg.system)?;
    let f0 = cfg.initial_state()?;
    let path = resolve_atlas_path(cfg, atlas_flag);
    let mut atlas = obtain_atlas(cfg, &b, path.as_deref(), &f0)?;
    let run = coarse_run(cfg, &b, &mut atlas, &f0)?;
    let lifted = lift_trajectory(&run, &atlas, &b.projection).ok();
    write_coarse_run(create(&cfg.out, "coarse.csv")?, &run, lifted.as_ref())?;
    write_transfers(create(&cfg.out, "transfers.csv")?, &run.transfers)?;
    store_supplemented(cfg, &atlas, &run, path.as_deref())?;
    println!(
        "status {:?} at t = {}, {} samples, {} transfers, {} supplemental sheets",
        run.status,
        run.final_time(),
        run.len(),
        run.transfers.len(),
        run.supplemented
    );
    status_check(&run)
}

/// Series sampled on `times`, NaN past the end of `src`.
fn on_grid(src_t: &[f64], src: &[f64], times: &[f64]) -> Result<Vec<f64>, Failure> {
    let end = src_t.last().copied().unwrap_or(f64::NEG_INFINITY);
    let k = times.iter().filter(|t| **t <= end + 1e-12).count();
    let mut v = if k > 0 {
        resample(src_t, src, &times[..k])?
    } else {
        Vec::new()
    };
    v.resize(times.len(), f64::NAN);
    Ok(v)
}

/// Running average over the finite prefix, NaN afterwards.
fn averaged(times: &[f64], v: &[f64]) -> Result<Vec<f64>, Failure> {
    let k = v.iter().take_while(|x| x.is_finite()).count();
    let mut out = if k > 0 {
        running_average(&times[..k], &v[..k])?
    } else {
        Vec::new()
    };
    out.resize(v.len(), f64::NAN);
    Ok(out)
}

fn finite_prefix_error(a: &[f64], b: &[f64]) -> f64 {
    let k = a.iter().take_while(|x| x.is_finite()).count();
    if k < a.len() {
        return f64::INFINITY;
    }
    relative_l2(&a[..k], &b[..k])
}

pub fn compare(cfg: &RunConfig, atlas_flag: Option<&Path>) -> Outcome {
    if cfg.system == "elastowave" {
        return match cfg.elastowave.mode {
            ElastowaveMode::Subdomain => compare_subdomain(cfg),
            ElastowaveMode::Coupled => compare_coupled(cfg),
        };
    }
    let b = bundle(&cfg.system)?;
    let f0 = cfg.initial_state()?;
    let path = resolve_atlas_path(cfg, atlas_flag);
    let mut atlas = obtain_atlas(cfg, &b, path.as_deref(), &f0)?;
    let (fine, run) = std::thread::scope(|s| {
        let fine = s.spawn(|| fine_integrate(&b.system, &f0, cfg.fine_step(), cfg.horizon));
        let run = coarse_run(cfg, &b, &mut atlas, &f0);
        (fine.join().expect("fine integration thread"), run)
    });
    let (fine, run) = (fine?, run?);
    let lifted: Trajectory = lift_trajectory(&run, &atlas, &b.projection)?;
    write_outputs(cfg, &b, &fine, &run, &lifted)?;
    store_supplemented(cfg, &atlas, &run, path.as_deref())?;
    status_check(&run)
}

fn write_outputs(
    cfg: &RunConfig,
    b: &SystemBundle,
    fine: &Trajectory,
    run: &CoarseRun,
    lifted: &Trajectory,
) -> Outcome {
    let names = variable_names(&cfg.system);
    let t = &fine.times;
    let mut fine_cols = Vec::new();
    let mut coarse_cols = Vec::new();
    for (k, name) in names.iter().enumerate() {
        let f = fine.component(k);
        let c = on_grid(&lifted.times, &lifted.component(k), t)?;
        write_columns(
            create(&cfg.out, &format!("{name}_t.csv"))?,
            &["t", "fine", "coarse"],
            &[t, &f, &c],
        )?;
        fine_cols.push(f);
        coarse_cols.push(c);
    }

    let mut header = vec!["t".to_string()];
    let mut cols: Vec<Vec<f64>> = vec![t.clone()];
    for (k, name) in names.iter().enumerate() {
        let abs = |v: &[f64]| v.iter().map(|x| x.abs()).collect::<Vec<f64>>();
        header.extend([
            format!("fine_{name}"),
            format!("coarse_{name}"),
            format!("fine_abs_{name}"),
            format!("coarse_abs_{name}"),
        ]);
        cols.push(averaged(t, &fine_cols[k])?);
        cols.push(averaged(t, &coarse_cols[k])?);
        cols.push(averaged(t, &abs(&fine_cols[k]))?);
        cols.push(averaged(t, &abs(&coarse_cols[k]))?);
    }
    let h: Vec<&str> = header.iter().map(String::as_str).collect();
    let c: Vec<&[f64]> = cols.iter().map(Vec::as_slice).collect();
    write_columns(create(&cfg.out, "averages.csv")?, &h, &c)?;

    let mut header = vec!["t".to_string()];
    let mut cols: Vec<&[f64]> = vec![t];
    for (k, name) in names.iter().enumerate() {
        header.push(format!("fine_{name}"));
        cols.push(&fine_cols[k]);
    }
    for (k, name) in names.iter().enumerate() {
        header.push(format!("coarse_{name}"));
        cols.push(&coarse_cols[k]);
    }
    let h: Vec<&str> = header.iter().map(String::as_str).collect();
    write_columns(create(&cfg.out, "phase.csv")?, &h, &cols)?;

    write_coarse_run(create(&cfg.out, "coarse.csv")?, run, Some(lifted))?;
    write_transfers(create(&cfg.out, "transfers.csv")?, &run.transfers)?;

    let mut summary = format!(
        "system {}\nstatus {:?} at t = {}\ntransfers {}\nsupplemental sheets {}\n",
        cfg.system,
        run.status,
        run.final_time(),
        run.transfers.len(),
        run.supplemented
    );
    if b.projection.dim_coarse() == 2 {
        let pts: Vec<[f64; 2]> = run.coarse.iter().map(|c| [c[0], c[1]]).collect();
        summary.push_str(&format!("coarse self-intersections {}\n", self_intersections(&pts)));
    }
    for (k, name) in names.iter().enumerate() {
        summary.push_str(&format!(
            "relative L2 error {name} {:.4e}\n",
            finite_prefix_error(&coarse_cols[k], &fine_cols[k])
        ));
    }
    create(&cfg.out, "summary.txt")?.write_all(summary.as_bytes())?;
    create(&cfg.out, "plot.py")?.write_all(plot::ode_script(&cfg.system, names).as_bytes())?;
    print!("{summary}");
    Ok(())
}

fn compare_subdomain(cfg: &RunConfig) -> Outcome {
    let r = run_subdomain_experiment(&cfg.elastowave.subdomain)?;
    for (k, name) in ["ubar", "vbar"].iter().enumerate() {
        let col = |s: &[[f64; 2]]| s.iter().map(|p| p[k]).collect::<Vec<f64>>();
        write_columns(
            create(&cfg.out, &format!("{name}_t.csv"))?,
            &["t", "fine", "coarse", "homogeneous"],
            &[&r.times, &col(&r.fine), &col(&r.coarse), &col(&r.homogeneous)],
        )?;
    }
    write_coarse_run(create(&cfg.out, "coarse.csv")?, &r.run, None)?;
    write_transfers(create(&cfg.out, "transfers.csv")?, &r.run.transfers)?;
    let summary = format!(
        "system elastowave (sub-domain)\nstatus {:?} at t = {}\nsheets {}\ntransfers {}\nrelative L2 error ubar {:.4e} vbar {:.4e}\nhomogeneous error ubar {:.4e} vbar {:.4e}\n",
        r.run.status,
        r.run.final_time(),
        r.atlas.len(),
        r.run.transfers.len(),
        r.error[0],
        r.error[1],
        r.homogeneous_error[0],
        r.homogeneous_error[1]
    );
    create(&cfg.out, "summary.txt")?.write_all(summary.as_bytes())?;
    create(&cfg.out, "plot.py")?.write_all(plot::subdomain_script().as_bytes())?;
    print!("{summary}");
    status_check(&r.run)
}

fn node_series(c: &CoupledComparison, node: usize, times: &[f64]) -> Result<(Vec<f64>, Vec<f64>), Failure> {
    match &c.run {
        Some(run) => {
            let (u, v) = run.node_history(node);
            Ok((on_grid(&run.times, &u, times)?, on_grid(&run.times, &v, times)?))
        }
        None => Ok((vec![f64::NAN; times.len()], vec![f64::NAN; times.len()])),
    }
}

fn compare_coupled(cfg: &RunConfig) -> Outcome {
    let ew = &cfg.elastowave;
    let store = build_coupled_store(&ew.coupled, &ew.store)?;
    let plim = run_coupled_plim(&ew.coupled, &store)?;
    let hom = run_coupled_homogeneous(&ew.coupled, ew.coupled.medium.harmonic_modulus())?;
    let reference = &plim.reference;
    let node = reference.nodes.len() / 2;
    let t = &reference.times;
    let fu: Vec<f64> = reference.u.iter().map(|s| s[node]).collect();
    let fv: Vec<f64> = reference.v.iter().map(|s| s[node]).collect();
    let (pu, pv) = node_series(&plim, node, t)?;
    let (hu, hv) = node_series(&hom, node, t)?;
    write_columns(
        create(&cfg.out, "coupled_node.csv")?,
        &[
            "t",
            "fine_u",
            "plim_u",
            "homogeneous_u",
            "fine_v",
            "plim_v",
            "homogeneous_v",
        ],
        &[t, &fu, &pu, &hu, &fv, &pv, &hv],
    )?;
    let summary = format!(
        "system elastowave (coupled)\nnode x = {}\nfine steps {}, coarse steps {}\noperation ratio {:.4e}\nstore sheets {} (failed {}), fallback lifts {}\nrelative L2 error ubar {:.4e} vbar {:.4e}\nhomogeneous error ubar {:.4e} vbar {:.4e}\n{}",
        reference.nodes[node],
        plim.fine_steps,
        plim.coarse_steps,
        plim.flop_ratio,
        plim.store_sheets,
        plim.store_failed,
        plim.fallbacks,
        plim.error[0],
        plim.error[1],
        hom.error[0],
        hom.error[1],
        plim.failure.as_ref().map(|f| format!("coarse run failed: {f}\n")).unwrap_or_default()
    );
    create(&cfg.out, "summary.txt")?.write_all(summary.as_bytes())?;
    create(&cfg.out, "plot.py")?.write_all(plot::coupled_script().as_bytes())?;
    print!("{summary}");
    match plim.failure {
        Some(f) => Err(Failure::Run(f)),
        None => Ok(()),
    }
}

/// Running averages of every column of a CSV with a `t` column.
pub fn average(input: &Path, out: Option<&Path>) -> Outcome {
    let file = File::open(input).map_err(|e| config_error(format!("cannot read {}: {e}", input.display())))?;
    let table = Table::read(file)?;
    let t = table.column("t")?;
    let mut header = vec!["t".to_string()];
    let mut cols = vec![t.clone()];
    for name in table.header.iter().filter(|h| *h != "t") {
        let Ok(v) = table.column(name) else { continue };
        let abs: Vec<f64> = v.iter().map(|x| x.abs()).collect();
        header.push(format!("avg_{name}"));
        cols.push(averaged(&t, &v)?);
        header.push(format!("avg_abs_{name}"));
        cols.push(averaged(&t, &abs)?);
    }
    let h: Vec<&str> = header.iter().map(String::as_str).collect();
    let c: Vec<&[f64]> = cols.iter().map(Vec::as_slice).collect();
    match out {
        Some(p) => write_columns(BufWriter::new(File::create(p)?), &h, &c)?,
        None => write_columns(std::io::stdout().lock(), &h, &c)?,
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn on_grid_pads_with_nan() {
        let v = on_grid(&[0.0, 1.0], &[0.0, 2.0], &[0.0, 0.5, 1.0, 1.5]).unwrap();
        assert_eq!(&v[..3], &[0.0, 1.0, 2.0]);
        assert!(v[3].is_nan());
        let a = averaged(&[0.0, 0.5, 1.0, 1.5], &v).unwrap();
        assert!((a[2] - 1.0).abs() < 1e-15 && a[3].is_nan());
    }

    #[test]
    fn histogram_bins_by_decade() {
        let h = histogram(&[0.0, 2e-4, 5e-4, 0.3]);
        assert!(h.contains("  0: 1"));
        assert!(h.contains("[1e-4, 1e-3): 2"));
        assert!(h.contains("[1e-1, 1e0): 1"));
    }
}
