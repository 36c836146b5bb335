//! CSV export and re-import of runs and tables.

use std::io::{Read, Write};

use crate::atlas::TransferEvent;
use crate::dynamics::CoarseRun;
use crate::error::{PlimError, Result};
use crate::integrate::Trajectory;

fn csv_err(e: csv::Error) -> PlimError {
    PlimError::config(format!("csv: {e}"))
}

/// Columns of equal length under a header row.
pub fn write_columns<W: Write>(w: W, header: &[&str], cols: &[&[f64]]) -> Result<()> {
    if header.len() != cols.len() {
        return Err(PlimError::precondition("header and column counts differ"));
    }
    let n = cols.first().map_or(0, |c| c.len());
    if cols.iter().any(|c| c.len() != n) {
        return Err(PlimError::precondition("columns have different lengths"));
    }
    let mut wr = csv::Writer::from_writer(w);
    wr.write_record(header).map_err(csv_err)?;
    for i in 0..n {
        wr.write_record(cols.iter().map(|c| format!("{:e}", c[i])))
            .map_err(csv_err)?;
    }
    wr.flush()?;
    Ok(())
}

/// `t, c_1..c_m, sheet_id` then optional lifted fine coordinates `f_1..f_n`.
pub fn write_coarse_run<W: Write>(w: W, run: &CoarseRun, lifted: Option<&Trajectory>) -> Result<()> {
    let m = run.coarse.first().map_or(0, |c| c.len());
    let n = lifted.and_then(|l| l.states.first()).map_or(0, |s| s.len());
    let mut wr = csv::Writer::from_writer(w);
    let mut header = vec!["t".to_string()];
    header.extend((1..=m).map(|k| format!("c_{k}")));
    header.push("sheet_id".into());
    header.extend((1..=n).map(|k| format!("f_{k}")));
    wr.write_record(&header).map_err(csv_err)?;
    for i in 0..run.len() {
        let mut rec = vec![format!("{:e}", run.times[i])];
        rec.extend(run.coarse[i].iter().map(|v| format!("{v:e}")));
        rec.push(run.sheet_ids[i].to_string());
        if let Some(l) = lifted {
            rec.extend(l.states[i].iter().map(|v| format!("{v:e}")));
        }
        wr.write_record(&rec).map_err(csv_err)?;
    }
    wr.flush()?;
    Ok(())
}

pub fn write_trajectory<W: Write>(w: W, tr: &Trajectory, names: &[&str]) -> Result<()> {
    let n = tr.states.first().map_or(names.len(), |s| s.len());
    if names.len() != n {
        return Err(PlimError::precondition("one name per state component is required"));
    }
    let mut wr = csv::Writer::from_writer(w);
    let mut header = vec!["t"];
    header.extend_from_slice(names);
    wr.write_record(&header).map_err(csv_err)?;
    for (t, s) in tr.times.iter().zip(&tr.states) {
        let mut rec = vec![format!("{t:e}")];
        rec.extend(s.iter().map(|v| format!("{v:e}")));
        wr.write_record(&rec).map_err(csv_err)?;
    }
    wr.flush()?;
    Ok(())
}

pub fn write_transfers<W: Write>(w: W, events: &[TransferEvent]) -> Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    wr.write_record([
        "t",
        "from_sheet",
        "to_sheet",
        "reason",
        "t_resume",
        "distance",
        "micro_steps",
    ])
    .map_err(csv_err)?;
    for e in events {
        wr.write_record([
            format!("{:e}", e.t),
            e.from_sheet.to_string(),
            e.to_sheet.to_string(),
            e.reason.as_str().to_string(),
            format!("{:e}", e.t_resume),
            format!("{:e}", e.distance),
            e.micro_steps.to_string(),
        ])
        .map_err(csv_err)?;
    }
    wr.flush()?;
    Ok(())
}

/// A parsed CSV file.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn read<R: Read>(r: R) -> Result<Table> {
        let mut rd = csv::Reader::from_reader(r);
        let header = rd.headers().map_err(csv_err)?.iter().map(String::from).collect();
        let rows = rd
            .records()
            .map(|r| r.map(|rec| rec.iter().map(String::from).collect()))
            .collect::<std::result::Result<Vec<Vec<String>>, _>>()
            .map_err(csv_err)?;
        Ok(Table { header, rows })
    }

    pub fn column_index(&self, name: &str) -> Result<usize> {
        self.header
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| PlimError::config(format!("missing column '{name}'")))
    }

    pub fn column(&self, name: &str) -> Result<Vec<f64>> {
        let i = self.column_index(name)?;
        self.rows
            .iter()
            .map(|r| {
                r[i].parse::<f64>()
                    .map_err(|_| PlimError::config(format!("non-numeric value in '{name}'")))
            })
            .collect()
    }

    pub fn text_column(&self, name: &str) -> Result<Vec<String>> {
        let i = self.column_index(name)?;
        Ok(self.rows.iter().map(|r| r[i].clone()).collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::atlas::TransferReason;
    use crate::dynamics::RunStatus;

    #[test]
    fn coarse_run_round_trip() {
        let run = CoarseRun {
            times: vec![0.0, 0.5],
            coarse: vec![vec![1.0, 2.0], vec![1.5, 2.5]],
            sheet_ids: vec![3, 4],
            transfers: vec![],
            status: RunStatus::Completed,
            message: None,
            initial_distance: 0.0,
            supplemented: 0,
        };
        let lifted = Trajectory {
            times: run.times.clone(),
            states: vec![vec![1.0, 9.0, 2.0], vec![1.5, 8.0, 2.5]],
        };
        let mut buf = Vec::new();
        write_coarse_run(&mut buf, &run, Some(&lifted)).unwrap();
        let t = Table::read(buf.as_slice()).unwrap();
        assert_eq!(t.header, vec!["t", "c_1", "c_2", "sheet_id", "f_1", "f_2", "f_3"]);
        assert_eq!(t.column("c_2").unwrap(), vec![2.0, 2.5]);
        assert_eq!(t.column("sheet_id").unwrap(), vec![3.0, 4.0]);
        assert_eq!(t.column("f_2").unwrap(), vec![9.0, 8.0]);
    }

    #[test]
    fn transfers_round_trip() {
        let ev = TransferEvent {
            t: 0.25,
            t_resume: 0.26,
            from_sheet: 1,
            to_sheet: 2,
            reason: TransferReason::PruneEdge,
            distance: 0.1,
            micro_steps: 10,
        };
        let mut buf = Vec::new();
        write_transfers(&mut buf, &[ev]).unwrap();
        let t = Table::read(buf.as_slice()).unwrap();
        assert_eq!(t.text_column("reason").unwrap(), vec!["prune-edge"]);
        assert_eq!(t.column("t").unwrap(), vec![0.25]);
    }

    #[test]
    fn columns_round_trip_exactly() {
        let a = [0.1, 1.0 / 3.0];
        let b = [std::f64::consts::PI, -2.5e-300];
        let mut buf = Vec::new();
        write_columns(&mut buf, &["a", "b"], &[&a, &b]).unwrap();
        let t = Table::read(buf.as_slice()).unwrap();
        assert_eq!(t.column("a").unwrap(), a.to_vec());
        assert_eq!(t.column("b").unwrap(), b.to_vec());
    }
}
