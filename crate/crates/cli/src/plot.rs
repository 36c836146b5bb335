//! Python/matplotlib scripts that redraw the comparison panels from the CSVs.

const HEAD: &str = r#"import os
import numpy as np
import matplotlib.pyplot as plt

here = os.path.dirname(os.path.abspath(__file__))


def load(name):
    return np.genfromtxt(os.path.join(here, name), delimiter=",", names=True)

"#;

pub fn ode_script(system: &str, names: &[&str]) -> String {
    let list = names.iter().map(|n| format!("\"{n}\"")).collect::<Vec<_>>().join(", ");
    let phase = match system {
        "lorenz" => ("x", "z"),
        "hamiltonian4" => ("x1", "x2"),
        _ => ("x", "y"),
    };
    format!(
        r#"{HEAD}names = [{list}]

fig, axes = plt.subplots(len(names), 1, sharex=True, figsize=(8, 2.2 * len(names)))
for ax, n in zip(axes, names):
    d = load(n + "_t.csv")
    ax.plot(d["t"], d["fine"], "k-", lw=0.8, label="fine")
    ax.plot(d["t"], d["coarse"], "r--", lw=0.8, label="coarse")
    ax.set_ylabel(n)
axes[0].legend()
axes[-1].set_xlabel("t")
fig.tight_layout()
fig.savefig(os.path.join(here, "trajectories.png"), dpi=150)

a = load("averages.csv")
fig, axes = plt.subplots(len(names), 2, sharex=True, figsize=(10, 2.2 * len(names)))
for row, n in zip(axes, names):
    for ax, kind in zip(row, ["", "abs_"]):
        ax.plot(a["t"], a["fine_" + kind + n], "k-", label="fine")
        ax.plot(a["t"], a["coarse_" + kind + n], "r--", label="coarse")
        ax.set_ylabel(("|%s|" if kind else "%s") % n + " average")
axes[0][0].legend()
fig.tight_layout()
fig.savefig(os.path.join(here, "averages.png"), dpi=150)

p = load("phase.csv")
fig, ax = plt.subplots(figsize=(6, 6))
ax.plot(p["fine_{a}"], p["fine_{b}"], "k-", lw=0.6, label="fine")
ax.plot(p["coarse_{a}"], p["coarse_{b}"], "r-", lw=0.6, label="coarse")
ax.set_xlabel("{a}")
ax.set_ylabel("{b}")
ax.legend()
fig.savefig(os.path.join(here, "phase.png"), dpi=150)
"#,
        a = phase.0,
        b = phase.1,
    )
}

pub fn subdomain_script() -> String {
    format!(
        r#"{HEAD}fig, axes = plt.subplots(2, 1, sharex=True, figsize=(8, 5))
for ax, n in zip(axes, ["ubar", "vbar"]):
    d = load(n + "_t.csv")
    ax.plot(d["t"], d["fine"], "k-", label="fine")
    ax.plot(d["t"], d["coarse"], "r--", label="coarse")
    ax.plot(d["t"], d["homogeneous"], "b:", label="homogeneous")
    ax.set_ylabel(n)
axes[0].legend()
axes[-1].set_xlabel("t")
fig.tight_layout()
fig.savefig(os.path.join(here, "subdomain.png"), dpi=150)
"#
    )
}

pub fn coupled_script() -> String {
    format!(
        r#"{HEAD}d = load("coupled_node.csv")
fig, axes = plt.subplots(2, 1, sharex=True, figsize=(8, 5))
for ax, f in zip(axes, ["u", "v"]):
    ax.plot(d["t"], d["fine_" + f], "k-", label="fine")
    ax.plot(d["t"], d["plim_" + f], "r--", label="manifold closure")
    ax.plot(d["t"], d["homogeneous_" + f], "b:", label="homogeneous")
    ax.set_ylabel(f + " at node")
axes[0].legend()
axes[-1].set_xlabel("t")
fig.tight_layout()
fig.savefig(os.path.join(here, "coupled.png"), dpi=150)
"#
    )
}
