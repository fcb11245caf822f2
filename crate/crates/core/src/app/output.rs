//! Trajectory CSV, plotting script and key=value run summaries.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::Complex;

use crate::dynamics::{GuardKind, Status, Trajectory};
use crate::error::{Error, Result};
use crate::scenarios::{Dissipation, FeedbackStack, Scenario, ScenarioId};

/// CSV header `t,q1..qn,qd1..qdn,u1..um,E,E_Lf,phi`.
pub fn csv_header(n: usize, m: usize) -> String {
    let mut cols = vec!["t".to_string()];
    cols.extend((1..=n).map(|i| format!("q{i}")));
    cols.extend((1..=n).map(|i| format!("qd{i}")));
    cols.extend((1..=m).map(|i| format!("u{i}")));
    cols.extend(["E", "E_Lf", "phi"].map(String::from));
    cols.join(",")
}

/// Seventeen significant digits, enough to round-trip every `f64`.
pub fn format_value(v: f64) -> String {
    format!("{v:.16e}")
}

pub fn trajectory_csv(traj: &Trajectory, n: usize, m: usize) -> String {
    let mut out = csv_header(n, m);
    out.push('\n');
    for s in &traj.samples {
        let row: Vec<String> = std::iter::once(s.t)
            .chain(s.q.iter().copied())
            .chain(s.qd.iter().copied())
            .chain(s.u.iter().copied())
            .chain([s.energy, s.energy_lf, s.phi])
            .map(format_value)
            .collect();
        out.push_str(&row.join(","));
        out.push('\n');
    }
    out
}

/// Parsed CSV: header columns and numeric rows.
pub fn parse_csv(text: &str) -> Result<(Vec<String>, Vec<Vec<f64>>)> {
    let mut lines = text.lines();
    let header: Vec<String> = lines
        .next()
        .ok_or_else(|| Error::Invalid("empty CSV".into()))?
        .split(',')
        .map(String::from)
        .collect();
    let rows = lines
        .filter(|l| !l.is_empty())
        .map(|l| {
            let row = l
                .split(',')
                .map(|v| {
                    v.parse::<f64>()
                        .map_err(|_| Error::Invalid(format!("bad CSV value `{v}`")))
                })
                .collect::<Result<Vec<f64>>>()?;
            if row.len() != header.len() {
                return Err(Error::DimensionMismatch {
                    expected: header.len(),
                    found: row.len(),
                });
            }
            Ok(row)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((header, rows))
}

pub fn plot_script(csv_name: &str, n: usize) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "import csv");
    let _ = writeln!(s, "import sys");
    let _ = writeln!(s, "import matplotlib");
    let _ = writeln!(s, "matplotlib.use(\"Agg\")");
    let _ = writeln!(s, "import matplotlib.pyplot as plt");
    let _ = writeln!(s);
    let _ = writeln!(
        s,
        "path = sys.argv[1] if len(sys.argv) > 1 else \"{csv_name}\""
    );
    let _ = writeln!(s, "with open(path) as fh:");
    let _ = writeln!(s, "    rows = list(csv.DictReader(fh))");
    let _ = writeln!(s, "col = lambda k: [float(r[k]) for r in rows]");
    let _ = writeln!(s, "t = col(\"t\")");
    let _ = writeln!(s, "fig, ax = plt.subplots(2, 2, figsize=(10, 8))");
    if n >= 2 {
        let _ = writeln!(s, "ax[0][0].plot(col(\"q1\"), col(\"q2\"))");
        let _ = writeln!(
            s,
            "ax[0][0].set_xlabel(\"q1\"); ax[0][0].set_ylabel(\"q2\")"
        );
    } else {
        let _ = writeln!(s, "ax[0][0].plot(t, col(\"q1\"))");
        let _ = writeln!(s, "ax[0][0].set_xlabel(\"t\"); ax[0][0].set_ylabel(\"q1\")");
    }
    let _ = writeln!(
        s,
        "for k in [c for c in rows[0] if c.startswith(\"q\") and not c.startswith(\"qd\")]:"
    );
    let _ = writeln!(s, "    ax[0][1].plot(t, col(k), label=k)");
    let _ = writeln!(s, "ax[0][1].legend(); ax[0][1].set_xlabel(\"t\")");
    let _ = writeln!(s, "for k in [c for c in rows[0] if c.startswith(\"u\")]:");
    let _ = writeln!(s, "    ax[1][0].plot(t, col(k), label=k)");
    let _ = writeln!(s, "ax[1][0].legend(); ax[1][0].set_xlabel(\"t\")");
    let _ = writeln!(s, "ax[1][1].plot(t, col(\"E_Lf\"), label=\"E_Lf\")");
    let _ = writeln!(s, "ax[1][1].plot(t, col(\"E\"), label=\"E\")");
    let _ = writeln!(s, "ax[1][1].legend(); ax[1][1].set_xlabel(\"t\")");
    let _ = writeln!(s, "fig.tight_layout()");
    let _ = writeln!(
        s,
        "fig.savefig(path.rsplit(\".\", 1)[0] + \".png\", dpi=120)"
    );
    s
}

/// Writes `<stem>.csv` and `<stem>.plot.py` into `dir`.
pub fn write_trajectory(
    dir: &Path,
    stem: &str,
    traj: &Trajectory,
    n: usize,
    m: usize,
) -> Result<PathBuf> {
    fs::create_dir_all(dir)
        .map_err(|e| Error::Invalid(format!("cannot create {}: {e}", dir.display())))?;
    let csv_path = dir.join(format!("{stem}.csv"));
    fs::write(&csv_path, trajectory_csv(traj, n, m))
        .map_err(|e| Error::Invalid(format!("cannot write {}: {e}", csv_path.display())))?;
    let plot_path = dir.join(format!("{stem}.plot.py"));
    fs::write(&plot_path, plot_script(&format!("{stem}.csv"), n))
        .map_err(|e| Error::Invalid(format!("cannot write {}: {e}", plot_path.display())))?;
    Ok(csv_path)
}

#[derive(Debug, Clone, PartialEq)]
pub enum EnergyReport {
    /// Largest `|E_Lf(t) − E_Lf(0)|`.
    Drift(f64),
    /// `E_Lf(0) − E_Lf(end)` and the largest sample-to-sample increase.
    Decrease { total: f64, max_increase: f64 },
    /// Storage `H = ½(E_Lf − E*)²` at start and end, and its largest increase.
    Storage {
        start: f64,
        end: f64,
        max_increase: f64,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunSummary {
    pub scenario: ScenarioId,
    pub stack: FeedbackStack,
    pub status: Status,
    pub t_end: f64,
    pub samples: usize,
    pub steps: usize,
    pub rejected: usize,
    /// `min(−φ)` over samples.
    pub min_margin: f64,
    /// Smallest margin of the scenario's confinement invariant.
    pub min_confinement: f64,
    /// `false` when the barrier gain is zero and the region is not guarded by feedback.
    pub bound_enforced: bool,
    /// Smallest `r + κβ/γ − |s|` when the scenario has that bound.
    pub min_cart_bound: Option<f64>,
    pub energy: EnergyReport,
    pub q_min: Vec<f64>,
    pub q_max: Vec<f64>,
    pub eigenvalues: Option<Vec<Complex<f64>>>,
    pub wall_time: f64,
}

pub fn stack_label(stack: &FeedbackStack) -> String {
    let base = match stack.base {
        crate::scenarios::BaseLaw::Barrier => "barrier",
        crate::scenarios::BaseLaw::ConstrainedCl => "constrained-cl",
        crate::scenarios::BaseLaw::Reference => "reference",
    };
    match stack.dissipation {
        Dissipation::None => base.to_string(),
        Dissipation::Simple { gain } => format!("{base}+simple(k_d={gain})"),
        Dissipation::Storage { gain, e_star } => format!("{base}+storage(k_d={gain},E*={e_star})"),
    }
}

pub fn status_label(status: &Status) -> String {
    match status {
        Status::HorizonReached => "horizon_reached".into(),
        Status::Guard { kind, t, .. } => {
            let kind = match kind {
                GuardKind::Position => "position",
                GuardKind::Speed => "speed",
                GuardKind::Boundary => "boundary",
            };
            format!("guard_{kind}@{}", format_value(*t))
        }
    }
}

impl RunSummary {
    pub fn new(
        scenario: &Scenario,
        stack: FeedbackStack,
        traj: &Trajectory,
        wall_time: f64,
    ) -> Self {
        let n = scenario.system.dim();
        let first = &traj.samples[0];
        let mut q_min = vec![f64::INFINITY; n];
        let mut q_max = vec![f64::NEG_INFINITY; n];
        let mut min_confinement = f64::INFINITY;
        let mut min_cart_bound: Option<f64> = None;
        for s in &traj.samples {
            for i in 0..n {
                q_min[i] = q_min[i].min(s.q[i]);
                q_max[i] = q_max[i].max(s.q[i]);
            }
            min_confinement = min_confinement.min(scenario.confinement_margin(&s.q));
            if let Some(m) = scenario.cart_bound_margin(&s.q) {
                min_cart_bound = Some(min_cart_bound.map_or(m, |old: f64| old.min(m)));
            }
        }
        let max_increase = |values: &mut dyn Iterator<Item = f64>| {
            let mut prev: Option<f64> = None;
            let mut worst: f64 = 0.0;
            for v in values {
                if let Some(p) = prev {
                    worst = worst.max(v - p);
                }
                prev = Some(v);
            }
            worst
        };
        let energy = match stack.dissipation {
            Dissipation::None => EnergyReport::Drift(
                traj.samples
                    .iter()
                    .map(|s| (s.energy_lf - first.energy_lf).abs())
                    .fold(0.0, f64::max),
            ),
            Dissipation::Simple { .. } => EnergyReport::Decrease {
                total: first.energy_lf - traj.last().energy_lf,
                max_increase: max_increase(&mut traj.samples.iter().map(|s| s.energy_lf)),
            },
            Dissipation::Storage { e_star, .. } => {
                let h = |e: f64| 0.5 * (e - e_star) * (e - e_star);
                EnergyReport::Storage {
                    start: h(first.energy_lf),
                    end: h(traj.last().energy_lf),
                    max_increase: max_increase(&mut traj.samples.iter().map(|s| h(s.energy_lf))),
                }
            }
        };
        let bound_enforced =
            !(scenario.id == ScenarioId::PendulumCartUp && scenario.params.get("k_b") == 0.0);
        Self {
            scenario: scenario.id,
            stack,
            status: traj.status.clone(),
            t_end: traj.last().t,
            samples: traj.samples.len(),
            steps: traj.steps,
            rejected: traj.rejected,
            min_margin: traj.min_margin(),
            min_confinement,
            bound_enforced,
            min_cart_bound,
            energy,
            q_min,
            q_max,
            eigenvalues: None,
            wall_time,
        }
    }

    /// `key=value` lines in a fixed order.
    pub fn lines(&self) -> Vec<String> {
        let mut out = vec![
            format!("scenario={}", self.scenario),
            format!("feedback={}", stack_label(&self.stack)),
            format!("status={}", status_label(&self.status)),
            format!("t_end={}", format_value(self.t_end)),
            format!("samples={}", self.samples),
            format!("steps={}", self.steps),
            format!("rejected={}", self.rejected),
            format!("min_margin={}", format_value(self.min_margin)),
            format!("min_confinement={}", format_value(self.min_confinement)),
            format!("invariant={}", self.scenario.invariant()),
            format!("bound_enforced={}", self.bound_enforced),
        ];
        if let Some(m) = self.min_cart_bound {
            out.push(format!("min_cart_bound={}", format_value(m)));
            out.push(format!("cart_bound_held={}", m > 0.0));
        }
        match &self.energy {
            EnergyReport::Drift(d) => out.push(format!("energy_drift={}", format_value(*d))),
            EnergyReport::Decrease {
                total,
                max_increase,
            } => {
                out.push(format!("energy_decrease={}", format_value(*total)));
                out.push(format!(
                    "energy_max_increase={}",
                    format_value(*max_increase)
                ));
            }
            EnergyReport::Storage {
                start,
                end,
                max_increase,
            } => {
                out.push(format!("storage_start={}", format_value(*start)));
                out.push(format!("storage_end={}", format_value(*end)));
                out.push(format!(
                    "storage_max_increase={}",
                    format_value(*max_increase)
                ));
            }
        }
        for (i, (lo, hi)) in self.q_min.iter().zip(&self.q_max).enumerate() {
            out.push(format!("q{}_min={}", i + 1, format_value(*lo)));
            out.push(format!("q{}_max={}", i + 1, format_value(*hi)));
        }
        if let Some(eigs) = &self.eigenvalues {
            out.push(format!("eigenvalues={}", format_complex_list(eigs)));
        }
        out.push(format!("wall_time_s={:.3}", self.wall_time));
        out
    }
}

pub fn format_complex_list(values: &[Complex<f64>]) -> String {
    values
        .iter()
        .map(|z| {
            let sign = if z.im.is_sign_negative() { "" } else { "+" };
            format!("{}{sign}{}i", format_value(z.re), format_value(z.im))
        })
        .collect::<Vec<_>>()
        .join(";")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn header_layout() {
        assert_eq!(csv_header(2, 1), "t,q1,q2,qd1,qd2,u1,E,E_Lf,phi");
    }

    #[test]
    fn values_round_trip() {
        for v in [
            0.1,
            1.0 / 3.0,
            -2.5e-300,
            6.02214076e23,
            f64::MIN_POSITIVE,
            f64::MAX,
            0.0,
        ] {
            assert_eq!(
                format_value(v).parse::<f64>().unwrap().to_bits(),
                v.to_bits()
            );
        }
    }
}
