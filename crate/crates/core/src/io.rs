//! CSV and JSON writers.
//!
//! CSV files are comma-separated with a header row and LF line endings;
//! numbers carry 17 significant digits so that reruns can be compared byte
//! for byte. JSON goes through serde_json, which prints the shortest
//! round-tripping representation and keeps struct field order.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::Serialize;

use crate::error::Result;
use crate::regimes::{LevelStatus, SweepReport};
use crate::scheme::{DiscreteTrajectory, VariationalInterpolant};

pub fn fmt_num(x: f64) -> String {
    format!("{x:.16e}")
}

fn coord_headers(dim: usize) -> String {
    (0..dim).map(|k| format!(",x{k}")).collect()
}

/// Columns `i, t, x0.., energy, step_distance`; `step_distance` on row `i`
/// is `d(u^i, u^{i-1})` and 0 on the first row.
pub fn trajectory_csv(traj: &DiscreteTrajectory) -> String {
    let dim = traj.points[0].dim();
    let mut out = format!("i,t{},energy,step_distance\n", coord_headers(dim));
    for (i, p) in traj.points.iter().enumerate() {
        let _ = write!(out, "{i},{}", fmt_num(traj.time(i)));
        for c in p.coords() {
            let _ = write!(out, ",{}", fmt_num(*c));
        }
        let step = if i == 0 {
            0.0
        } else {
            traj.step_distances[i - 1]
        };
        let _ = writeln!(out, ",{},{}", fmt_num(traj.step_energies[i]), fmt_num(step));
    }
    out
}

/// Columns `t, x0.., g_value` at every quadrature node.
pub fn interpolant_csv(interp: &VariationalInterpolant) -> String {
    let dim = interp
        .steps
        .first()
        .and_then(|s| s.points.first())
        .map_or(1, |p| p.dim());
    let mut out = format!("t{},g_value\n", coord_headers(dim));
    for (t, p, g) in interp.samples() {
        out.push_str(&fmt_num(t));
        for c in p.coords() {
            let _ = write!(out, ",{}", fmt_num(*c));
        }
        let _ = writeln!(out, ",{}", fmt_num(g));
    }
    out
}

/// One row per sweep level.
pub fn regime_table_csv(report: &SweepReport) -> String {
    let mut out = String::from(
        "level_index,level,eps,tau,status,steps,max_displacement,energy_drop,reference_distance\n",
    );
    for l in &report.levels {
        let status = match l.status {
            LevelStatus::Ok => "ok",
            LevelStatus::Failed { .. } => "failed",
        };
        let reference = l.reference_distance.map(fmt_num).unwrap_or_default();
        let _ = writeln!(
            out,
            "{},{},{},{},{status},{},{},{},{reference}",
            l.index,
            fmt_num(l.level),
            fmt_num(l.eps),
            fmt_num(l.tau),
            l.steps,
            fmt_num(l.max_displacement),
            fmt_num(l.energy_drop),
        );
    }
    out
}

pub fn to_json<T: Serialize>(value: &T) -> Result<String> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    Ok(s)
}

pub fn write_text(path: &Path, contents: &str) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    fs::write(path, contents)?;
    Ok(())
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    write_text(path, &to_json(value)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::energy::EnergySpec;
    use crate::metric::{Point, SpaceDescriptor};
    use crate::scheme::{run_scheme, SchemeParams};

    #[test]
    fn trajectory_table_layout() {
        let spec = EnergySpec::quadratic(
            SpaceDescriptor::euclidean(2),
            vec![1.0, 1.0],
            vec![0.0, 0.0],
        )
        .unwrap();
        let params =
            SchemeParams::new(&spec, 1.0, 0.1, 0.3, Point::new(vec![1.0, 0.0]).unwrap()).unwrap();
        let traj = run_scheme(&spec, &params).unwrap();
        let csv = trajectory_csv(&traj);
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], "i,t,x0,x1,energy,step_distance");
        assert_eq!(lines.len(), 1 + 4);
        assert!(lines[1].starts_with("0,0.0000000000000000e0,1.0000000000000000e0,"));
        assert!(!csv.contains('\r'));
        assert!(lines.iter().all(|l| l.split(',').count() == 6));
    }

    #[test]
    fn numbers_round_trip() {
        for x in [0.1, 1.0 / 3.0, -2.5e-300, 12345.678] {
            assert_eq!(fmt_num(x).parse::<f64>().unwrap(), x);
        }
    }
}
