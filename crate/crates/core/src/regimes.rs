//! Joint limits `ε, τ → 0` under a coupling law.
//!
//! A sweep runs the scheme once per level of a decreasing grid, with the
//! other scale slaved to the level by `τ = λ ε^α` or `ε = λ τ^α`, and then
//! asks whether the piecewise-constant interpolants settle down. Comparing
//! couplings side by side exposes the pinning and flowing regimes.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::diagnostics::{maximal_slope_check, MaximalSlopeOptions, MaximalSlopeReport};
use crate::energy::EnergySpec;
use crate::error::{Error, Result};
use crate::metric::Point;
use crate::scheme::{piecewise_constant, run_scheme, DiscreteTrajectory, SchemeParams};
use crate::slope::{check_condition_h, ConditionHReport, HTolerances, SlopeOptions};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "form", rename_all = "snake_case")]
pub enum CouplingLaw {
    /// `τ = λ ε^α`; levels are values of ε.
    TauOfEps { lambda: f64, alpha: f64 },
    /// `ε = λ τ^α`; levels are values of τ.
    EpsOfTau { lambda: f64, alpha: f64 },
}

impl CouplingLaw {
    /// `(ε, τ)` at one level.
    pub fn scales(&self, level: f64) -> (f64, f64) {
        match *self {
            CouplingLaw::TauOfEps { lambda, alpha } => (level, lambda * level.powf(alpha)),
            CouplingLaw::EpsOfTau { lambda, alpha } => (lambda * level.powf(alpha), level),
        }
    }

    pub fn validate(&self, levels: &[f64]) -> Result<()> {
        let (CouplingLaw::TauOfEps { lambda, alpha } | CouplingLaw::EpsOfTau { lambda, alpha }) =
            *self;
        if !(lambda.is_finite() && lambda > 0.0 && alpha.is_finite()) {
            return Err(Error::InvalidInput(
                "coupling needs a positive lambda and a finite alpha".into(),
            ));
        }
        if levels.is_empty() {
            return Err(Error::InvalidInput("level grid is empty".into()));
        }
        if levels.iter().any(|l| !(l.is_finite() && *l > 0.0))
            || levels.windows(2).any(|w| w[1] >= w[0])
        {
            return Err(Error::InvalidInput(
                "levels must be positive and strictly decreasing".into(),
            ));
        }
        for &l in levels {
            let (eps, tau) = self.scales(l);
            if !(eps.is_finite() && eps > 0.0 && tau.is_finite() && tau > 0.0) {
                return Err(Error::InvalidInput(format!(
                    "level {l} gives eps={eps}, tau={tau}"
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum LevelStatus {
    Ok,
    Failed { message: String },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LevelReport {
    pub index: usize,
    pub level: f64,
    pub eps: f64,
    pub tau: f64,
    #[serde(flatten)]
    pub status: LevelStatus,
    pub steps: usize,
    pub final_point: Option<Point>,
    /// `sup_i d(u^i, u^0)`.
    pub max_displacement: f64,
    pub energy_drop: f64,
    pub near_tie_steps: usize,
    /// `sup_t d(ū(t), reference(t))`, when a reference was given.
    pub reference_distance: Option<f64>,
    #[serde(skip)]
    pub trajectory: Option<DiscreteTrajectory>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepReport {
    pub coupling: CouplingLaw,
    pub levels: Vec<LevelReport>,
    /// `sup_t d(ū_k(t), ū_{k+1}(t))` for successive successful levels, on
    /// the node grid of the coarsest level.
    pub pairwise_sup_distances: Vec<f64>,
    pub grid_times: Vec<f64>,
    /// Index of the finest successful level.
    pub limit_candidate: Option<usize>,
    pub sweep_tol: f64,
    pub cauchy_flag: bool,
    /// `reference_distance` of the limit candidate.
    pub comparison_to_reference: Option<f64>,
}

impl SweepReport {
    pub fn limit_trajectory(&self) -> Option<&DiscreteTrajectory> {
        self.limit_candidate
            .and_then(|k| self.levels[k].trajectory.as_ref())
    }

    /// `sup_t d(ū(t), reference(t))` for the limit candidate.
    pub fn compare_to_reference(&self, spec: &EnergySpec, reference: Reference<'_>) -> Result<f64> {
        let traj = self
            .limit_trajectory()
            .ok_or_else(|| Error::InvalidInput("sweep has no successful level".into()))?;
        compare_to_reference(spec, traj, reference)
    }
}

/// A reference curve `t ↦ u(t)` on `[0, T]`.
pub type Reference<'a> = &'a (dyn Fn(f64) -> Point + Sync);

/// Points per step at which `ū` is compared with a reference: both ends of
/// the closed step and its midpoint.
const STEP_SAMPLES: [f64; 3] = [0.0, 0.5, 1.0];

/// `sup_t d(ū(t), reference(t))`, sampled on the closure of every step
/// with `ū ≡ u^{i+1}` there.
pub fn compare_to_reference(
    spec: &EnergySpec,
    traj: &DiscreteTrajectory,
    reference: Reference<'_>,
) -> Result<f64> {
    let space = spec.domain();
    let mut sup = 0.0f64;
    for i in 0..traj.steps() {
        let value = &traj.points[i + 1];
        for s in STEP_SAMPLES {
            let t = (i as f64 + s) * traj.tau;
            sup = sup.max(space.distance(value, &reference(t))?);
        }
    }
    if traj.steps() == 0 {
        sup = space.distance(&traj.points[0], &reference(0.0))?;
    }
    Ok(sup)
}

fn run_level(
    spec: &EnergySpec,
    coupling: &CouplingLaw,
    base: &SchemeParams,
    index: usize,
    level: f64,
    reference: Option<Reference<'_>>,
) -> LevelReport {
    let (eps, tau) = coupling.scales(level);
    let params = SchemeParams {
        eps,
        tau,
        ..base.clone()
    };
    let mut report = LevelReport {
        index,
        level,
        eps,
        tau,
        status: LevelStatus::Ok,
        steps: 0,
        final_point: None,
        max_displacement: 0.0,
        energy_drop: 0.0,
        near_tie_steps: 0,
        reference_distance: None,
        trajectory: None,
    };
    let outcome = run_scheme(spec, &params).and_then(|traj| {
        let space = spec.domain();
        let u0 = &traj.points[0];
        let mut max_displacement = 0.0f64;
        for p in &traj.points {
            max_displacement = max_displacement.max(space.distance(p, u0)?);
        }
        let reference_distance = reference
            .map(|r| compare_to_reference(spec, &traj, r))
            .transpose()?;
        Ok((traj, max_displacement, reference_distance))
    });
    match outcome {
        Ok((traj, max_displacement, reference_distance)) => {
            report.steps = traj.steps();
            report.final_point = traj.points.last().cloned();
            report.max_displacement = max_displacement;
            report.energy_drop = traj.step_energies[0] - traj.step_energies[traj.steps()];
            report.near_tie_steps = traj.near_tie_steps.len();
            report.reference_distance = reference_distance;
            report.trajectory = Some(traj);
        }
        Err(e) => {
            report.status = LevelStatus::Failed {
                message: e.to_string(),
            }
        }
    }
    report
}

/// Run one scheme per level (concurrently) and diagnose convergence. Failed
/// levels are reported and skipped.
pub fn run_sweep(
    spec: &EnergySpec,
    coupling: &CouplingLaw,
    levels: &[f64],
    base: &SchemeParams,
    sweep_tol: f64,
    reference: Option<Reference<'_>>,
) -> Result<SweepReport> {
    coupling.validate(levels)?;
    let reports: Vec<LevelReport> = levels
        .par_iter()
        .enumerate()
        .map(|(k, &level)| run_level(spec, coupling, base, k, level, reference))
        .collect();

    let ok: Vec<&DiscreteTrajectory> = reports
        .iter()
        .filter_map(|r| r.trajectory.as_ref())
        .collect();
    let grid_times: Vec<f64> = match ok.first() {
        Some(coarse) => (0..=coarse.steps())
            .map(|m| coarse.time(m))
            .filter(|t| ok.iter().all(|tr| *t <= tr.final_time() * (1.0 + 1e-12)))
            .collect(),
        None => Vec::new(),
    };
    let space = spec.domain();
    let mut pairwise_sup_distances = Vec::new();
    for w in ok.windows(2) {
        let mut sup = 0.0f64;
        for &t in &grid_times {
            let a = piecewise_constant(w[0], t)?;
            let b = piecewise_constant(w[1], t)?;
            sup = sup.max(space.distance(&a, &b)?);
        }
        pairwise_sup_distances.push(sup);
    }
    let cauchy_flag = !pairwise_sup_distances.is_empty()
        && pairwise_sup_distances.windows(2).all(|w| w[1] <= w[0])
        && pairwise_sup_distances
            .last()
            .is_some_and(|d| *d < sweep_tol);
    let limit_candidate = reports.iter().rposition(|r| r.trajectory.is_some());
    let comparison_to_reference = limit_candidate.and_then(|k| reports[k].reference_distance);
    Ok(SweepReport {
        coupling: *coupling,
        levels: reports,
        pairwise_sup_distances,
        grid_times,
        limit_candidate,
        sweep_tol,
        cauchy_flag,
        comparison_to_reference,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PipelineOptions {
    pub sweep_tol: f64,
    pub max_slope: MaximalSlopeOptions,
    pub h_tolerances: HTolerances,
    /// Skip the condition-(H) evidence, for families known to violate it.
    pub waive_condition_h: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MaximalSlopePipelineReport {
    pub sweep: SweepReport,
    pub check: MaximalSlopeReport,
    /// Sequence `v_k = ū_k(T/2)` tested for (H) against the limit
    /// candidate's value.
    pub condition_h: Option<ConditionHReport>,
    pub condition_h_error: Option<String>,
    pub warning: Option<String>,
}

/// Sweep, take the finest level as the limit candidate, and test it as a
/// curve of maximal slope for the Γ-limit.
pub fn maximal_slope_pipeline(
    spec: &EnergySpec,
    coupling: &CouplingLaw,
    levels: &[f64],
    base: &SchemeParams,
    options: &PipelineOptions,
) -> Result<MaximalSlopePipelineReport> {
    let limit = spec.gamma_limit()?;
    let sweep = run_sweep(spec, coupling, levels, base, options.sweep_tol, None)?;
    let traj = sweep
        .limit_trajectory()
        .ok_or_else(|| Error::InvalidInput("sweep has no successful level".into()))?;
    let curve: Vec<(f64, Point)> = traj
        .points
        .iter()
        .enumerate()
        .map(|(i, p)| (traj.time(i), p.clone()))
        .collect();
    let check = maximal_slope_check(&limit, &curve, &options.max_slope)?;

    let (mut condition_h, mut condition_h_error, mut warning) = (None, None, None);
    if options.waive_condition_h {
        warning = Some(format!(
            "condition (H) waived for the {} family; the maximal-slope conclusion is not \
             backed by (H) evidence",
            spec.kind_name()
        ));
    } else {
        let half = 0.5 * base.horizon;
        let mut sequence = Vec::new();
        for lvl in sweep.levels.iter().filter(|l| l.trajectory.is_some()) {
            let tr = lvl.trajectory.as_ref().expect("filtered");
            sequence.push((lvl.eps, piecewise_constant(tr, half)?));
        }
        let limit_v = piecewise_constant(traj, half)?;
        match check_condition_h(
            spec,
            &limit,
            &sequence,
            &limit_v,
            options.h_tolerances,
            &SlopeOptions::default(),
        ) {
            Ok(r) => condition_h = Some(r),
            Err(e @ Error::SequenceNotConvergent(_)) => condition_h_error = Some(e.to_string()),
            Err(e) => return Err(e),
        }
    }
    Ok(MaximalSlopePipelineReport {
        sweep,
        check,
        condition_h,
        condition_h_error,
        warning,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metric::SpaceDescriptor;

    fn quad1() -> EnergySpec {
        EnergySpec::quadratic(SpaceDescriptor::euclidean(1), vec![1.0], vec![0.0]).unwrap()
    }

    fn p1(x: f64) -> Point {
        Point::scalar(x).unwrap()
    }

    fn base(spec: &EnergySpec) -> SchemeParams {
        SchemeParams::new(spec, 1.0, 0.01, 1.0, p1(1.0)).unwrap()
    }

    #[test]
    fn coupling_scales() {
        let c = CouplingLaw::TauOfEps {
            lambda: 1.0,
            alpha: 2.0,
        };
        assert_eq!(c.scales(0.1), (0.1, 0.1f64.powf(2.0)));
        let c = CouplingLaw::EpsOfTau {
            lambda: 2.0,
            alpha: 1.0,
        };
        assert_eq!(c.scales(0.01), (0.02, 0.01));
        assert!(c.validate(&[]).is_err());
        assert!(c.validate(&[0.1, 0.2]).is_err());
        let bad = CouplingLaw::EpsOfTau {
            lambda: -1.0,
            alpha: 1.0,
        };
        assert!(bad.validate(&[0.1]).is_err());
    }

    #[test]
    fn quadratic_sweep_converges_to_the_flow() {
        let spec = quad1();
        let coupling = CouplingLaw::EpsOfTau {
            lambda: 1.0,
            alpha: 1.0,
        };
        let levels = [0.1, 0.05, 0.025, 0.0125];
        let flow = spec.quadratic_flow(&p1(1.0)).unwrap();
        let reference = |t: f64| flow.at(t);
        let r = run_sweep(
            &spec,
            &coupling,
            &levels,
            &base(&spec),
            0.05,
            Some(&reference),
        )
        .unwrap();
        assert_eq!(r.levels.len(), 4);
        assert_eq!(r.pairwise_sup_distances.len(), 3);
        assert!(r.cauchy_flag, "{:?}", r.pairwise_sup_distances);
        assert_eq!(r.limit_candidate, Some(3));
        let errs: Vec<f64> = r
            .levels
            .iter()
            .map(|l| l.reference_distance.unwrap())
            .collect();
        for w in errs.windows(2) {
            let ratio = w[0] / w[1];
            assert!((1.8..=2.2).contains(&ratio), "{errs:?}");
        }
        assert!(r.comparison_to_reference.unwrap() <= 5.0 * 0.0125);
    }

    #[test]
    fn eps_independent_levels_match_single_runs() {
        let spec = quad1();
        let coupling = CouplingLaw::TauOfEps {
            lambda: 0.1,
            alpha: 1.0,
        };
        let levels = [0.5, 0.25];
        let r = run_sweep(&spec, &coupling, &levels, &base(&spec), 1.0, None).unwrap();
        for lvl in &r.levels {
            let params = SchemeParams {
                eps: lvl.eps,
                tau: lvl.tau,
                ..base(&spec)
            };
            let single = run_scheme(&spec, &params).unwrap();
            assert_eq!(lvl.trajectory.as_ref().unwrap().points, single.points);
        }
    }

    #[test]
    fn failing_levels_do_not_stop_the_sweep() {
        let spec = quad1();
        // tau = 0.2 violates tau < tau*/8 at the first level only
        let coupling = CouplingLaw::EpsOfTau {
            lambda: 1.0,
            alpha: 1.0,
        };
        let r = run_sweep(
            &spec,
            &coupling,
            &[0.2, 0.05, 0.025],
            &base(&spec),
            1.0,
            None,
        )
        .unwrap();
        assert!(matches!(r.levels[0].status, LevelStatus::Failed { .. }));
        assert!(r.levels[1].trajectory.is_some());
        assert_eq!(r.pairwise_sup_distances.len(), 1);
        assert_eq!(r.limit_candidate, Some(2));
    }

    #[test]
    fn reference_comparison_examples() {
        let spec = quad1();
        let params = SchemeParams::new(&spec, 1.0, 0.1, 0.5, p1(0.0)).unwrap();
        let traj = run_scheme(&spec, &params).unwrap();
        let zero = |_t: f64| p1(0.0);
        assert_eq!(compare_to_reference(&spec, &traj, &zero).unwrap(), 0.0);
        let shifted = |_t: f64| p1(0.25);
        assert_eq!(compare_to_reference(&spec, &traj, &shifted).unwrap(), 0.25);

        let params = SchemeParams::new(&spec, 1.0, 1e-3, 1.0, p1(1.0)).unwrap();
        let traj = run_scheme(&spec, &params).unwrap();
        let flow = |t: f64| p1((-t).exp());
        assert!(compare_to_reference(&spec, &traj, &flow).unwrap() < 5e-3);
    }

    #[test]
    fn pipeline_on_the_quadratic_family() {
        let spec = quad1();
        let coupling = CouplingLaw::EpsOfTau {
            lambda: 1.0,
            alpha: 1.0,
        };
        let options = PipelineOptions {
            sweep_tol: 0.05,
            max_slope: MaximalSlopeOptions::uniform(1.0, 10, 5e-3),
            h_tolerances: HTolerances::default(),
            waive_condition_h: false,
        };
        let r = maximal_slope_pipeline(
            &spec,
            &coupling,
            &[0.01, 0.005, 0.0025],
            &base(&spec),
            &options,
        )
        .unwrap();
        assert!(r.check.passed, "{}", r.check.min_slack);
        assert!(r.check.max_abs_slack <= 5e-3);
        assert!(r.condition_h.as_ref().unwrap().passed);
        assert!(r.warning.is_none());
    }
}
