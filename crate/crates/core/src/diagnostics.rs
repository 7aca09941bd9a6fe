//! Checks run on finished trajectories: the De Giorgi dissipation identity,
//! the uniform a-priori bounds, metric derivatives, and the
//! curve-of-maximal-slope inequality.

use rayon::prelude::*;
use serde::Serialize;

use crate::energy::{EnergySpec, WellPosednessCertificate, NOMINAL_EPS};
use crate::error::{Error, Result};
use crate::metric::{Point, SpaceDescriptor};
use crate::scheme::{DiscreteTrajectory, SchemeParams, VariationalInterpolant};
use crate::slope::{estimate_slope, SlopeOptions};

/// Both sides of `φ(u^i) - φ(u^j) = ½∫|u'|² + ½∫G²` over `[iτ, jτ]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DissipationReport {
    pub i: usize,
    pub j: usize,
    pub lhs: f64,
    pub velocity_integral: f64,
    pub g_integral: f64,
    pub residual: f64,
}

/// Per-step contributions `(½ d²/τ, ½∫G²)`.
fn step_terms(
    traj: &DiscreteTrajectory,
    interp: &VariationalInterpolant,
    i: usize,
) -> Result<(f64, f64)> {
    let step = interp.step(i)?;
    let d = traj.step_distances[i];
    let velocity = 0.5 * d * d / traj.tau;
    let g: f64 = step
        .weights
        .iter()
        .zip(&step.g_values)
        .map(|(w, g)| w * g * g)
        .sum();
    Ok((velocity, 0.5 * g))
}

pub fn dissipation_identity(
    traj: &DiscreteTrajectory,
    interp: &VariationalInterpolant,
    i: usize,
    j: usize,
) -> Result<DissipationReport> {
    if !(i < j && j <= traj.steps()) {
        return Err(Error::InvalidInput(format!(
            "dissipation needs i < j <= N, got i={i}, j={j}, N={}",
            traj.steps()
        )));
    }
    let (mut velocity_integral, mut g_integral) = (0.0, 0.0);
    for k in i..j {
        let (v, g) = step_terms(traj, interp, k)?;
        velocity_integral += v;
        g_integral += g;
    }
    let lhs = traj.step_energies[i] - traj.step_energies[j];
    Ok(DissipationReport {
        i,
        j,
        lhs,
        velocity_integral,
        g_integral,
        residual: lhs - velocity_integral - g_integral,
    })
}

/// The identity and the split bounds `½∫|u'|² ≤ lhs`, `½∫G² ≤ lhs` over
/// every pair `i < j`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DissipationSummary {
    pub pairs_checked: usize,
    pub max_abs_residual: f64,
    pub worst_pair: (usize, usize),
    /// Smallest `lhs - velocity_integral` over all pairs.
    pub velocity_margin: f64,
    /// Smallest `lhs - g_integral` over all pairs.
    pub g_margin: f64,
    pub tolerance: f64,
    pub velocity_bound_ok: bool,
    pub g_bound_ok: bool,
    /// The full-run identity `(0, N)`.
    pub full_run: DissipationReport,
}

impl DissipationSummary {
    pub fn identity_ok(&self, residual_tol: f64) -> bool {
        self.max_abs_residual < residual_tol
    }
}

/// All-pairs scan in `O(N²)` from prefix sums. Rounding in the sums is far
/// below the tolerances used on it.
pub fn dissipation_all_pairs(
    traj: &DiscreteTrajectory,
    interp: &VariationalInterpolant,
    tolerance: f64,
) -> Result<DissipationSummary> {
    let n = traj.steps();
    if n == 0 {
        return Err(Error::InvalidInput("trajectory has no steps".into()));
    }
    let mut vel = vec![0.0; n + 1];
    let mut g = vec![0.0; n + 1];
    for k in 0..n {
        let (v, gg) = step_terms(traj, interp, k)?;
        vel[k + 1] = vel[k] + v;
        g[k + 1] = g[k] + gg;
    }
    let e = &traj.step_energies;
    let rows: Vec<(f64, (usize, usize), f64, f64)> = (0..n)
        .into_par_iter()
        .map(|i| {
            let mut worst = (0.0f64, (i, i + 1));
            let (mut vm, mut gm) = (f64::INFINITY, f64::INFINITY);
            for j in i + 1..=n {
                let lhs = e[i] - e[j];
                let v = vel[j] - vel[i];
                let gg = g[j] - g[i];
                let r = (lhs - v - gg).abs();
                if r > worst.0 {
                    worst = (r, (i, j));
                }
                vm = vm.min(lhs - v);
                gm = gm.min(lhs - gg);
            }
            (worst.0, worst.1, vm, gm)
        })
        .collect();
    let (mut max_abs_residual, mut worst_pair) = (0.0, (0, 1));
    let (mut velocity_margin, mut g_margin) = (f64::INFINITY, f64::INFINITY);
    for (r, pair, vm, gm) in rows {
        if r > max_abs_residual {
            max_abs_residual = r;
            worst_pair = pair;
        }
        velocity_margin = velocity_margin.min(vm);
        g_margin = g_margin.min(gm);
    }
    Ok(DissipationSummary {
        pairs_checked: n * (n + 1) / 2,
        max_abs_residual,
        worst_pair,
        velocity_margin,
        g_margin,
        tolerance,
        velocity_bound_ok: velocity_margin >= -tolerance,
        g_bound_ok: g_margin >= -tolerance,
        full_run: dissipation_identity(traj, interp, 0, n)?,
    })
}

/// Quantities bounded by the constant `C` of the a-priori estimates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct AprioriComponents {
    /// `max_N d²(u^N, u*)`.
    pub max_distance_sq: f64,
    /// `max_N |φ_ε(u^N)|`.
    pub max_abs_energy: f64,
    /// `max_t d²(ũ(t), ū(t))/τ` over the quadrature nodes.
    pub tilde_closeness: f64,
    /// `½∫|u'|²` over the run.
    pub velocity_energy: f64,
    /// `½∫G²` over the run.
    pub g_energy: f64,
    /// `φ_ε(u^0) - φ_ε(u^N)` at the last step.
    pub energy_drop: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AprioriReport {
    /// Smallest constant making every bound hold, at least `max(S, S')`.
    pub c: f64,
    pub components: AprioriComponents,
    pub dist_bound_ok: bool,
    pub energy_bound_ok: bool,
    pub tilde_closeness_ok: bool,
    /// `½∫|u'|² ≤ φ(u^0) - φ(u^N) ≤ C` for every `N`; worst margin of the
    /// first inequality alongside. The halves are those of the dissipation
    /// identity; without them the bound fails already for a quadratic.
    pub velocity_energy_ok: bool,
    pub velocity_energy_margin: f64,
    /// `½∫G² ≤ φ(u^0) - φ(u^N) ≤ C` for every `N`.
    pub g_energy_ok: bool,
    pub g_energy_margin: f64,
    /// The discrete Gronwall-type step bound
    /// `d²(u^i, u*) ≤ 2S' + 2τ*S - 2τ*C* + (4/τ*) Σ_{j≤i} τ d²(u^j, u*)`.
    pub step_bound_ok: Option<bool>,
    pub step_bound_margin: Option<f64>,
    pub tolerance: f64,
}

/// Evaluate the a-priori estimates on one run. The step bound needs `C*`
/// and is skipped without a certificate.
pub fn apriori_bounds(
    spec: &EnergySpec,
    traj: &DiscreteTrajectory,
    interp: &VariationalInterpolant,
    params: &SchemeParams,
    certificate: Option<&WellPosednessCertificate>,
    tolerance: f64,
) -> Result<AprioriReport> {
    let space = spec.domain();
    let base = space.base_point();
    let n = traj.steps();
    let dist_sq: Vec<f64> = traj
        .points
        .iter()
        .map(|p| space.squared_distance(p, base))
        .collect::<Result<_>>()?;
    let max_distance_sq = dist_sq.iter().cloned().fold(0.0, f64::max);
    let max_abs_energy = traj
        .step_energies
        .iter()
        .map(|e| e.abs())
        .fold(0.0, f64::max);

    let mut tilde_closeness = 0.0f64;
    let (mut vel, mut g) = (0.0, 0.0);
    let (mut velocity_energy_margin, mut g_energy_margin) = (f64::INFINITY, f64::INFINITY);
    let e0 = traj.step_energies[0];
    for i in 0..n {
        let step = interp.step(i)?;
        let next = &traj.points[i + 1];
        for p in &step.points {
            tilde_closeness = tilde_closeness.max(space.squared_distance(p, next)? / traj.tau);
        }
        let (v, gg) = step_terms(traj, interp, i)?;
        vel += v;
        g += gg;
        let drop = e0 - traj.step_energies[i + 1];
        velocity_energy_margin = velocity_energy_margin.min(drop - vel);
        g_energy_margin = g_energy_margin.min(drop - g);
    }
    let energy_drop = e0 - traj.step_energies[n];
    let components = AprioriComponents {
        max_distance_sq,
        max_abs_energy,
        tilde_closeness,
        velocity_energy: vel,
        g_energy: g,
        energy_drop,
    };
    let c = [
        params.initial_energy_bound,
        params.initial_distance_bound,
        max_distance_sq,
        max_abs_energy,
        tilde_closeness,
        vel,
        g,
        energy_drop,
    ]
    .into_iter()
    .fold(0.0, f64::max);

    let (step_bound_ok, step_bound_margin) = match certificate {
        Some(cert) => {
            let ts = cert.tau_star;
            let constant = 2.0 * params.initial_distance_bound
                + 2.0 * ts * params.initial_energy_bound
                - 2.0 * ts * cert.c_star;
            let mut sum = 0.0;
            let mut margin = f64::INFINITY;
            for (i, d2) in dist_sq.iter().enumerate() {
                if i > 0 {
                    sum += traj.tau * d2;
                }
                margin = margin.min(constant + 4.0 / ts * sum - d2);
            }
            (Some(margin >= -tolerance), Some(margin))
        }
        None => (None, None),
    };

    Ok(AprioriReport {
        c,
        components,
        dist_bound_ok: max_distance_sq <= c,
        energy_bound_ok: max_abs_energy <= c,
        tilde_closeness_ok: tilde_closeness <= c,
        velocity_energy_ok: velocity_energy_margin >= -tolerance && energy_drop <= c,
        velocity_energy_margin,
        g_energy_ok: g_energy_margin >= -tolerance && energy_drop <= c,
        g_energy_margin,
        step_bound_ok,
        step_bound_margin,
        tolerance,
    })
}

/// Boundedness of the empirical constant along a τ-refinement: each level's
/// `C` at most twice the previous one. Returns the flag and the largest
/// successive ratio.
pub fn refinement_bounded(constants: &[f64]) -> (bool, f64) {
    let mut worst = 0.0f64;
    for w in constants.windows(2) {
        let ratio = if w[0] > 0.0 {
            w[1] / w[0]
        } else if w[1] > 0.0 {
            f64::INFINITY
        } else {
            1.0
        };
        worst = worst.max(ratio);
    }
    (worst <= 2.0, worst)
}

fn check_times(samples: &[(f64, Point)]) -> Result<()> {
    for w in samples.windows(2) {
        if w[1].0.partial_cmp(&w[0].0) != Some(std::cmp::Ordering::Greater) {
            return Err(Error::DuplicateTimes(w[1].0));
        }
    }
    Ok(())
}

/// Metric-derivative estimate at every sample time: symmetric quotients in
/// the interior, one-sided at the ends.
pub fn metric_derivative(
    samples: &[(f64, Point)],
    space: &SpaceDescriptor,
) -> Result<Vec<(f64, f64)>> {
    if samples.len() < 3 {
        return Err(Error::InvalidInput(
            "metric derivative needs at least 3 samples".into(),
        ));
    }
    check_times(samples)?;
    let last = samples.len() - 1;
    (0..=last)
        .map(|k| {
            let (a, b) = match k {
                0 => (0, 1),
                k if k == last => (last - 1, last),
                k => (k - 1, k + 1),
            };
            let d = space.distance(&samples[a].1, &samples[b].1)?;
            Ok((samples[k].0, d / (samples[b].0 - samples[a].0)))
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct IntervalSlack {
    pub s: f64,
    pub t: f64,
    /// `φ(u(s)) - φ(u(t))`.
    pub lhs: f64,
    /// `½∫|u'|² + ½∫|∂φ|²(u)`.
    pub rhs: f64,
    pub slack: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MaximalSlopeReport {
    pub sample_times: Vec<f64>,
    pub varphi_values: Vec<f64>,
    pub metric_derivative: Vec<f64>,
    pub slopes: Vec<f64>,
    /// Sample indices whose slope estimate did not converge; they are left
    /// out of the integrals.
    pub unconverged_nodes: Vec<usize>,
    pub per_interval: Vec<IntervalSlack>,
    pub min_slack: f64,
    pub max_abs_slack: f64,
    pub monotone_ok: bool,
    pub check_tol: f64,
    pub passed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MaximalSlopeOptions {
    pub slope: SlopeOptions,
    /// Intervals `(s, t)`; endpoints snap to the nearest sample times.
    pub intervals: Vec<(f64, f64)>,
    /// Allowed negative slack.
    pub check_tol: f64,
    /// Allowed increase of `φ(u(t))` between samples.
    pub monotone_tol: f64,
}

impl MaximalSlopeOptions {
    /// `pieces` equal intervals covering `[0, horizon]`, plus the whole
    /// range.
    pub fn uniform(horizon: f64, pieces: usize, check_tol: f64) -> Self {
        let mut intervals: Vec<(f64, f64)> = (0..pieces)
            .map(|k| {
                (
                    horizon * k as f64 / pieces as f64,
                    horizon * (k + 1) as f64 / pieces as f64,
                )
            })
            .collect();
        intervals.push((0.0, horizon));
        Self {
            slope: SlopeOptions::default(),
            intervals,
            check_tol,
            monotone_tol: 1e-9,
        }
    }
}

fn nearest_index(times: &[f64], t: f64) -> usize {
    let k = times.partition_point(|x| *x < t);
    if k == 0 {
        0
    } else if k == times.len() {
        times.len() - 1
    } else if (times[k] - t).abs() < (t - times[k - 1]).abs() {
        k
    } else {
        k - 1
    }
}

/// Test `φ(u(s)) - φ(u(t)) ≥ ½∫|u'|² + ½∫|∂φ|²(u)` on a sampled curve.
/// `limit` must be ε-independent; it is evaluated at a nominal ε.
pub fn maximal_slope_check(
    limit: &EnergySpec,
    curve: &[(f64, Point)],
    options: &MaximalSlopeOptions,
) -> Result<MaximalSlopeReport> {
    let space = limit.domain();
    let md = metric_derivative(curve, space)?;
    let times: Vec<f64> = curve.iter().map(|(t, _)| *t).collect();
    let varphi_values = curve
        .iter()
        .map(|(_, p)| limit.eval(NOMINAL_EPS, p))
        .collect::<Result<Vec<_>>>()?;
    let estimates = curve
        .par_iter()
        .map(|(_, p)| estimate_slope(limit, NOMINAL_EPS, p, &options.slope))
        .collect::<Result<Vec<_>>>()?;
    let slopes: Vec<f64> = estimates.iter().map(|e| e.value.as_f64()).collect();
    let unconverged_nodes: Vec<usize> = estimates
        .iter()
        .enumerate()
        .filter(|(_, e)| !e.converged)
        .map(|(k, _)| k)
        .collect();
    let usable: Vec<bool> = estimates.iter().map(|e| e.converged).collect();
    let velocity: Vec<f64> = md.iter().map(|(_, v)| *v).collect();

    // trapezoid rule over usable samples
    let integrate = |a: usize, b: usize, f: &dyn Fn(usize) -> f64| -> f64 {
        let idx: Vec<usize> = (a..=b).filter(|&k| usable[k]).collect();
        idx.windows(2)
            .map(|w| 0.5 * (times[w[1]] - times[w[0]]) * (f(w[0]) + f(w[1])))
            .sum()
    };
    let mut per_interval = Vec::with_capacity(options.intervals.len());
    for &(s, t) in &options.intervals {
        let (a, b) = (nearest_index(&times, s), nearest_index(&times, t));
        if a >= b {
            return Err(Error::InvalidInput(format!(
                "interval ({s}, {t}) does not span two samples"
            )));
        }
        let lhs = varphi_values[a] - varphi_values[b];
        let rhs = 0.5 * integrate(a, b, &|k| velocity[k] * velocity[k])
            + 0.5 * integrate(a, b, &|k| slopes[k] * slopes[k]);
        per_interval.push(IntervalSlack {
            s: times[a],
            t: times[b],
            lhs,
            rhs,
            slack: lhs - rhs,
        });
    }
    let min_slack = per_interval
        .iter()
        .map(|x| x.slack)
        .fold(f64::INFINITY, f64::min);
    let max_abs_slack = per_interval
        .iter()
        .map(|x| x.slack.abs())
        .fold(0.0, f64::max);
    let monotone_ok = varphi_values
        .windows(2)
        .all(|w| w[1] <= w[0] + options.monotone_tol);
    Ok(MaximalSlopeReport {
        sample_times: times,
        varphi_values,
        metric_derivative: velocity,
        slopes,
        unconverged_nodes,
        per_interval,
        min_slack,
        max_abs_slack,
        monotone_ok,
        check_tol: options.check_tol,
        passed: monotone_ok && min_slack >= -options.check_tol,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MonotonicityReport {
    pub ok: bool,
    /// `max_t φ(u(t)) - φ(u(0))`.
    pub worst_margin: f64,
}

/// `φ(u(t)) ≤ φ(u(0)) + check_tol` at every sample.
pub fn energy_monotonicity_along_limit(
    limit: &EnergySpec,
    curve: &[(f64, Point)],
    check_tol: f64,
) -> Result<MonotonicityReport> {
    let (_, first) = curve
        .first()
        .ok_or_else(|| Error::InvalidInput("curve is empty".into()))?;
    let e0 = limit.eval(NOMINAL_EPS, first)?;
    let mut worst_margin = 0.0f64;
    for (_, p) in curve {
        worst_margin = worst_margin.max(limit.eval(NOMINAL_EPS, p)? - e0);
    }
    Ok(MonotonicityReport {
        ok: worst_margin <= check_tol,
        worst_margin,
    })
}
