//! The minimizing-movement iteration and its interpolants.
//!
//! A run produces the discrete points `u^0..u^N`. From them we read off the
//! piecewise-constant interpolant `ū` (right-continuous on each step), the
//! discrete velocity `d(u^{i+1}, u^i)/τ`, and De Giorgi's variational
//! interpolant `ũ(t) ∈ J_{ε, t-iτ}(u^i)` together with
//! `G(t) = d(ũ(t), u^i)/(t - iτ)`.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::energy::EnergySpec;
use crate::error::{Error, Result};
use crate::metric::Point;
use crate::prox::{prox, ProxResult, ProxSettings};
use crate::quadrature::{gauss_legendre, MappedRule};

/// Relative tolerance under which a time is treated as a step node.
const NODE_SNAP: f64 = 1e-9;

fn default_nodes() -> usize {
    8
}

fn default_tau_star() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SchemeParams {
    pub eps: f64,
    pub tau: f64,
    pub horizon: f64,
    pub initial_point: Point,
    /// `S`: bound on `|φ_ε(u^0)|`.
    pub initial_energy_bound: f64,
    /// `S'`: bound on `d²(u^0, u*)`.
    pub initial_distance_bound: f64,
    #[serde(default)]
    pub prox: ProxSettings,
    #[serde(default = "default_nodes")]
    pub quadrature_nodes_per_step: usize,
    /// `τ*` of the coercivity bound. The step must satisfy `τ < τ*/8`.
    #[serde(default = "default_tau_star")]
    pub tau_star: f64,
}

impl SchemeParams {
    /// Parameters with `S`, `S'` set to the values attained at `u^0`.
    pub fn new(
        spec: &EnergySpec,
        eps: f64,
        tau: f64,
        horizon: f64,
        initial_point: Point,
    ) -> Result<Self> {
        let energy = spec.eval(eps, &initial_point)?;
        let dist = spec
            .domain()
            .squared_distance(&initial_point, spec.domain().base_point())?;
        Ok(Self {
            eps,
            tau,
            horizon,
            initial_point,
            initial_energy_bound: energy.abs(),
            initial_distance_bound: dist,
            prox: ProxSettings::default(),
            quadrature_nodes_per_step: default_nodes(),
            tau_star: default_tau_star(),
        })
    }

    pub fn with_tau_star(mut self, tau_star: f64) -> Self {
        self.tau_star = tau_star;
        self
    }

    pub fn with_prox(mut self, prox: ProxSettings) -> Self {
        self.prox = prox;
        self
    }

    /// Number of steps: `ceil(T/τ)`, with `T/τ` within `1e-9` of an integer
    /// rounded instead.
    pub fn steps(&self) -> usize {
        let ratio = self.horizon / self.tau;
        let r = ratio.round();
        if (ratio - r).abs() <= NODE_SNAP * r.max(1.0) {
            r as usize
        } else {
            ratio.ceil() as usize
        }
    }

    /// Prox settings with `τ*` filled in.
    pub fn step_settings(&self) -> ProxSettings {
        ProxSettings {
            tau_star: Some(self.tau_star),
            ..self.prox.clone()
        }
    }

    pub fn validate(&self, spec: &EnergySpec) -> Result<()> {
        for (name, v) in [
            ("eps", self.eps),
            ("tau", self.tau),
            ("horizon", self.horizon),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::InvalidInput(format!(
                    "{name} must be positive, got {v}"
                )));
            }
        }
        if !(self.tau_star.is_finite() && self.tau_star > 0.0) {
            return Err(Error::InvalidInput("tau_star must be positive".into()));
        }
        if self.tau >= self.tau_star / 8.0 {
            return Err(Error::TimeStep {
                tau: self.tau,
                tau_star: self.tau_star,
            });
        }
        if self.quadrature_nodes_per_step == 0 {
            return Err(Error::InvalidInput(
                "quadrature_nodes_per_step must be >= 1".into(),
            ));
        }
        self.prox.validate()?;
        let space = spec.domain();
        let dist = space.squared_distance(&self.initial_point, space.base_point())?;
        if dist > self.initial_distance_bound {
            return Err(Error::InvalidInput(format!(
                "d^2(u0, u*) = {dist} exceeds the initial distance bound S' = {}",
                self.initial_distance_bound
            )));
        }
        let energy = spec.eval(self.eps, &self.initial_point)?;
        if energy.abs() > self.initial_energy_bound {
            return Err(Error::InvalidInput(format!(
                "|phi_eps(u0)| = {} exceeds the initial energy bound S = {}",
                energy.abs(),
                self.initial_energy_bound
            )));
        }
        Ok(())
    }
}

/// The points `u^0..u^N` of one run.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DiscreteTrajectory {
    pub eps: f64,
    pub tau: f64,
    pub horizon: f64,
    pub points: Vec<Point>,
    /// `d(u^{i+1}, u^i)`, length `N`.
    pub step_distances: Vec<f64>,
    /// `φ_ε(u^i)`, length `N + 1`.
    pub step_energies: Vec<f64>,
    /// Steps whose prox had more than one near-optimal minimizer.
    pub near_tie_steps: Vec<usize>,
    pub certified_exact: bool,
}

impl DiscreteTrajectory {
    pub fn steps(&self) -> usize {
        self.points.len() - 1
    }

    pub fn final_time(&self) -> f64 {
        self.steps() as f64 * self.tau
    }

    pub fn time(&self, i: usize) -> f64 {
        i as f64 * self.tau
    }

    /// Index `k` with `t ∈ ((k-1)τ, kτ]` (0 at `t = 0`), and whether `t`
    /// sits on the node `kτ`.
    fn locate(&self, t: f64) -> Result<(usize, bool)> {
        let max = self.final_time();
        if !(t.is_finite() && t >= 0.0 && t <= max * (1.0 + NODE_SNAP)) {
            return Err(Error::OutOfRange { t, max });
        }
        if t == 0.0 {
            return Ok((0, true));
        }
        let s = t / self.tau;
        let r = s.round();
        if r >= 1.0 && (s - r).abs() <= NODE_SNAP * r {
            return Ok(((r as usize).min(self.steps()), true));
        }
        Ok(((s.ceil() as usize).min(self.steps()), false))
    }

    /// Step `i` with `t ∈ (iτ, (i+1)τ]`, and `t - iτ` (exactly `τ` on a
    /// node).
    pub fn step_containing(&self, t: f64) -> Result<(usize, f64)> {
        let (k, on_node) = self.locate(t)?;
        if k == 0 {
            return Err(Error::OutOfRange {
                t,
                max: self.final_time(),
            });
        }
        let i = k - 1;
        let delta = if on_node { self.tau } else { t - self.time(i) };
        Ok((i, delta))
    }
}

/// Run the scheme `u^{i+1} = prox(φ_ε, τ, u^i)` for `N = ceil(T/τ)` steps.
pub fn run_scheme(spec: &EnergySpec, params: &SchemeParams) -> Result<DiscreteTrajectory> {
    params.validate(spec)?;
    let settings = params.step_settings();
    let n = params.steps();
    let mut points = Vec::with_capacity(n + 1);
    let mut step_distances = Vec::with_capacity(n);
    let mut step_energies = Vec::with_capacity(n + 1);
    let mut near_tie_steps = Vec::new();
    let mut certified_exact = true;

    points.push(params.initial_point.clone());
    step_energies.push(spec.eval(params.eps, &params.initial_point)?);
    for i in 0..n {
        let r = prox(spec, params.eps, params.tau, &points[i], &settings).map_err(|e| {
            Error::SchemeStep {
                step: i,
                source: Box::new(e),
            }
        })?;
        if r.near_tie {
            near_tie_steps.push(i);
        }
        certified_exact &= r.certified_exact;
        step_distances.push(r.moved_distance);
        step_energies.push(r.energy_at_min);
        points.push(r.minimizer);
    }
    Ok(DiscreteTrajectory {
        eps: params.eps,
        tau: params.tau,
        horizon: params.horizon,
        points,
        step_distances,
        step_energies,
        near_tie_steps,
        certified_exact,
    })
}

/// `ū(t) = u^{i+1}` for `t ∈ (iτ, (i+1)τ]`, `ū(0) = u^0`.
pub fn piecewise_constant(traj: &DiscreteTrajectory, t: f64) -> Result<Point> {
    let (k, _) = traj.locate(t)?;
    Ok(traj.points[k].clone())
}

fn interpolant_prox(
    spec: &EnergySpec,
    traj: &DiscreteTrajectory,
    t: f64,
    settings: &ProxSettings,
) -> Result<(usize, f64, ProxResult)> {
    let (i, delta) = traj.step_containing(t)?;
    let r = prox(spec, traj.eps, delta, &traj.points[i], settings)?;
    Ok((i, delta, r))
}

/// `ũ(t) ∈ J_{ε, t-iτ}(u^i)`.
pub fn variational_interpolate(
    spec: &EnergySpec,
    traj: &DiscreteTrajectory,
    t: f64,
    settings: &ProxSettings,
) -> Result<Point> {
    interpolant_prox(spec, traj, t, settings).map(|(_, _, r)| r.minimizer)
}

/// `G(t) = d(ũ(t), u^i)/(t - iτ)` for the selected element of `J`.
pub fn g_function(
    spec: &EnergySpec,
    traj: &DiscreteTrajectory,
    t: f64,
    settings: &ProxSettings,
) -> Result<f64> {
    interpolant_prox(spec, traj, t, settings).map(|(_, delta, r)| r.moved_distance / delta)
}

/// `|u'|(t) = d(u^{i+1}, u^i)/τ` on `(iτ, (i+1)τ]`; at `t = 0` the first
/// step's value.
pub fn discrete_velocity(traj: &DiscreteTrajectory, t: f64) -> Result<f64> {
    let (k, _) = traj.locate(t)?;
    let i = k.saturating_sub(1);
    traj.step_distances
        .get(i)
        .map(|d| d / traj.tau)
        .ok_or(Error::OutOfRange {
            t,
            max: traj.final_time(),
        })
}

/// The variational interpolant sampled at Gauss–Legendre nodes inside one
/// step.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct InterpolantStep {
    pub step: usize,
    pub times: Vec<f64>,
    pub weights: Vec<f64>,
    pub points: Vec<Point>,
    pub energies: Vec<f64>,
    pub g_values: Vec<f64>,
    /// `G` computed from the farthest near-optimal minimizer; differs from
    /// `g_values` only where the prox found ties.
    pub g_conservative: Vec<f64>,
    /// `d(ũ((i+1)τ), u^{i+1})`.
    pub endpoint_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VariationalInterpolant {
    pub eps: f64,
    pub tau: f64,
    pub steps: Vec<InterpolantStep>,
}

impl VariationalInterpolant {
    /// Sample every step of `traj` with `nodes_per_step` Gauss–Legendre
    /// nodes. Steps are independent and built in parallel.
    pub fn build(
        spec: &EnergySpec,
        traj: &DiscreteTrajectory,
        settings: &ProxSettings,
        nodes_per_step: usize,
    ) -> Result<Self> {
        Self::build_range(spec, traj, settings, nodes_per_step, 0..traj.steps())
    }

    pub fn build_range(
        spec: &EnergySpec,
        traj: &DiscreteTrajectory,
        settings: &ProxSettings,
        nodes_per_step: usize,
        range: std::ops::Range<usize>,
    ) -> Result<Self> {
        if nodes_per_step == 0 {
            return Err(Error::InvalidInput("nodes_per_step must be >= 1".into()));
        }
        if range.end > traj.steps() {
            return Err(Error::InterpolantCoverage(range.end - 1));
        }
        let reference = gauss_legendre(nodes_per_step);
        let steps = range
            .into_par_iter()
            .map(|i| build_step(spec, traj, settings, &reference, i))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            eps: traj.eps,
            tau: traj.tau,
            steps,
        })
    }

    pub fn step(&self, i: usize) -> Result<&InterpolantStep> {
        let first = self.steps.first().map(|s| s.step).unwrap_or(0);
        self.steps
            .get(i.wrapping_sub(first))
            .filter(|s| s.step == i)
            .ok_or(Error::InterpolantCoverage(i))
    }

    pub fn max_endpoint_error(&self) -> f64 {
        self.steps
            .iter()
            .map(|s| s.endpoint_error)
            .fold(0.0, f64::max)
    }

    /// All samples as `(t, ũ(t), G(t))`, time-ordered.
    pub fn samples(&self) -> impl Iterator<Item = (f64, &Point, f64)> + '_ {
        self.steps.iter().flat_map(|s| {
            s.times
                .iter()
                .zip(&s.points)
                .zip(&s.g_values)
                .map(|((t, p), g)| (*t, p, *g))
        })
    }
}

fn build_step(
    spec: &EnergySpec,
    traj: &DiscreteTrajectory,
    settings: &ProxSettings,
    reference: &(Vec<f64>, Vec<f64>),
    i: usize,
) -> Result<InterpolantStep> {
    let t0 = traj.time(i);
    let rule = MappedRule::new(reference, t0, t0 + traj.tau);
    let u = &traj.points[i];
    let wrap = |e: Error| Error::SchemeStep {
        step: i,
        source: Box::new(e),
    };
    let mut points = Vec::with_capacity(rule.nodes.len());
    let mut energies = Vec::with_capacity(rule.nodes.len());
    let mut g_values = Vec::with_capacity(rule.nodes.len());
    let mut g_conservative = Vec::with_capacity(rule.nodes.len());
    for &t in &rule.nodes {
        // offsets from the step's left end, computed directly so that tiny
        // deltas keep their relative accuracy
        let delta = t - t0;
        let r = prox(spec, traj.eps, delta, u, settings).map_err(wrap)?;
        g_values.push(r.moved_distance / delta);
        g_conservative.push(r.max_candidate_distance / delta);
        energies.push(r.energy_at_min);
        points.push(r.minimizer);
    }
    let end = prox(spec, traj.eps, traj.tau, u, settings).map_err(wrap)?;
    let endpoint_error = spec
        .domain()
        .distance(&end.minimizer, &traj.points[i + 1])?;
    Ok(InterpolantStep {
        step: i,
        times: rule.nodes,
        weights: rule.weights,
        points,
        energies,
        g_values,
        g_conservative,
        endpoint_error,
    })
}
