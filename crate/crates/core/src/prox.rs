//! The resolvent `J_{ε,δ}(u) = argmin_v φ_ε(v) + d²(v, u)/(2δ)`.
//!
//! All zoo energies are sums of one-dimensional terms and both metrics are
//! diagonal, so the objective splits into independent scalar problems, one
//! per coordinate. Quadratic and `ε|x|`-perturbed terms have closed forms.
//! Everything else goes through a global scalar search: a uniform grid over
//! a bracket known to contain every minimizer, followed by bisection on the
//! derivative (or golden-section search when no derivative applies) around
//! the best few grid cells.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::energy::{EnergyKind, EnergySpec, Term};
use crate::error::{Error, Result};
use crate::metric::{Point, SpaceDescriptor};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProxMode {
    #[default]
    ExactIfAvailable,
    MultistartNumeric,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProxSettings {
    pub mode: ProxMode,
    /// Number of grid local minima refined per scalar problem.
    pub starts: usize,
    /// Bracket width (relative to `1 + |v|`) at which refinement stops, and
    /// the objective gap under which two candidates count as tied.
    pub local_tol: f64,
    /// Bracket half-width multiplier for energies without a certified
    /// bracket.
    pub search_radius_factor: f64,
    pub max_iters: usize,
    /// Grid size for energies without a known oscillation scale.
    pub grid_nodes: usize,
    /// Upper bound for δ from the coercivity certificate, when known.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tau_star: Option<f64>,
}

impl Default for ProxSettings {
    fn default() -> Self {
        Self {
            mode: ProxMode::ExactIfAvailable,
            starts: 4,
            local_tol: 1e-12,
            search_radius_factor: 4.0,
            max_iters: 200,
            grid_nodes: 2001,
            tau_star: None,
        }
    }
}

impl ProxSettings {
    pub fn numeric() -> Self {
        Self {
            mode: ProxMode::MultistartNumeric,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.starts == 0 {
            return Err(Error::InvalidInput("prox starts must be >= 1".into()));
        }
        if !(self.local_tol.is_finite() && self.local_tol > 0.0) {
            return Err(Error::InvalidInput(
                "prox local_tol must be positive".into(),
            ));
        }
        if !(self.search_radius_factor.is_finite() && self.search_radius_factor > 0.0) {
            return Err(Error::InvalidInput(
                "prox search_radius_factor must be positive".into(),
            ));
        }
        if self.max_iters == 0 || self.grid_nodes < 3 {
            return Err(Error::InvalidInput(
                "prox max_iters must be >= 1 and grid_nodes >= 3".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ProxResult {
    pub minimizer: Point,
    /// `φ_ε(v) + d²(v, u)/(2δ)` at the minimizer.
    pub value: f64,
    pub energy_at_min: f64,
    pub moved_distance: f64,
    pub certified_exact: bool,
    /// Another minimizer, distinct from the selected one, was found within
    /// `local_tol` of the best objective.
    pub near_tie: bool,
    /// Largest `d(v, u)` over all near-optimal candidates found. Equals
    /// `moved_distance` unless `near_tie`.
    pub max_candidate_distance: f64,
}

/// A scored candidate minimizer.
#[derive(Debug, Clone, PartialEq)]
pub struct Candidate {
    pub point: Point,
    pub objective: f64,
}

fn compare_candidates(
    a_obj: f64,
    a_dist: f64,
    a_coords: &[f64],
    b_obj: f64,
    b_dist: f64,
    b_coords: &[f64],
    tol: f64,
) -> Ordering {
    if (a_obj - b_obj).abs() > tol {
        return a_obj.total_cmp(&b_obj);
    }
    let dist_order = if (a_dist - b_dist).abs() <= tol * (1.0 + a_dist.max(b_dist)) {
        Ordering::Equal
    } else {
        a_dist.total_cmp(&b_dist)
    };
    dist_order.then_with(|| {
        a_coords
            .iter()
            .zip(b_coords)
            .map(|(x, y)| x.total_cmp(y))
            .find(|o| o.is_ne())
            .unwrap_or(Ordering::Equal)
    })
}

/// Deterministic choice among candidate minimizers: lowest objective; within
/// `tol` of the best, smallest distance to `u`; then lexicographically
/// smallest coordinates.
pub fn prox_selection(
    candidates: &[Candidate],
    u: &Point,
    space: &SpaceDescriptor,
    tol: f64,
) -> Result<Point> {
    let best = candidates
        .iter()
        .map(|c| c.objective)
        .min_by(f64::total_cmp)
        .ok_or_else(|| Error::InvalidInput("prox_selection needs a candidate".into()))?;
    let mut pool: Vec<(&Candidate, f64)> = Vec::new();
    for c in candidates.iter().filter(|c| c.objective <= best + tol) {
        pool.push((c, space.distance(&c.point, u)?));
    }
    pool.sort_by(|(a, da), (b, db)| {
        compare_candidates(0.0, *da, a.point.coords(), 0.0, *db, b.point.coords(), tol)
    });
    Ok(pool[0].0.point.clone())
}

/// Solution of one scalar prox problem.
#[derive(Debug, Clone, Copy)]
struct ScalarMin {
    x: f64,
    near_tie: bool,
    farthest: f64,
}

fn soft_threshold(c: f64, t: f64) -> f64 {
    c.signum() * (c.abs() - t).max(0.0)
}

/// Closed-form minimizer for quadratic-based terms, or `None`.
fn exact_scalar(term: Term<'_>, eps: f64, delta: f64, m: f64, ui: f64) -> Option<f64> {
    match term {
        Term::Quadratic { w, b } => Some((w * b + m * ui / delta) / (w + m / delta)),
        Term::ConvexPerturbed { w, b } => {
            let a = w + m / delta;
            let c = (w * b + m * ui / delta) / a;
            Some(soft_threshold(c, eps / a))
        }
        _ => None,
    }
}

const MAX_GRID: usize = 4_000_001;
const GOLDEN: f64 = 0.618_033_988_749_894_9;

struct ScalarProblem<'a> {
    term: Term<'a>,
    eps: f64,
    delta: f64,
    m: f64,
    ui: f64,
}

impl ScalarProblem<'_> {
    #[inline]
    fn f(&self, v: f64) -> f64 {
        self.term.value(self.eps, v) + self.m * (v - self.ui) * (v - self.ui) / (2.0 * self.delta)
    }

    #[inline]
    fn df(&self, v: f64) -> Option<f64> {
        self.term
            .derivative(self.eps, v)
            .map(|d| d + self.m * (v - self.ui) / self.delta)
    }

    /// Size below which the computed derivative at `v` has no reliable sign.
    fn roundoff(&self, v: f64) -> f64 {
        let d = self.term.derivative(self.eps, v).unwrap_or(0.0).abs();
        let pull = self.m * (v - self.ui).abs() / self.delta;
        let curvature = (self.term.derivative(self.eps, v + 1.0).unwrap_or(0.0)
            - self.term.derivative(self.eps, v).unwrap_or(0.0))
        .abs();
        16.0 * f64::EPSILON * (d + pull + self.eps + curvature * v.abs())
    }

    /// Interval guaranteed (or, for custom terms, expected) to contain all
    /// minimizers, and the grid spacing needed to resolve it.
    fn bracket(&self, settings: &ProxSettings) -> (f64, f64, usize) {
        let ProxSettings {
            local_tol,
            search_radius_factor,
            grid_nodes,
            ..
        } = *settings;
        let quad = |w: f64, b: f64| {
            let a = w + self.m / self.delta;
            (a, (w * b + self.m * self.ui / self.delta) / a)
        };
        let (center, radius, spacing) = match self.term {
            // q(v) convex with curvature a and minimum at c, plus a
            // perturbation of oscillation B: q(v*) - q(c) <= B, so
            // |v* - c| <= sqrt(2B/a).
            Term::Quadratic { w, b } => {
                let (_, c) = quad(w, b);
                (c, 0.0, f64::INFINITY)
            }
            Term::Wiggly { w, b, amp } => {
                let (a, c) = quad(w, b);
                let osc = 2.0 * amp * self.eps;
                (
                    c,
                    (2.0 * osc / a).sqrt(),
                    std::f64::consts::PI * self.eps / 16.0,
                )
            }
            Term::ConvexPerturbed { w, b } => {
                let (a, c) = quad(w, b);
                (c, self.eps / a, f64::INFINITY)
            }
            Term::Custom(_) => {
                let g = self.term.derivative(self.eps, self.ui).unwrap_or(0.0);
                let g = if g.is_finite() { g } else { 0.0 };
                let r = search_radius_factor * (self.delta * g.abs() / self.m).max(1.0);
                (self.ui, r, 2.0 * r / (grid_nodes - 1) as f64)
            }
        };
        let radius = radius.max(10.0 * local_tol * (1.0 + center.abs()));
        // u itself is always feasible; keep it inside the bracket
        let lo = (center - radius).min(self.ui);
        let hi = (center + radius).max(self.ui);
        let nodes = if spacing.is_finite() {
            (((hi - lo) / spacing).ceil() as usize + 1).clamp(65, MAX_GRID)
        } else {
            65
        };
        (lo, hi, nodes)
    }

    fn refine(&self, lo: f64, hi: f64, settings: &ProxSettings) -> Result<f64> {
        let tol = |x: f64| settings.local_tol * (1.0 + x.abs());
        if let (Some(dl), Some(dh)) = (self.df(lo), self.df(hi)) {
            // a derivative lost in roundoff counts as zero
            if dl.abs() <= self.roundoff(lo) {
                return Ok(lo);
            }
            if dh.abs() <= self.roundoff(hi) {
                return Ok(hi);
            }
            if dl < 0.0 && dh > 0.0 {
                let (mut a, mut b) = (lo, hi);
                let mut iters = 0;
                while b - a > tol(a) {
                    let mid = 0.5 * (a + b);
                    if mid <= a || mid >= b {
                        break;
                    }
                    iters += 1;
                    if iters > settings.max_iters {
                        return Err(Error::BudgetExhausted {
                            max_iters: settings.max_iters,
                            tol: settings.local_tol,
                        });
                    }
                    match self.df(mid) {
                        Some(d) if d > 0.0 => b = mid,
                        Some(d) if d < 0.0 => a = mid,
                        Some(_) => return Ok(mid),
                        None => {
                            // kink: the one-sided derivatives decide
                            let below = self.df(mid - f64::EPSILON * (1.0 + mid.abs()));
                            let above = self.df(mid + f64::EPSILON * (1.0 + mid.abs()));
                            match (below, above) {
                                (Some(l), Some(r)) if l <= 0.0 && r >= 0.0 => return Ok(mid),
                                (Some(l), _) if l > 0.0 => b = mid,
                                (_, Some(r)) if r < 0.0 => a = mid,
                                _ => return self.golden(a, b, settings),
                            }
                        }
                    }
                }
                // df(a) < 0 < df(b) is kept throughout, so the limit is a
                // local minimum
                return Ok(0.5 * (a + b));
            }
        }
        self.golden(lo, hi, settings)
    }

    fn golden(&self, lo: f64, hi: f64, settings: &ProxSettings) -> Result<f64> {
        let (mut a, mut b) = (lo, hi);
        let mut c = b - GOLDEN * (b - a);
        let mut d = a + GOLDEN * (b - a);
        let (mut fc, mut fd) = (self.f(c), self.f(d));
        let mut iters = 0;
        while b - a > settings.local_tol * (1.0 + a.abs()) {
            iters += 1;
            if iters > settings.max_iters {
                return Err(Error::BudgetExhausted {
                    max_iters: settings.max_iters,
                    tol: settings.local_tol,
                });
            }
            if fc <= fd {
                b = d;
                d = c;
                fd = fc;
                c = b - GOLDEN * (b - a);
                fc = self.f(c);
            } else {
                a = c;
                c = d;
                fc = fd;
                d = a + GOLDEN * (b - a);
                fd = self.f(d);
            }
            if !(c > a && d < b && c <= d) {
                break;
            }
        }
        Ok(if fc <= fd { c } else { d })
    }

    fn solve(&self, settings: &ProxSettings) -> Result<ScalarMin> {
        let (lo, hi, nodes) = self.bracket(settings);
        let step = (hi - lo) / (nodes - 1) as f64;
        let xs: Vec<f64> = (0..nodes).map(|k| lo + step * k as f64).collect();
        let fs: Vec<f64> = xs.iter().map(|&x| self.f(x)).collect();

        let mut local: Vec<usize> = (0..nodes)
            .filter(|&k| {
                let left = k == 0 || fs[k] <= fs[k - 1];
                let right = k + 1 == nodes || fs[k] <= fs[k + 1];
                left && right && fs[k].is_finite()
            })
            .collect();
        local.sort_by(|&a, &b| fs[a].total_cmp(&fs[b]).then(a.cmp(&b)));
        local.truncate(settings.starts);

        let mut refined: Vec<(f64, f64)> = Vec::with_capacity(local.len());
        for k in local {
            let a = xs[k.saturating_sub(1)];
            let b = xs[(k + 1).min(nodes - 1)];
            let x = self.refine(a, b, settings)?;
            refined.push((x, self.f(x)));
        }
        refined.retain(|(_, f)| f.is_finite());
        let f_u = self.f(self.ui);
        if refined.iter().all(|(_, f)| *f > f_u) && f_u.is_finite() {
            refined.push((self.ui, f_u));
        }
        if refined.is_empty() {
            return Err(Error::Evaluation {
                x: vec![self.ui],
                reason: "prox objective is not finite on the search bracket".into(),
            });
        }

        // Merge candidates closer than two grid cells: they come from the same
        // well. Each cluster keeps its best member.
        let separation = 2.0 * step.max(settings.local_tol);
        refined.sort_by(|a, b| a.0.total_cmp(&b.0));
        let mut clusters: Vec<(f64, f64)> = Vec::new();
        for (x, f) in refined {
            match clusters.last_mut() {
                Some(last) if (x - last.0).abs() <= separation => {
                    if f < last.1 {
                        *last = (x, f);
                    }
                }
                _ => clusters.push((x, f)),
            }
        }

        let best = clusters.iter().map(|c| c.1).fold(f64::INFINITY, f64::min);
        let tie = settings.local_tol * (1.0 + best.abs());
        let ui = self.ui;
        let tied: Vec<(f64, f64)> = clusters.into_iter().filter(|c| c.1 <= best + tie).collect();
        let chosen = tied
            .iter()
            .copied()
            .min_by(|a, b| {
                compare_candidates(
                    0.0,
                    (a.0 - ui).abs(),
                    &[a.0],
                    0.0,
                    (b.0 - ui).abs(),
                    &[b.0],
                    tie,
                )
            })
            .map(|c| c.0)
            .expect("nonempty candidate set");
        let near_tie = tied.len() > 1;
        let farthest = tied
            .iter()
            .map(|(x, _)| (x - ui).abs())
            .fold((chosen - ui).abs(), f64::max);
        Ok(ScalarMin {
            x: chosen,
            near_tie,
            farthest,
        })
    }
}

/// One element of `J_{ε,δ}(u)`, chosen deterministically.
pub fn prox(
    spec: &EnergySpec,
    eps: f64,
    delta: f64,
    u: &Point,
    settings: &ProxSettings,
) -> Result<ProxResult> {
    EnergySpec::check_eps(eps)?;
    settings.validate()?;
    if !(delta.is_finite() && delta > 0.0) {
        return Err(Error::InvalidDelta {
            delta,
            tau_star: settings.tau_star.unwrap_or(f64::INFINITY),
        });
    }
    if let Some(tau_star) = settings.tau_star {
        if delta >= tau_star {
            return Err(Error::InvalidDelta { delta, tau_star });
        }
    }
    let space = spec.domain();
    space.check(u)?;

    let use_exact = settings.mode == ProxMode::ExactIfAvailable
        && matches!(
            spec.kind(),
            EnergyKind::Quadratic(_) | EnergyKind::ConvexPerturbed { .. }
        );

    let n = spec.dimension();
    let mut coords = Vec::with_capacity(n);
    let mut near_tie = false;
    let mut farthest_sq = 0.0;
    for i in 0..n {
        let m = space.weight(i);
        let ui = u.coords()[i];
        let term = spec.term(i);
        let sol = match exact_scalar(term, eps, delta, m, ui).filter(|_| use_exact) {
            Some(x) => ScalarMin {
                x,
                near_tie: false,
                farthest: (x - ui).abs(),
            },
            None => ScalarProblem {
                term,
                eps,
                delta,
                m,
                ui,
            }
            .solve(settings)?,
        };
        near_tie |= sol.near_tie;
        farthest_sq += m * sol.farthest * sol.farthest;
        coords.push(sol.x);
    }
    let minimizer = Point::new(coords)?;
    let energy_at_min = spec.eval(eps, &minimizer)?;
    let moved_sq = space.squared_distance(&minimizer, u)?;
    Ok(ProxResult {
        value: energy_at_min + moved_sq / (2.0 * delta),
        energy_at_min,
        moved_distance: moved_sq.sqrt(),
        certified_exact: use_exact,
        near_tie,
        max_candidate_distance: farthest_sq.sqrt().max(moved_sq.sqrt()),
        minimizer,
    })
}

/// `φ_ε(v) + d²(v, u)/(2δ)`.
pub fn prox_objective(
    spec: &EnergySpec,
    eps: f64,
    delta: f64,
    u: &Point,
    v: &Point,
) -> Result<f64> {
    Ok(spec.eval(eps, v)? + spec.domain().squared_distance(v, u)? / (2.0 * delta))
}
