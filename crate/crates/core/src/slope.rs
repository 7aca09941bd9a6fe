//! Descending slope `|∂φ|(x) = limsup_{y→x} (φ(x) - φ(y))⁺ / d(x, y)` and
//! two falsification tools built on it: condition (H) along a sampled
//! sequence, and the slope cone property `φ(y) ≥ φ(x) - d(x, y)|∂φ|(x)`.
//!
//! The estimator samples spheres of shrinking radius along a fixed direction
//! set, so it bounds the true slope from below at each radius. It never
//! samples randomly and two calls with the same input agree bit for bit.

use rayon::prelude::*;
use serde::{Serialize, Serializer};

use crate::energy::{EnergyKind, EnergySpec};
use crate::error::{Error, Result};
use crate::metric::{Point, SpaceDescriptor};

/// A slope value. The infinite branch exists for completeness; the built-in
/// energies are finite everywhere and never produce it.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SlopeValue {
    Finite(f64),
    Infinite,
}

impl SlopeValue {
    pub fn as_f64(self) -> f64 {
        match self {
            SlopeValue::Finite(v) => v,
            SlopeValue::Infinite => f64::INFINITY,
        }
    }
}

impl Serialize for SlopeValue {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            SlopeValue::Finite(v) => s.serialize_f64(*v),
            SlopeValue::Infinite => s.serialize_str("+inf"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SlopeOptions {
    /// Strictly decreasing sample radii.
    pub schedule: Vec<f64>,
    /// Low-discrepancy directions per radius, on top of the `2n` axes and
    /// the finite-difference descent direction.
    pub directions_per_radius: usize,
    /// Spread allowed among the last three per-radius values for
    /// `converged`.
    pub slope_tol: f64,
}

impl Default for SlopeOptions {
    fn default() -> Self {
        Self {
            schedule: (0..=12).map(|k| 0.1 * 0.5f64.powi(k)).collect(),
            directions_per_radius: 16,
            slope_tol: 1e-4,
        }
    }
}

impl SlopeOptions {
    fn validate(&self) -> Result<()> {
        if self.schedule.len() < 3 {
            return Err(Error::InvalidInput(
                "slope schedule needs at least 3 radii".into(),
            ));
        }
        if self.schedule.iter().any(|r| !(r.is_finite() && *r > 0.0))
            || self.schedule.windows(2).any(|w| w[1] >= w[0])
        {
            return Err(Error::InvalidInput(
                "slope schedule must be positive and strictly decreasing".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SlopeEstimate {
    pub value: SlopeValue,
    pub radii: Vec<f64>,
    pub per_radius_sup: Vec<f64>,
    pub converged: bool,
}

/// Radical inverse of `k` in base `b`.
fn radical_inverse(mut k: usize, b: usize) -> f64 {
    let (mut inv, mut f) = (0.0, 1.0 / b as f64);
    while k > 0 {
        inv += f * (k % b) as f64;
        k /= b;
        f /= b as f64;
    }
    inv
}

const PRIMES: [usize; 16] = [2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37, 41, 43, 47, 53];

/// Unit vectors (in the metric) used at every radius: the axes and a Halton
/// set.
fn direction_set(space: &SpaceDescriptor, halton: usize) -> Vec<Vec<f64>> {
    let n = space.dimension();
    let mut dirs = Vec::with_capacity(2 * n + halton);
    for i in 0..n {
        for s in [1.0, -1.0] {
            let mut d = vec![0.0; n];
            d[i] = s / space.weight(i).sqrt();
            dirs.push(d);
        }
    }
    let zero = vec![0.0; n];
    for k in 1..=halton {
        let raw: Vec<f64> = (0..n)
            .map(|i| 2.0 * radical_inverse(k, PRIMES[i % PRIMES.len()]) - 1.0)
            .collect();
        let norm = space.distance_unchecked(&raw, &zero);
        if norm > 1e-12 {
            dirs.push(raw.iter().map(|c| c / norm).collect());
        }
    }
    dirs
}

/// Steepest-descent unit vector from central differences at step `h`, or
/// `None` where the differences vanish.
fn descent_direction(spec: &EnergySpec, eps: f64, x: &[f64], h: f64) -> Option<Vec<f64>> {
    let space = spec.domain();
    let n = x.len();
    let mut g = vec![0.0; n];
    let mut y = x.to_vec();
    for i in 0..n {
        let hi = h / space.weight(i).sqrt();
        y[i] = x[i] + hi;
        let fp = spec.eval_unchecked(eps, &y);
        y[i] = x[i] - hi;
        let fm = spec.eval_unchecked(eps, &y);
        y[i] = x[i];
        g[i] = (fp - fm) / (2.0 * hi);
    }
    let dual = space.dual_norm(&g);
    if !(dual.is_finite() && dual > 0.0) {
        return None;
    }
    Some(
        g.iter()
            .enumerate()
            .map(|(i, gi)| -gi / (space.weight(i) * dual))
            .collect(),
    )
}

/// Estimate `|∂φ_ε|(x)`.
pub fn estimate_slope(
    spec: &EnergySpec,
    eps: f64,
    x: &Point,
    options: &SlopeOptions,
) -> Result<SlopeEstimate> {
    options.validate()?;
    let fx = spec.eval(eps, x)?;
    let dirs = direction_set(spec.domain(), options.directions_per_radius);
    let xc = x.coords();

    let per_radius_sup: Vec<f64> = options
        .schedule
        .par_iter()
        .map(|&r| {
            let probe = |d: &[f64]| -> f64 {
                let y: Vec<f64> = xc.iter().zip(d).map(|(a, b)| a + r * b).collect();
                let fy = spec.eval_unchecked(eps, &y);
                if fy.is_nan() {
                    return 0.0;
                }
                (fx - fy).max(0.0) / r
            };
            let best = dirs.iter().map(|d| probe(d)).fold(0.0, f64::max);
            match descent_direction(spec, eps, xc, r) {
                Some(d) => best.max(probe(&d)),
                None => best,
            }
        })
        .collect();

    let tail = &per_radius_sup[per_radius_sup.len() - 3..];
    let value = tail.iter().cloned().fold(0.0, f64::max);
    let spread = tail.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
        - tail.iter().cloned().fold(f64::INFINITY, f64::min);
    Ok(SlopeEstimate {
        value: if value.is_finite() {
            SlopeValue::Finite(value)
        } else {
            SlopeValue::Infinite
        },
        radii: options.schedule.clone(),
        per_radius_sup,
        converged: spread < options.slope_tol,
    })
}

/// Local minimum of the wiggly energy nearest to `v`, found coordinate by
/// coordinate. These are the traps of the pinning regime: their slope is
/// zero although the Γ-limit has nonzero slope there.
pub fn nearest_trap(spec: &EnergySpec, eps: f64, v: &Point) -> Result<Point> {
    EnergySpec::check_eps(eps)?;
    spec.domain().check(v)?;
    let EnergyKind::Wiggly {
        base,
        amplitude_scale,
        ..
    } = spec.kind()
    else {
        return Err(Error::CapabilityAbsent {
            capability: "nearest_trap",
            kind: spec.kind_name(),
        });
    };
    let amp = *amplitude_scale;
    let coords = v
        .coords()
        .iter()
        .enumerate()
        .map(|(i, &vi)| {
            let (w, b) = (base.weights[i], base.center.coords()[i]);
            let df = |x: f64| w * (x - b) - amp * (x / eps).sin();
            // every local minimum sits where df crosses zero upwards; scan a
            // few periods either side of v
            let h = std::f64::consts::PI * eps / 32.0;
            let mut best: Option<f64> = None;
            let reach = 256;
            for k in -reach..reach {
                let (a, c) = (vi + k as f64 * h, vi + (k + 1) as f64 * h);
                let (da, dc) = (df(a), df(c));
                if da <= 0.0 && dc > 0.0 {
                    let root = bisect_root(&df, a, c);
                    if best.is_none_or(|bst| (root - vi).abs() < (bst - vi).abs()) {
                        best = Some(root);
                    }
                }
            }
            best.ok_or_else(|| {
                Error::InvalidInput(format!("no wiggly trap within reach of coordinate {vi}"))
            })
        })
        .collect::<Result<Vec<f64>>>()?;
    Point::new(coords)
}

fn bisect_root(f: &dyn Fn(f64) -> f64, mut a: f64, mut b: f64) -> f64 {
    for _ in 0..200 {
        let m = 0.5 * (a + b);
        if m <= a || m >= b {
            break;
        }
        if f(m) <= 0.0 {
            a = m;
        } else {
            b = m;
        }
    }
    if f(a).abs() <= f(b).abs() {
        a
    } else {
        b
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct HTolerances {
    /// Tolerance on the energy gap and on the slope liminf inequality.
    pub h_tol: f64,
    /// Bound the tail of `d(v_n, v)` must fall under.
    pub seq_tol: f64,
}

impl Default for HTolerances {
    fn default() -> Self {
        Self {
            h_tol: 1e-3,
            seq_tol: 1e-2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SequenceSample {
    pub eps: f64,
    pub point: Point,
    pub distance_to_limit: f64,
    pub energy: f64,
    pub slope: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConditionHReport {
    pub sequence: Vec<SequenceSample>,
    pub limit_v: Point,
    /// `|φ_{ε_n}(v_n) - φ(v)|` at the last `n`.
    pub energy_gap: f64,
    /// Smallest slope over the second half of the sequence.
    pub slope_liminf_estimate: f64,
    pub slope_at_limit: f64,
    pub sup_energy: f64,
    pub sup_distance_to_base: f64,
    pub tolerances: HTolerances,
    pub passed: bool,
}

/// Test condition (H) on one sampled sequence `(ε_n, v_n) → v`. A pass is
/// evidence, a failure is a counterexample.
pub fn check_condition_h(
    family: &EnergySpec,
    limit: &EnergySpec,
    sequence: &[(f64, Point)],
    limit_v: &Point,
    tolerances: HTolerances,
    options: &SlopeOptions,
) -> Result<ConditionHReport> {
    if sequence.is_empty() {
        return Err(Error::SequenceNotConvergent("empty sequence".into()));
    }
    let space = family.domain();
    space.check(limit_v)?;
    let half = sequence.len() / 2;
    let mut samples = Vec::with_capacity(sequence.len());
    for (eps, v) in sequence {
        let slope = estimate_slope(family, *eps, v, options)?.value.as_f64();
        samples.push(SequenceSample {
            eps: *eps,
            point: v.clone(),
            distance_to_limit: space.distance(v, limit_v)?,
            energy: family.eval(*eps, v)?,
            slope,
        });
    }
    let tail_sup = samples[half..]
        .iter()
        .map(|s| s.distance_to_limit)
        .fold(0.0, f64::max);
    if tail_sup >= tolerances.seq_tol {
        return Err(Error::SequenceNotConvergent(format!(
            "sup of d(v_n, v) over the tail is {tail_sup}, not below {}",
            tolerances.seq_tol
        )));
    }
    let last = samples.last().expect("nonempty");
    let limit_energy = limit.eval(last.eps, limit_v)?;
    let energy_gap = (last.energy - limit_energy).abs();
    let slope_liminf_estimate = samples[half..]
        .iter()
        .map(|s| s.slope)
        .fold(f64::INFINITY, f64::min);
    let slope_at_limit = estimate_slope(limit, last.eps, limit_v, options)?
        .value
        .as_f64();
    let sup_energy = samples.iter().map(|s| s.energy.abs()).fold(0.0, f64::max);
    let base = space.base_point();
    let mut sup_distance_to_base = 0.0f64;
    for s in &samples {
        sup_distance_to_base = sup_distance_to_base.max(space.distance(&s.point, base)?);
    }
    let passed =
        energy_gap < tolerances.h_tol && slope_liminf_estimate >= slope_at_limit - tolerances.h_tol;
    Ok(ConditionHReport {
        sequence: samples,
        limit_v: limit_v.clone(),
        energy_gap,
        slope_liminf_estimate,
        slope_at_limit,
        sup_energy,
        sup_distance_to_base,
        tolerances,
        passed,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum SlopeSource {
    Exact,
    Estimated,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SlopeConeReport {
    pub eps: f64,
    pub x: Point,
    pub energy_at_x: f64,
    pub slope: f64,
    pub slope_source: SlopeSource,
    pub residuals: Vec<f64>,
    pub min_residual: f64,
    /// Probe attaining `min_residual`.
    pub witness: Option<Point>,
    pub cone_tol: f64,
    pub holds: bool,
}

/// Lower-order correction `ω(d)` added to the right-hand side of the cone
/// inequality.
pub type Modulus<'a> = &'a (dyn Fn(f64) -> f64 + Sync);

/// Residuals `φ(y) - φ(x) + d(x, y)|∂φ|(x)` over the probes.
pub fn check_slope_cone(
    spec: &EnergySpec,
    eps: f64,
    x: &Point,
    probes: &[Point],
    cone_tol: f64,
) -> Result<SlopeConeReport> {
    check_slope_cone_with(
        spec,
        eps,
        x,
        probes,
        cone_tol,
        None,
        &SlopeOptions::default(),
    )
}

/// As [`check_slope_cone`], with an optional modulus `ω` so that the tested
/// inequality becomes `φ(y) ≥ φ(x) - d|∂φ|(x) - ω(d)`.
pub fn check_slope_cone_with(
    spec: &EnergySpec,
    eps: f64,
    x: &Point,
    probes: &[Point],
    cone_tol: f64,
    modulus: Option<Modulus<'_>>,
    options: &SlopeOptions,
) -> Result<SlopeConeReport> {
    let fx = spec.eval(eps, x)?;
    let (slope, slope_source) = match spec.exact_slope(eps, x) {
        Ok(s) => (s, SlopeSource::Exact),
        Err(Error::CapabilityAbsent { .. }) => (
            estimate_slope(spec, eps, x, options)?.value.as_f64(),
            SlopeSource::Estimated,
        ),
        Err(e) => return Err(e),
    };
    let space = spec.domain();
    let mut residuals = Vec::with_capacity(probes.len());
    for y in probes {
        let d = space.distance(x, y)?;
        let correction = modulus.map_or(0.0, |m| m(d));
        residuals.push(spec.eval(eps, y)? - fx + d * slope + correction);
    }
    let (min_residual, witness) = residuals
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.total_cmp(b.1))
        .map(|(k, r)| (*r, Some(probes[k].clone())))
        .unwrap_or((0.0, None));
    Ok(SlopeConeReport {
        eps,
        x: x.clone(),
        energy_at_x: fx,
        slope,
        slope_source,
        residuals,
        min_residual,
        witness,
        cone_tol,
        holds: min_residual >= -cone_tol,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn p(c: &[f64]) -> Point {
        Point::new(c.to_vec()).unwrap()
    }

    fn quad1() -> EnergySpec {
        EnergySpec::quadratic(SpaceDescriptor::euclidean(1), vec![1.0], vec![0.0]).unwrap()
    }

    fn wiggly1() -> EnergySpec {
        EnergySpec::wiggly(SpaceDescriptor::euclidean(1), vec![1.0], vec![0.0], 1.0).unwrap()
    }

    fn convex1() -> EnergySpec {
        EnergySpec::convex_perturbed(SpaceDescriptor::euclidean(1), vec![1.0], vec![0.0]).unwrap()
    }

    #[test]
    fn quadratic_slope_is_gradient_norm() {
        let est = estimate_slope(&quad1(), 1.0, &p(&[2.0]), &SlopeOptions::default()).unwrap();
        assert!((est.value.as_f64() - 2.0).abs() < 1e-4);
        assert!(est.converged);
        assert_eq!(est.per_radius_sup.len(), 13);
    }

    #[test]
    fn slope_vanishes_at_minimizers() {
        let q = EnergySpec::quadratic(
            SpaceDescriptor::weighted(vec![4.0, 1.0]).unwrap(),
            vec![1.0, 3.0],
            vec![0.5, -1.0],
        )
        .unwrap();
        let est = estimate_slope(&q, 1.0, &p(&[0.5, -1.0]), &SlopeOptions::default()).unwrap();
        assert_eq!(est.value, SlopeValue::Finite(0.0));
    }

    #[test]
    fn wiggly_slope_at_origin_matches_dense_sampling() {
        // dense 1D oracle at radius 1e-6
        let spec = wiggly1();
        let f = |x: f64| spec.eval_unchecked(0.1, &[x]);
        let r = 1e-6;
        let oracle = [(f(0.0) - f(r)).max(0.0), (f(0.0) - f(-r)).max(0.0)]
            .into_iter()
            .fold(0.0, f64::max)
            / r;
        assert!(oracle < 1e-5);
        let est = estimate_slope(&spec, 0.1, &p(&[0.0]), &SlopeOptions::default()).unwrap();
        assert!(est.value.as_f64() < 1e-3);
    }

    #[test]
    fn estimator_matches_gradient_in_weighted_metric() {
        let space = SpaceDescriptor::weighted(vec![2.0, 0.5, 1.5]).unwrap();
        let spec =
            EnergySpec::wiggly(space, vec![1.0, 2.0, 0.5], vec![0.1, -0.2, 0.3], 1.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..30 {
            let x = p(&[
                rng.gen_range(-2.0..2.0),
                rng.gen_range(-2.0..2.0),
                rng.gen_range(-2.0..2.0),
            ]);
            let g = spec.gradient(0.1, &x).unwrap();
            let exact = spec.domain().dual_norm(&g);
            let est = estimate_slope(&spec, 0.1, &x, &SlopeOptions::default()).unwrap();
            assert!(
                (est.value.as_f64() - exact).abs() <= 1e-3,
                "{exact} vs {:?}",
                est.value
            );
        }
    }

    #[test]
    fn bad_schedules_are_rejected() {
        let mut o = SlopeOptions {
            schedule: vec![0.1, 0.2, 0.05],
            ..Default::default()
        };
        assert!(estimate_slope(&quad1(), 1.0, &p(&[1.0]), &o).is_err());
        o.schedule = vec![0.1, 0.05];
        assert!(estimate_slope(&quad1(), 1.0, &p(&[1.0]), &o).is_err());
    }

    #[test]
    fn traps_are_local_minima_near_v() {
        let spec = wiggly1();
        for eps in [0.1, 0.01] {
            let t = nearest_trap(&spec, eps, &p(&[0.5])).unwrap().coords()[0];
            let df = t - (t / eps).sin();
            assert!(df.abs() < 1e-12);
            assert!(1.0 - (t / eps).cos() / eps > 0.0);
            assert!((t - 0.5).abs() < 2.0 * std::f64::consts::PI * eps);
        }
        assert!(nearest_trap(&quad1(), 0.1, &p(&[0.5])).is_err());
    }

    #[test]
    fn condition_h_passes_for_constant_family() {
        let q = quad1();
        let seq: Vec<(f64, Point)> = (1..=6)
            .map(|k| (10f64.powi(-k), p(&[1.0 + 0.5f64.powi(k + 6)])))
            .collect();
        let r = check_condition_h(
            &q,
            &q,
            &seq,
            &p(&[1.0]),
            HTolerances::default(),
            &SlopeOptions::default(),
        )
        .unwrap();
        assert!(r.passed, "{r:?}");
    }

    #[test]
    fn condition_h_fails_on_wiggly_traps() {
        let spec = wiggly1();
        let limit = spec.gamma_limit().unwrap();
        let v = p(&[0.5]);
        let seq: Vec<(f64, Point)> = [1e-2, 3e-3, 1e-3, 3e-4, 1e-4]
            .iter()
            .map(|&e| (e, nearest_trap(&spec, e, &v).unwrap()))
            .collect();
        let r = check_condition_h(
            &spec,
            &limit,
            &seq,
            &v,
            HTolerances::default(),
            &SlopeOptions::default(),
        )
        .unwrap();
        assert!(!r.passed);
        assert!(r.slope_liminf_estimate < 0.1 * r.slope_at_limit);
        assert!((r.slope_at_limit - 0.5).abs() < 1e-3);
    }

    #[test]
    fn condition_h_passes_on_convex_perturbation() {
        let spec = convex1();
        let limit = spec.gamma_limit().unwrap();
        let seq: Vec<(f64, Point)> = [1e-3, 1e-4, 1e-5, 1e-6]
            .iter()
            .map(|&e| (e, p(&[1.0])))
            .collect();
        let r = check_condition_h(
            &spec,
            &limit,
            &seq,
            &p(&[1.0]),
            HTolerances::default(),
            &SlopeOptions::default(),
        )
        .unwrap();
        assert!(r.passed, "{r:?}");
        // cross-check against the closed-form subgradient slope 1 + eps
        assert!((r.sequence[0].slope - (1.0 + 1e-3)).abs() < 1e-4);
    }

    #[test]
    fn divergent_sequences_are_rejected() {
        let q = quad1();
        let seq: Vec<(f64, Point)> = (1..=4).map(|k| (0.1 / k as f64, p(&[k as f64]))).collect();
        assert!(matches!(
            check_condition_h(
                &q,
                &q,
                &seq,
                &p(&[0.0]),
                HTolerances::default(),
                &SlopeOptions::default()
            ),
            Err(Error::SequenceNotConvergent(_))
        ));
    }

    #[test]
    fn cone_residual_examples() {
        let r = check_slope_cone(&quad1(), 1.0, &p(&[1.0]), &[p(&[0.0]), p(&[1.0])], 1e-9).unwrap();
        assert_eq!(r.residuals, vec![0.5, 0.0]);
        assert!(r.holds);
        assert_eq!(r.slope_source, SlopeSource::Exact);
    }

    #[test]
    fn cone_fails_at_a_wiggly_trap() {
        let spec = wiggly1();
        // at eps = 0.1 the trap nearest 0.5 is a global minimizer; at 0.03
        // it sits two wells up
        let x = nearest_trap(&spec, 0.03, &p(&[0.5])).unwrap();
        let probes: Vec<Point> = (0..=400).map(|k| p(&[-1.0 + 0.005 * k as f64])).collect();
        let r = check_slope_cone(&spec, 0.03, &x, &probes, 1e-9).unwrap();
        assert!(!r.holds);
        assert!(r.min_residual < -1e-3);
        assert!(r.witness.is_some());
    }

    #[test]
    fn modulus_hook_shifts_residuals() {
        let omega = |d: f64| d * d;
        let r = check_slope_cone_with(
            &quad1(),
            1.0,
            &p(&[1.0]),
            &[p(&[0.0])],
            1e-9,
            Some(&omega),
            &SlopeOptions::default(),
        )
        .unwrap();
        assert_eq!(r.residuals, vec![1.5]);
    }
}
