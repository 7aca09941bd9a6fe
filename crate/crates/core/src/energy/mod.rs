//! The zoo of ε-parameterized energy families.
//!
//! Every member is a sum of one-dimensional terms, one per coordinate:
//!
//! * `quadratic`: `½ w_i (x_i - b_i)²`
//! * `wiggly`: the quadratic plus `a ε cos(x_i / ε)`
//! * `convex_perturbed`: the quadratic plus `ε |x_i|`
//! * `custom_smooth`: a user expression in `x` and `eps` (one-dimensional)
//!
//! Separability is what the exact and numeric prox maps rely on.

pub mod expr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metric::{MetricKind, Point, SpaceDescriptor};

pub use expr::CustomExpr;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuadraticSpec {
    pub weights: Vec<f64>,
    pub center: Point,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Oscillation {
    #[default]
    CosXiOverEps,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Perturbation {
    #[default]
    EpsAbs,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EnergyKind {
    Quadratic(QuadraticSpec),
    Wiggly {
        base: QuadraticSpec,
        amplitude_scale: f64,
        #[serde(default)]
        oscillation: Oscillation,
    },
    ConvexPerturbed {
        base: QuadraticSpec,
        #[serde(default)]
        perturbation: Perturbation,
    },
    CustomSmooth {
        expression: CustomExpr,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        gamma_limit: Option<CustomExpr>,
    },
}

impl EnergyKind {
    pub fn name(&self) -> &'static str {
        match self {
            EnergyKind::Quadratic(_) => "quadratic",
            EnergyKind::Wiggly { .. } => "wiggly",
            EnergyKind::ConvexPerturbed { .. } => "convex_perturbed",
            EnergyKind::CustomSmooth { .. } => "custom_smooth",
        }
    }
}

/// One coordinate's contribution to the energy.
#[derive(Debug, Clone, Copy)]
pub(crate) enum Term<'a> {
    Quadratic { w: f64, b: f64 },
    Wiggly { w: f64, b: f64, amp: f64 },
    ConvexPerturbed { w: f64, b: f64 },
    Custom(&'a CustomExpr),
}

impl Term<'_> {
    #[inline]
    pub(crate) fn value(&self, eps: f64, v: f64) -> f64 {
        match *self {
            Term::Quadratic { w, b } => 0.5 * w * (v - b) * (v - b),
            Term::Wiggly { w, b, amp } => 0.5 * w * (v - b) * (v - b) + amp * eps * (v / eps).cos(),
            Term::ConvexPerturbed { w, b } => 0.5 * w * (v - b) * (v - b) + eps * v.abs(),
            Term::Custom(e) => e.eval(v, eps),
        }
    }

    /// Derivative where the term is differentiable; `None` at the kink of
    /// `ε|v|`.
    #[inline]
    pub(crate) fn derivative(&self, eps: f64, v: f64) -> Option<f64> {
        match *self {
            Term::Quadratic { w, b } => Some(w * (v - b)),
            Term::Wiggly { w, b, amp } => Some(w * (v - b) - amp * (v / eps).sin()),
            Term::ConvexPerturbed { w, b } => {
                if v == 0.0 {
                    None
                } else {
                    Some(w * (v - b) + eps * v.signum())
                }
            }
            Term::Custom(e) => Some(e.eval_derivative(v, eps)),
        }
    }

    /// Element of least modulus in the (Fréchet) subdifferential.
    pub(crate) fn min_norm_subgradient(&self, eps: f64, v: f64) -> Option<f64> {
        match *self {
            Term::ConvexPerturbed { w, b } if v == 0.0 => {
                let g = w * (v - b);
                Some(g.signum() * (g.abs() - eps).max(0.0))
            }
            Term::Custom(_) => None,
            _ => self.derivative(eps, v),
        }
    }
}

/// An energy family together with the space it lives on.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EnergySpec {
    kind: EnergyKind,
    domain: SpaceDescriptor,
}

/// Used when evaluating ε-independent energies (Γ-limits); the value is
/// irrelevant to them.
pub const NOMINAL_EPS: f64 = 1.0;

fn check_quadratic(q: &QuadraticSpec, dim: usize) -> Result<()> {
    if q.weights.len() != dim {
        return Err(Error::DimensionMismatch {
            expected: dim,
            found: q.weights.len(),
        });
    }
    if q.center.dim() != dim {
        return Err(Error::DimensionMismatch {
            expected: dim,
            found: q.center.dim(),
        });
    }
    if q.weights.iter().any(|w| !(w.is_finite() && *w > 0.0)) {
        return Err(Error::InvalidInput(
            "quadratic weights must be finite and strictly positive".into(),
        ));
    }
    Ok(())
}

impl EnergySpec {
    pub fn new(kind: EnergyKind, domain: SpaceDescriptor) -> Result<Self> {
        let dim = domain.dimension();
        match &kind {
            EnergyKind::Quadratic(q) => check_quadratic(q, dim)?,
            EnergyKind::Wiggly {
                base,
                amplitude_scale,
                ..
            } => {
                check_quadratic(base, dim)?;
                if !(amplitude_scale.is_finite() && *amplitude_scale > 0.0) {
                    return Err(Error::InvalidInput(
                        "wiggly amplitude_scale must be positive".into(),
                    ));
                }
            }
            EnergyKind::ConvexPerturbed { base, .. } => check_quadratic(base, dim)?,
            EnergyKind::CustomSmooth { .. } => {
                if dim != 1 {
                    return Err(Error::InvalidInput(
                        "custom_smooth energies are one-dimensional".into(),
                    ));
                }
            }
        }
        Ok(Self { kind, domain })
    }

    pub fn quadratic(domain: SpaceDescriptor, weights: Vec<f64>, center: Vec<f64>) -> Result<Self> {
        let center = Point::new(center)?;
        Self::new(
            EnergyKind::Quadratic(QuadraticSpec { weights, center }),
            domain,
        )
    }

    pub fn wiggly(
        domain: SpaceDescriptor,
        weights: Vec<f64>,
        center: Vec<f64>,
        amplitude_scale: f64,
    ) -> Result<Self> {
        let center = Point::new(center)?;
        Self::new(
            EnergyKind::Wiggly {
                base: QuadraticSpec { weights, center },
                amplitude_scale,
                oscillation: Oscillation::CosXiOverEps,
            },
            domain,
        )
    }

    pub fn convex_perturbed(
        domain: SpaceDescriptor,
        weights: Vec<f64>,
        center: Vec<f64>,
    ) -> Result<Self> {
        let center = Point::new(center)?;
        Self::new(
            EnergyKind::ConvexPerturbed {
                base: QuadraticSpec { weights, center },
                perturbation: Perturbation::EpsAbs,
            },
            domain,
        )
    }

    /// One-dimensional Euclidean custom energy.
    pub fn custom(expression: &str, gamma_limit: Option<&str>) -> Result<Self> {
        Self::new(
            EnergyKind::CustomSmooth {
                expression: CustomExpr::parse(expression)?,
                gamma_limit: gamma_limit.map(CustomExpr::parse).transpose()?,
            },
            SpaceDescriptor::euclidean(1),
        )
    }

    pub fn kind(&self) -> &EnergyKind {
        &self.kind
    }

    pub fn kind_name(&self) -> &'static str {
        self.kind.name()
    }

    pub fn domain(&self) -> &SpaceDescriptor {
        &self.domain
    }

    pub fn dimension(&self) -> usize {
        self.domain.dimension()
    }

    pub(crate) fn term(&self, i: usize) -> Term<'_> {
        match &self.kind {
            EnergyKind::Quadratic(q) => Term::Quadratic {
                w: q.weights[i],
                b: q.center.coords()[i],
            },
            EnergyKind::Wiggly {
                base,
                amplitude_scale,
                ..
            } => Term::Wiggly {
                w: base.weights[i],
                b: base.center.coords()[i],
                amp: *amplitude_scale,
            },
            EnergyKind::ConvexPerturbed { base, .. } => Term::ConvexPerturbed {
                w: base.weights[i],
                b: base.center.coords()[i],
            },
            EnergyKind::CustomSmooth { expression, .. } => Term::Custom(expression),
        }
    }

    /// True when φ_ε does not depend on ε.
    pub fn is_eps_independent(&self) -> bool {
        match &self.kind {
            EnergyKind::Quadratic(_) => true,
            EnergyKind::CustomSmooth { expression, .. } => !expression.depends_on_eps(),
            _ => false,
        }
    }

    pub(crate) fn check_eps(eps: f64) -> Result<()> {
        if eps.is_finite() && eps > 0.0 {
            Ok(())
        } else {
            Err(Error::InvalidInput(format!(
                "eps must be positive, got {eps}"
            )))
        }
    }

    /// φ_ε(x).
    pub fn eval(&self, eps: f64, x: &Point) -> Result<f64> {
        Self::check_eps(eps)?;
        self.domain.check(x)?;
        let v = self.eval_unchecked(eps, x.coords());
        if v.is_nan() || v.is_infinite() {
            return Err(Error::Evaluation {
                x: x.coords().to_vec(),
                reason: format!("energy evaluated to {v}"),
            });
        }
        Ok(v)
    }

    #[inline]
    pub(crate) fn eval_unchecked(&self, eps: f64, x: &[f64]) -> f64 {
        x.iter()
            .enumerate()
            .map(|(i, &xi)| self.term(i).value(eps, xi))
            .sum()
    }

    /// Closed-form gradient. Absent for `convex_perturbed`, which is not
    /// differentiable on the coordinate hyperplanes.
    pub fn gradient(&self, eps: f64, x: &Point) -> Result<Vec<f64>> {
        Self::check_eps(eps)?;
        self.domain.check(x)?;
        if matches!(self.kind, EnergyKind::ConvexPerturbed { .. }) {
            return Err(Error::CapabilityAbsent {
                capability: "gradient",
                kind: self.kind_name(),
            });
        }
        let g: Vec<f64> = x
            .coords()
            .iter()
            .enumerate()
            .map(|(i, &xi)| self.term(i).derivative(eps, xi).unwrap_or(f64::NAN))
            .collect();
        if g.iter().any(|v| !v.is_finite()) {
            return Err(Error::Evaluation {
                x: x.coords().to_vec(),
                reason: "gradient is not finite".into(),
            });
        }
        Ok(g)
    }

    /// Closed-form descending slope: the dual norm of the least-norm
    /// subgradient. Available for the built-in kinds.
    pub fn exact_slope(&self, eps: f64, x: &Point) -> Result<f64> {
        Self::check_eps(eps)?;
        self.domain.check(x)?;
        let mut g = Vec::with_capacity(x.dim());
        for (i, &xi) in x.coords().iter().enumerate() {
            match self.term(i).min_norm_subgradient(eps, xi) {
                Some(v) => g.push(v),
                None => {
                    return Err(Error::CapabilityAbsent {
                        capability: "exact_slope",
                        kind: self.kind_name(),
                    })
                }
            }
        }
        Ok(self.domain.dual_norm(&g))
    }

    /// The Γ-limit as ε → 0, as an ε-independent spec.
    pub fn gamma_limit(&self) -> Result<EnergySpec> {
        let kind = match &self.kind {
            EnergyKind::Quadratic(_) => self.kind.clone(),
            EnergyKind::Wiggly { base, .. } | EnergyKind::ConvexPerturbed { base, .. } => {
                EnergyKind::Quadratic(base.clone())
            }
            EnergyKind::CustomSmooth {
                gamma_limit: Some(limit),
                ..
            } => EnergyKind::CustomSmooth {
                expression: limit.clone(),
                gamma_limit: Some(limit.clone()),
            },
            EnergyKind::CustomSmooth { .. } => {
                return Err(Error::CapabilityAbsent {
                    capability: "gamma_limit",
                    kind: self.kind_name(),
                })
            }
        };
        Ok(EnergySpec {
            kind,
            domain: self.domain.clone(),
        })
    }

    /// Exact gradient flow of a quadratic energy in the (diagonal) metric:
    /// `m_i u_i' = -w_i (u_i - b_i)`.
    pub fn quadratic_flow(&self, initial: &Point) -> Result<GradientFlow> {
        self.domain.check(initial)?;
        let EnergyKind::Quadratic(q) = &self.kind else {
            return Err(Error::CapabilityAbsent {
                capability: "exact_gradient_flow",
                kind: self.kind_name(),
            });
        };
        let rates = q
            .weights
            .iter()
            .enumerate()
            .map(|(i, w)| w / self.domain.weight(i))
            .collect();
        Ok(GradientFlow {
            initial: initial.coords().to_vec(),
            center: q.center.coords().to_vec(),
            rates,
        })
    }

    fn default_certificate(&self, eps_grid: &[f64]) -> Option<CertificateProposal> {
        let n = self.dimension() as f64;
        let eps_max = eps_grid.iter().cloned().fold(0.0, f64::max);
        match &self.kind {
            EnergyKind::Quadratic(_) | EnergyKind::ConvexPerturbed { .. } => {
                Some(CertificateProposal {
                    tau_star: 1.0,
                    c_star: 0.0,
                })
            }
            EnergyKind::Wiggly {
                amplitude_scale, ..
            } => Some(CertificateProposal {
                tau_star: 1.0,
                c_star: -amplitude_scale * n * eps_max,
            }),
            EnergyKind::CustomSmooth { .. } => None,
        }
    }
}

impl<'de> Deserialize<'de> for EnergySpec {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        struct Raw {
            kind: EnergyKind,
            domain: SpaceDescriptor,
        }
        let raw = Raw::deserialize(d)?;
        EnergySpec::new(raw.kind, raw.domain).map_err(serde::de::Error::custom)
    }
}

/// Closed-form gradient flow of a quadratic energy.
#[derive(Debug, Clone)]
pub struct GradientFlow {
    initial: Vec<f64>,
    center: Vec<f64>,
    rates: Vec<f64>,
}

impl GradientFlow {
    pub fn at(&self, t: f64) -> Point {
        Point::from_finite(
            self.initial
                .iter()
                .zip(&self.center)
                .zip(&self.rates)
                .map(|((u0, b), r)| b + (u0 - b) * (-r * t).exp())
                .collect(),
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CertificateProposal {
    pub tau_star: f64,
    pub c_star: f64,
}

/// Empirical evidence for the coercivity bound
/// `φ_ε(v) + d(v, u*)/(2τ*) ≥ C*` over a grid of ε.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct WellPosednessCertificate {
    pub tau_star: f64,
    pub c_star: f64,
    pub compactness_note: String,
    pub checked_eps_grid: Vec<f64>,
    pub samples_checked: usize,
    /// Smallest sampled value of the left-hand side.
    pub min_observed: f64,
}

const CERT_SEED: u64 = 0x5eed_ce47;

/// Sample the coercivity bound on log-spaced radii around `u*` (up to 10³)
/// plus the coordinate rays, for every ε in the grid. Fails with the first
/// violating witness.
pub fn certify_well_posedness(
    spec: &EnergySpec,
    eps_grid: &[f64],
    sample_budget: usize,
    proposal: Option<CertificateProposal>,
) -> Result<WellPosednessCertificate> {
    if eps_grid.is_empty() {
        return Err(Error::InvalidInput("eps_grid must be nonempty".into()));
    }
    for &e in eps_grid {
        EnergySpec::check_eps(e)?;
    }
    let proposal = match proposal {
        Some(p) => p,
        None => spec
            .default_certificate(eps_grid)
            .ok_or(Error::CapabilityAbsent {
                capability: "default_certificate",
                kind: spec.kind_name(),
            })?,
    };
    if !(proposal.tau_star.is_finite() && proposal.tau_star > 0.0) {
        return Err(Error::InvalidInput("tau_star must be positive".into()));
    }
    let space = spec.domain();
    let n = space.dimension();
    let base = space.base_point().coords().to_vec();

    let mut samples: Vec<Vec<f64>> = vec![base.clone()];
    for k in -3..=3 {
        let r = 10f64.powi(k);
        for i in 0..n {
            for s in [-1.0, 1.0] {
                let mut v = base.clone();
                v[i] += s * r / space.weight(i).sqrt();
                samples.push(v);
            }
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(CERT_SEED);
    let target = sample_budget.max(samples.len());
    while samples.len() < target {
        let r = 10f64.powf(rng.gen_range(-3.0..3.0));
        let dir: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let norm = space.distance_unchecked(&dir, &vec![0.0; n]);
        if norm < 1e-9 {
            continue;
        }
        samples.push(
            base.iter()
                .zip(&dir)
                .map(|(b, d)| b + r * d / norm)
                .collect(),
        );
    }

    let slack = 1e-12 * (1.0 + proposal.c_star.abs());
    let mut min_observed = f64::INFINITY;
    for &eps in eps_grid {
        for v in &samples {
            let phi = spec.eval_unchecked(eps, v);
            let value = phi + space.distance_unchecked(v, &base) / (2.0 * proposal.tau_star);
            if value.is_nan() {
                return Err(Error::Evaluation {
                    x: v.clone(),
                    reason: format!("energy is NaN at eps={eps}"),
                });
            }
            if value < proposal.c_star - slack {
                return Err(Error::CertificateFailure {
                    eps,
                    witness: Point::from_finite(v.clone()),
                    value,
                    c_star: proposal.c_star,
                });
            }
            min_observed = min_observed.min(value);
        }
    }

    Ok(WellPosednessCertificate {
        tau_star: proposal.tau_star,
        c_star: proposal.c_star,
        compactness_note: format!(
            "sublevels {{d^2(u,u*) <= C, |phi_eps(u)| <= C}} are closed and bounded in R^{n} \
             for the {} kind, hence compact; not checked by sampling",
            spec.kind_name()
        ),
        checked_eps_grid: eps_grid.to_vec(),
        samples_checked: samples.len() * eps_grid.len(),
        min_observed,
    })
}

/// Metric-kind label used in reports.
pub fn metric_label(space: &SpaceDescriptor) -> &'static str {
    match space.metric() {
        MetricKind::Euclidean => "euclidean",
        MetricKind::DiagonalWeighted { .. } => "diagonal_weighted",
    }
}
