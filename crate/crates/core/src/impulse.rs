//! Strict delta nets and wave profiles: the two factors of the impulsive term `f(x) D(u)`.
//!
//! A net is generated by a smooth mother function `ρ` supported in `(−1, 1)`
//! through `δ_ε(u) = ρ(u/ε)/ε`. Mothers are finite sums of rescaled copies of
//! the standard bump `exp(−1/(1−t²))`, which covers symmetric, asymmetric and
//! sign-changing examples with closed-form derivatives.

use std::sync::OnceLock;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::expr::Expr;
use crate::fit::loglog_fit;
use crate::quadrature::{adaptive_simpson, integrate_piecewise};

/// Quadrature tolerance for normalisation constants.
const NORMALISATION_TOL: f64 = 1e-12;

pub(crate) fn bump(s: f64) -> f64 {
    if s.abs() >= 1.0 {
        0.0
    } else {
        (-1.0 / (1.0 - s * s)).exp()
    }
}

fn bump_derivative(s: f64) -> f64 {
    if s.abs() >= 1.0 {
        0.0
    } else {
        let q = 1.0 - s * s;
        bump(s) * (-2.0 * s / (q * q))
    }
}

/// `1 / ∫ exp(−1/(1−t²)) dt`, roughly 2.2523.
pub fn bump_normalisation() -> f64 {
    static C: OnceLock<f64> = OnceLock::new();
    *C.get_or_init(|| {
        1.0 / adaptive_simpson(bump, -1.0, 1.0, NORMALISATION_TOL)
            .expect("standard bump integral converges")
    })
}

/// `weight · bump((t − center)/half_width)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BumpComponent {
    pub weight: f64,
    pub center: f64,
    pub half_width: f64,
}

impl BumpComponent {
    fn value(&self, t: f64) -> f64 {
        self.weight * bump((t - self.center) / self.half_width)
    }

    fn derivative(&self, t: f64) -> f64 {
        self.weight * bump_derivative((t - self.center) / self.half_width) / self.half_width
    }

    fn support(&self) -> (f64, f64) {
        (self.center - self.half_width, self.center + self.half_width)
    }
}

fn sum_value(parts: &[BumpComponent], t: f64) -> f64 {
    parts.iter().map(|p| p.value(t)).sum()
}

fn sum_derivative(parts: &[BumpComponent], t: f64) -> f64 {
    parts.iter().map(|p| p.derivative(t)).sum()
}

/// Adds `ε^{−growth} σ(u/ε)/ε` to a scaling net. Only used to build a family
/// whose L¹ norm is not uniformly bounded.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Modulation {
    pub parts: Vec<BumpComponent>,
    pub growth: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeltaNet {
    label: String,
    mother: Vec<BumpComponent>,
    modulation: Option<Modulation>,
    mass: f64,
    l1_norm: f64,
}

impl DeltaNet {
    /// Builds a scaling net from mother components and measures `∫ρ` and `∫|ρ|`.
    pub fn from_components(label: &str, mother: Vec<BumpComponent>) -> Result<Self> {
        if mother.is_empty() || mother.iter().any(|c| !(c.half_width > 0.0)) {
            return Err(Error::Parameter(format!(
                "net `{label}` needs components with positive width"
            )));
        }
        let mut net = DeltaNet {
            label: label.to_string(),
            mother,
            modulation: None,
            mass: 0.0,
            l1_norm: 0.0,
        };
        let (lo, hi) = net.mother_support();
        let breaks = net.mother_breaks();
        net.mass = integrate_piecewise(|t| net.mother(t), lo, hi, &breaks, NORMALISATION_TOL)?;
        net.l1_norm =
            integrate_piecewise(|t| net.mother(t).abs(), lo, hi, &breaks, NORMALISATION_TOL)?;
        Ok(net)
    }

    /// Symmetric standard bump, `∫ρ = 1`.
    pub fn standard_bump() -> Self {
        let c = bump_normalisation();
        Self::from_components(
            "bump",
            vec![BumpComponent {
                weight: c,
                center: 0.0,
                half_width: 1.0,
            }],
        )
        .expect("standard bump")
    }

    /// Bump supported in `(−1, 0.2)`.
    pub fn asymmetric_bump() -> Self {
        let c = bump_normalisation();
        Self::from_components(
            "bump-asym",
            vec![BumpComponent {
                weight: c / 0.6,
                center: -0.4,
                half_width: 0.6,
            }],
        )
        .expect("asymmetric bump")
    }

    /// `1.3·b(t+½) − 0.3·b(t−½)` with unit-mass half bumps: `∫ρ = 1`, `∫|ρ| = 1.6`.
    pub fn signed_bump() -> Self {
        let c = bump_normalisation() / 0.5;
        Self::from_components(
            "bump-signed",
            vec![
                BumpComponent {
                    weight: 1.3 * c,
                    center: -0.5,
                    half_width: 0.5,
                },
                BumpComponent {
                    weight: -0.3 * c,
                    center: 0.5,
                    half_width: 0.5,
                },
            ],
        )
        .expect("signed bump")
    }

    /// Unnormalised bump with mass 2; violates the mass condition.
    pub fn mass_two_bump() -> Self {
        let c = bump_normalisation();
        Self::from_components(
            "bump-mass2",
            vec![BumpComponent {
                weight: 2.0 * c,
                center: 0.0,
                half_width: 1.0,
            }],
        )
        .expect("mass-two bump")
    }

    /// Unit-mass bump supported in `(−1.5, 1.5)`; violates the support condition.
    pub fn wide_bump() -> Self {
        let c = bump_normalisation();
        Self::from_components(
            "bump-wide",
            vec![BumpComponent {
                weight: c / 1.5,
                center: 0.0,
                half_width: 1.5,
            }],
        )
        .expect("wide bump")
    }

    /// Standard bump plus `ε^{−1/2}` times a zero-mass odd dipole; mass and
    /// support are fine but `∫|δ_ε|` grows without bound.
    pub fn l1_blowup_bump() -> Self {
        let c = bump_normalisation() / 0.5;
        let mut net = Self::standard_bump();
        net.label = "bump-l1-blowup".into();
        net.modulation = Some(Modulation {
            parts: vec![
                BumpComponent {
                    weight: c,
                    center: -0.5,
                    half_width: 0.5,
                },
                BumpComponent {
                    weight: -c,
                    center: 0.5,
                    half_width: 0.5,
                },
            ],
            growth: 0.5,
        });
        net
    }

    /// The strict nets used for simulation.
    pub fn shipped() -> Vec<DeltaNet> {
        vec![
            Self::standard_bump(),
            Self::asymmetric_bump(),
            Self::signed_bump(),
        ]
    }

    /// Families that each break exactly one strict-net condition.
    pub fn non_examples() -> Vec<DeltaNet> {
        vec![
            Self::wide_bump(),
            Self::mass_two_bump(),
            Self::l1_blowup_bump(),
        ]
    }

    pub fn by_name(name: &str) -> Result<Self> {
        match name {
            "bump" => Ok(Self::standard_bump()),
            "bump-asym" => Ok(Self::asymmetric_bump()),
            "bump-signed" => Ok(Self::signed_bump()),
            "bump-mass2" => Ok(Self::mass_two_bump()),
            "bump-wide" => Ok(Self::wide_bump()),
            "bump-l1-blowup" => Ok(Self::l1_blowup_bump()),
            _ => Err(Error::Parameter(format!(
                "unknown net `{name}` (expected bump, bump-asym, bump-signed, bump-mass2, bump-wide, bump-l1-blowup)"
            ))),
        }
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    /// `∫ρ`.
    pub fn mass(&self) -> f64 {
        self.mass
    }

    /// `∫|ρ|`; the uniform L¹ bound of the scaling family.
    pub fn l1_norm(&self) -> f64 {
        self.l1_norm
    }

    pub fn is_scaling(&self) -> bool {
        self.modulation.is_none()
    }

    /// Closed hull of the mother's support.
    pub fn mother_support(&self) -> (f64, f64) {
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        let parts = self
            .mother
            .iter()
            .chain(self.modulation.iter().flat_map(|m| m.parts.iter()));
        for p in parts {
            let (a, b) = p.support();
            lo = lo.min(a);
            hi = hi.max(b);
        }
        (lo, hi)
    }

    fn mother_breaks(&self) -> Vec<f64> {
        let parts = self
            .mother
            .iter()
            .chain(self.modulation.iter().flat_map(|m| m.parts.iter()));
        parts
            .flat_map(|p| {
                let (a, b) = p.support();
                [a, p.center, b]
            })
            .collect()
    }

    /// `ρ(t)`.
    pub fn mother(&self, t: f64) -> f64 {
        sum_value(&self.mother, t)
    }

    fn amplitude(&self, eps: f64) -> f64 {
        self.modulation
            .as_ref()
            .map_or(0.0, |m| eps.powf(-m.growth))
    }

    /// `δ_ε(u)` without parameter checks.
    pub fn value(&self, eps: f64, u: f64) -> f64 {
        let t = u / eps;
        let mut r = sum_value(&self.mother, t);
        if let Some(m) = &self.modulation {
            r += self.amplitude(eps) * sum_value(&m.parts, t);
        }
        r / eps
    }

    /// `δ̇_ε(u) = ρ'(u/ε)/ε²`.
    pub fn derivative(&self, eps: f64, u: f64) -> f64 {
        let t = u / eps;
        let mut r = sum_derivative(&self.mother, t);
        if let Some(m) = &self.modulation {
            r += self.amplitude(eps) * sum_derivative(&m.parts, t);
        }
        r / (eps * eps)
    }

    pub fn eval_delta(&self, eps: f64, u: f64) -> Result<f64> {
        check_eps(eps)?;
        Ok(self.value(eps, u))
    }

    /// Support of `δ_ε` in `u`.
    pub fn support(&self, eps: f64) -> (f64, f64) {
        let (lo, hi) = self.mother_support();
        (lo * eps, hi * eps)
    }

    fn breaks(&self, eps: f64) -> Vec<f64> {
        self.mother_breaks().into_iter().map(|t| t * eps).collect()
    }

    /// `∫ₐᵇ δ_ε(u) du`.
    pub fn delta_mass_partial(&self, eps: f64, a: f64, b: f64) -> Result<f64> {
        check_eps(eps)?;
        if a > b {
            return Err(Error::Parameter(format!("empty interval [{a}, {b}]")));
        }
        let (lo, hi) = self.support(eps);
        let (a, b) = (a.max(lo), b.min(hi));
        if a >= b {
            return Ok(0.0);
        }
        integrate_piecewise(|u| self.value(eps, u), a, b, &self.breaks(eps), 1e-13)
    }

    /// `∫|δ_ε|`, computed rather than read from metadata.
    pub fn l1_norm_at(&self, eps: f64, tol: f64) -> Result<f64> {
        check_eps(eps)?;
        let (lo, hi) = self.support(eps);
        integrate_piecewise(|u| self.value(eps, u).abs(), lo, hi, &self.breaks(eps), tol)
    }

    /// Checks the three strict delta net conditions on the given `ε` values.
    pub fn validate_strict(&self, eps_list: &[f64], quad_tol: f64) -> Result<ValidationReport> {
        if eps_list.is_empty() {
            return Err(Error::Parameter("eps list is empty".into()));
        }
        for &e in eps_list {
            check_eps(e)?;
        }
        if !(quad_tol > 0.0) {
            return Err(Error::Parameter(
                "quadrature tolerance must be positive".into(),
            ));
        }
        let integration_tol = (quad_tol * 1e-2).max(1e-14);

        // (i) support: probe a dense set of points outside (−ε, ε)
        let mut violation = None;
        'outer: for &eps in eps_list {
            let (lo, hi) = self.support(eps);
            let reach = lo.abs().max(hi.abs()).max(eps) * 1.5;
            let probes = 400;
            for k in 0..=probes {
                let r = eps + (reach - eps) * k as f64 / probes as f64;
                for u in [r, -r] {
                    let d = self.value(eps, u);
                    if d != 0.0 {
                        violation = Some((eps, u, d));
                        break 'outer;
                    }
                }
            }
        }
        let support = SupportVerdict {
            pass: violation.is_none(),
            violation: violation.map(|(eps, u, value)| SupportViolation { eps, u, value }),
        };

        // (ii) mass: ∫δ_ε over the full support, limit read off at the smallest ε
        let mut masses = Vec::with_capacity(eps_list.len());
        for &eps in eps_list {
            let (lo, hi) = self.support(eps);
            let m = integrate_piecewise(
                |u| self.value(eps, u),
                lo.min(-eps),
                hi.max(eps),
                &self.breaks(eps),
                integration_tol,
            )?;
            masses.push(m);
        }
        let smallest = eps_list
            .iter()
            .enumerate()
            .min_by(|a, b| a.1.total_cmp(b.1))
            .map(|(i, _)| i)
            .unwrap();
        let limit = masses[smallest];
        let mass = MassVerdict {
            pass: (limit - 1.0).abs() <= quad_tol,
            masses,
            limit,
        };

        // (iii) uniform L¹ bound: witnessed constant and power-law growth as ε ↓ 0
        let mut l1 = Vec::with_capacity(eps_list.len());
        for &eps in eps_list {
            l1.push(self.l1_norm_at(eps, integration_tol)?);
        }
        let witnessed = l1.iter().copied().fold(0.0, f64::max);
        let growth_exponent = loglog_fit(eps_list, &l1).map(|f| f.slope);
        let bounded = growth_exponent.is_none_or(|s| s >= -L1_GROWTH_SLACK);
        let l1_bound = L1Verdict {
            pass: bounded && witnessed.is_finite(),
            l1_norms: l1,
            witnessed_c: witnessed,
            growth_exponent,
        };

        Ok(ValidationReport {
            net: self.label.clone(),
            eps_list: eps_list.to_vec(),
            quad_tol,
            all_pass: support.pass && mass.pass && l1_bound.pass,
            support,
            mass,
            l1_bound,
        })
    }
}

/// Largest tolerated log–log growth rate of `‖δ_ε‖_{L¹}` as ε decreases.
pub const L1_GROWTH_SLACK: f64 = 0.05;

fn check_eps(eps: f64) -> Result<()> {
    if eps > 0.0 && eps <= 1.0 {
        Ok(())
    } else {
        Err(Error::Parameter(format!("eps = {eps} is not in (0, 1]")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Axiom {
    #[serde(rename = "support")]
    Support,
    #[serde(rename = "mass")]
    Mass,
    #[serde(rename = "l1-bound")]
    L1Bound,
}

impl std::fmt::Display for Axiom {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Axiom::Support => "(i) support in (-eps, eps)",
            Axiom::Mass => "(ii) mass tends to 1",
            Axiom::L1Bound => "(iii) uniform L1 bound",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SupportViolation {
    pub eps: f64,
    pub u: f64,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SupportVerdict {
    pub pass: bool,
    pub violation: Option<SupportViolation>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MassVerdict {
    pub pass: bool,
    pub masses: Vec<f64>,
    pub limit: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct L1Verdict {
    pub pass: bool,
    pub l1_norms: Vec<f64>,
    pub witnessed_c: f64,
    pub growth_exponent: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub net: String,
    pub eps_list: Vec<f64>,
    pub quad_tol: f64,
    pub support: SupportVerdict,
    pub mass: MassVerdict,
    pub l1_bound: L1Verdict,
    pub all_pass: bool,
}

impl ValidationReport {
    pub fn failed_axioms(&self) -> Vec<Axiom> {
        let mut out = Vec::new();
        if !self.support.pass {
            out.push(Axiom::Support);
        }
        if !self.mass.pass {
            out.push(Axiom::Mass);
        }
        if !self.l1_bound.pass {
            out.push(Axiom::L1Bound);
        }
        out
    }
}

/// The smooth profile `f` on the chart, with symbolic first and second partials.
#[derive(Debug, Clone, PartialEq)]
pub struct WaveProfile {
    label: String,
    source: String,
    expr: Expr,
    grad: Vec<Expr>,
    hess: Vec<Vec<Expr>>,
}

impl WaveProfile {
    pub fn parse(label: &str, source: &str, coords: &[&str]) -> Result<Self> {
        let expr = Expr::parse(source, coords)?;
        Ok(Self::from_expr(label, source, expr))
    }

    fn from_expr(label: &str, source: &str, expr: Expr) -> Self {
        let grad = expr.gradient();
        let hess = grad.iter().map(Expr::gradient).collect();
        WaveProfile {
            label: label.to_string(),
            source: source.to_string(),
            expr,
            grad,
            hess,
        }
    }

    pub fn zero(coords: &[&str]) -> Self {
        Self::from_expr("zero", "0", Expr::constant(0.0, coords))
    }

    /// `λ f`.
    pub fn scaled(&self, factor: f64) -> Self {
        let source = format!("{factor} * ({})", self.source);
        Self::from_expr(&self.label, &source, self.expr.scaled(factor))
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn source(&self) -> &str {
        &self.source
    }

    pub fn is_zero(&self) -> bool {
        self.expr.as_constant() == Some(0.0)
    }

    pub fn dim(&self) -> usize {
        self.grad.len()
    }

    pub fn value(&self, x: &[f64]) -> f64 {
        self.expr.eval(x)
    }

    /// `(∂₁f, …, ∂ₙf)`.
    pub fn partials(&self, x: &[f64]) -> Vec<f64> {
        self.grad.iter().map(|g| g.eval(x)).collect()
    }

    pub fn hessian(&self, x: &[f64]) -> Vec<Vec<f64>> {
        self.hess
            .iter()
            .map(|row| row.iter().map(|e| e.eval(x)).collect())
            .collect()
    }
}
