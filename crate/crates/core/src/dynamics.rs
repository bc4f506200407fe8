//! The regularized geodesic initial value problem.
//!
//! Unknowns are `(v, x)` as functions of the affine parameter `u`, driven by
//!
//! ```text
//! v̈   = −δ_ε Σ_j ∂_j f(x) ẋ^j − ½ f(x) δ̇_ε
//! ẍ^k = −Γ^k_{ij}(x) ẋ^i ẋ^j + ½ δ_ε h^{km}(x) ∂_m f(x)
//! ```
//!
//! The default state carries `p = v̇ + ½ f(x) δ_ε` instead of `v̇`, which
//! removes `δ̇_ε ~ ε⁻²` from the right-hand side:
//! `ṗ = −½ δ_ε Σ_j ∂_j f(x) ẋ^j`, `v̇ = p − ½ f(x) δ_ε`.

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::impulse::{DeltaNet, WaveProfile};
use crate::manifold::ChartManifold;
use crate::ode::{self, FineWindow, OdeSystem, Solution, SolverOptions, SolverStats};

/// Smallest ε accepted by default.
pub const MIN_EPS: f64 = 1e-6;

/// Background, profile and net of one impulsive wave.
#[derive(Debug, Clone)]
pub struct Problem {
    pub manifold: Arc<ChartManifold>,
    pub profile: Arc<WaveProfile>,
    pub net: Arc<DeltaNet>,
}

impl Problem {
    pub fn new(manifold: ChartManifold, profile: WaveProfile, net: DeltaNet) -> Result<Self> {
        if profile.dim() != manifold.dim() {
            return Err(Error::Parameter(format!(
                "profile `{}` has {} variables, manifold `{}` has dimension {}",
                profile.label(),
                profile.dim(),
                manifold.name(),
                manifold.dim()
            )));
        }
        Ok(Problem {
            manifold: Arc::new(manifold),
            profile: Arc::new(profile),
            net: Arc::new(net),
        })
    }

    pub fn with_net(&self, net: DeltaNet) -> Self {
        Problem {
            manifold: Arc::clone(&self.manifold),
            profile: Arc::clone(&self.profile),
            net: Arc::new(net),
        }
    }

    pub fn with_profile(&self, profile: WaveProfile) -> Self {
        Problem {
            manifold: Arc::clone(&self.manifold),
            profile: Arc::new(profile),
            net: Arc::clone(&self.net),
        }
    }

    pub fn dim(&self) -> usize {
        self.manifold.dim()
    }

    /// `½ h^{km} ∂_m f`, without domain checks.
    pub(crate) fn half_grad(&self, x: &[f64]) -> Result<Vec<f64>> {
        Ok(self
            .manifold
            .grad_raw(&self.profile, x)?
            .into_iter()
            .map(|g| 0.5 * g)
            .collect())
    }
}

/// Geodesic data `(v₀, v̇₀, x₀, ẋ₀)` posed at `u0`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InitialData {
    pub v0: f64,
    pub vdot0: f64,
    pub x0: Vec<f64>,
    pub xdot0: Vec<f64>,
    #[serde(default = "default_u0")]
    pub u0: f64,
}

fn default_u0() -> f64 {
    -1.0
}

impl InitialData {
    pub fn new(v0: f64, vdot0: f64, x0: Vec<f64>, xdot0: Vec<f64>) -> Self {
        InitialData {
            v0,
            vdot0,
            x0,
            xdot0,
            u0: -1.0,
        }
    }

    pub fn at(mut self, u0: f64) -> Self {
        self.u0 = u0;
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct IntegratorConfig {
    pub rel_tol: f64,
    pub abs_tol: f64,
    pub max_step: f64,
    /// Steps inside `[−ε, ε]` are capped at `ε / impulse_refine`.
    pub impulse_refine: f64,
    pub min_eps: f64,
}

impl Default for IntegratorConfig {
    fn default() -> Self {
        IntegratorConfig {
            rel_tol: 1e-10,
            abs_tol: 1e-12,
            max_step: 0.05,
            impulse_refine: 16.0,
            min_eps: MIN_EPS,
        }
    }
}

impl IntegratorConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.rel_tol > 0.0 && self.abs_tol > 0.0) {
            return Err(Error::Parameter(
                "integrator tolerances must be positive".into(),
            ));
        }
        if !(self.impulse_refine >= 4.0) {
            return Err(Error::Parameter("impulse_refine must be at least 4".into()));
        }
        if !(self.max_step > 0.0) {
            return Err(Error::Parameter("max_step must be positive".into()));
        }
        Ok(())
    }

    /// Scale of the local error control, used as the fitting floor unit.
    pub fn tolerance(&self) -> f64 {
        self.rel_tol.max(self.abs_tol)
    }
}

/// Which second-order form of the `v` equation is integrated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Formulation {
    /// State `(v, p)` with `p = v̇ + ½ f δ_ε`.
    Momentum,
    /// State `(v, v̇)` with the `δ̇_ε` term evaluated directly.
    Raw,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeodesicState {
    pub u: f64,
    pub v: f64,
    /// `v̇ + ½ f(x) δ_ε(u)`.
    pub p: f64,
    pub x: Vec<f64>,
    pub xdot: Vec<f64>,
}

impl GeodesicState {
    pub fn vdot(&self, problem: &Problem, eps: f64) -> f64 {
        self.p - 0.5 * problem.profile.value(&self.x) * problem.net.value(eps, self.u)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StateDerivative {
    pub du: f64,
    pub dv: f64,
    pub dp: f64,
    pub dx: Vec<f64>,
    pub dxdot: Vec<f64>,
}

pub(crate) fn check_eps(eps: f64, min_eps: f64) -> Result<()> {
    if eps > 0.0 && eps <= 1.0 && eps >= min_eps {
        Ok(())
    } else {
        Err(Error::Parameter(format!(
            "eps = {eps} is outside [{min_eps}, 1]"
        )))
    }
}

/// Right-hand side of the momentum form at a state.
pub fn rhs(problem: &Problem, eps: f64, s: &GeodesicState) -> Result<StateDerivative> {
    check_eps(eps, 0.0)?;
    let n = problem.dim();
    if s.x.len() != n || s.xdot.len() != n {
        return Err(Error::Parameter(format!("state must have dimension {n}")));
    }
    problem.manifold.check_domain(&s.x)?;
    let flow = RegularizedFlow {
        problem,
        eps,
        formulation: Formulation::Momentum,
    };
    let y = pack(s.v, s.p, &s.x, &s.xdot);
    let mut dy = vec![0.0; y.len()];
    flow.eval(s.u, &y, &mut dy)?;
    Ok(StateDerivative {
        du: 1.0,
        dv: dy[0],
        dp: dy[1],
        dx: dy[2..2 + n].to_vec(),
        dxdot: dy[2 + n..].to_vec(),
    })
}

pub(crate) fn pack(v: f64, w: f64, x: &[f64], xdot: &[f64]) -> Vec<f64> {
    let mut y = Vec::with_capacity(2 + 2 * x.len());
    y.push(v);
    y.push(w);
    y.extend_from_slice(x);
    y.extend_from_slice(xdot);
    y
}

pub(crate) struct RegularizedFlow<'a> {
    pub problem: &'a Problem,
    pub eps: f64,
    pub formulation: Formulation,
}

impl OdeSystem for RegularizedFlow<'_> {
    fn dim(&self) -> usize {
        2 + 2 * self.problem.dim()
    }

    fn eval(&self, u: f64, y: &[f64], dy: &mut [f64]) -> Result<()> {
        let n = self.problem.dim();
        let w = y[1];
        let x = &y[2..2 + n];
        let xd = &y[2 + n..];
        let m = &self.problem.manifold;
        m.check_domain(x)?;
        let accel = m.christoffel_raw(x)?.contract(xd, xd);
        dy[2..2 + n].copy_from_slice(xd);
        for k in 0..n {
            dy[2 + n + k] = -accel[k];
        }
        let delta = self.problem.net.value(self.eps, u);
        let f = &self.problem.profile;
        match self.formulation {
            Formulation::Momentum => {
                if delta == 0.0 {
                    dy[0] = w;
                    dy[1] = 0.0;
                } else {
                    let df = f.partials(x);
                    let flux: f64 = df.iter().zip(xd).map(|(a, b)| a * b).sum();
                    dy[0] = w - 0.5 * f.value(x) * delta;
                    dy[1] = -0.5 * delta * flux;
                }
            }
            Formulation::Raw => {
                let ddelta = self.problem.net.derivative(self.eps, u);
                dy[0] = w;
                dy[1] = if delta == 0.0 && ddelta == 0.0 {
                    0.0
                } else {
                    let df = f.partials(x);
                    let flux: f64 = df.iter().zip(xd).map(|(a, b)| a * b).sum();
                    -delta * flux - 0.5 * f.value(x) * ddelta
                };
            }
        }
        if delta != 0.0 {
            let g = self.problem.half_grad(x)?;
            for k in 0..n {
                dy[2 + n + k] += delta * g[k];
            }
        }
        Ok(())
    }

    fn exit_point(&self, y: &[f64]) -> Vec<f64> {
        y[2..2 + self.problem.dim()].to_vec()
    }
}

/// An integrated regularized geodesic with dense output.
#[derive(Debug, Clone)]
pub struct Trajectory {
    pub eps: f64,
    pub formulation: Formulation,
    problem: Problem,
    solution: Solution,
}

impl Trajectory {
    pub fn problem(&self) -> &Problem {
        &self.problem
    }

    pub fn u_range(&self) -> (f64, f64) {
        self.solution.u_range()
    }

    pub fn stats(&self) -> SolverStats {
        self.solution.stats
    }

    fn unpack(&self, u: f64, y: &[f64]) -> GeodesicState {
        let n = self.problem.dim();
        let x = y[2..2 + n].to_vec();
        let p = match self.formulation {
            Formulation::Momentum => y[1],
            Formulation::Raw => {
                y[1] + 0.5 * self.problem.profile.value(&x) * self.problem.net.value(self.eps, u)
            }
        };
        GeodesicState {
            u,
            v: y[0],
            p,
            x,
            xdot: y[2 + n..].to_vec(),
        }
    }

    /// Accepted integrator steps.
    pub fn samples(&self) -> Vec<GeodesicState> {
        self.solution
            .us
            .iter()
            .zip(&self.solution.ys)
            .map(|(&u, y)| self.unpack(u, y))
            .collect()
    }

    pub fn sample_us(&self) -> &[f64] {
        &self.solution.us
    }

    pub fn state_at(&self, u: f64) -> Result<GeodesicState> {
        let (lo, hi) = self.u_range();
        let y = self.solution.eval(u).ok_or(Error::Range { u, lo, hi })?;
        Ok(self.unpack(u, &y))
    }

    pub fn vdot(&self, s: &GeodesicState) -> f64 {
        s.vdot(&self.problem, self.eps)
    }

    pub fn end_state(&self) -> GeodesicState {
        let u = self.u_range().1;
        self.unpack(u, self.solution.last())
    }
}

pub(crate) fn solver_options(
    eps: f64,
    cfg: &IntegratorConfig,
    second_order: Vec<(usize, usize)>,
) -> SolverOptions {
    SolverOptions {
        rtol: cfg.rel_tol,
        atol: cfg.abs_tol,
        max_step: cfg.max_step,
        breakpoints: vec![-eps, eps],
        fine_window: Some(FineWindow {
            lo: -eps,
            hi: eps,
            max_step: eps / cfg.impulse_refine,
        }),
        second_order,
        ..Default::default()
    }
}

/// Integrates from `data.u0` to `u_end` in the momentum form.
pub fn integrate(
    problem: &Problem,
    eps: f64,
    data: &InitialData,
    u_end: f64,
    cfg: &IntegratorConfig,
) -> Result<Trajectory> {
    integrate_window(
        problem,
        eps,
        data,
        data.u0,
        u_end,
        cfg,
        Formulation::Momentum,
    )
}

/// Integrates over `[u_begin, u_end]`, running backward from `data.u0` when `u_begin < u0`.
pub fn integrate_window(
    problem: &Problem,
    eps: f64,
    data: &InitialData,
    u_begin: f64,
    u_end: f64,
    cfg: &IntegratorConfig,
    formulation: Formulation,
) -> Result<Trajectory> {
    cfg.validate()?;
    check_eps(eps, cfg.min_eps)?;
    let n = problem.dim();
    if data.x0.len() != n || data.xdot0.len() != n {
        return Err(Error::Parameter(format!(
            "initial data must have dimension {n}"
        )));
    }
    problem.manifold.check_domain(&data.x0)?;
    let u0 = data.u0;
    if !(u_end > u0) {
        return Err(Error::Parameter(format!(
            "u_end = {u_end} must exceed the data parameter {u0}"
        )));
    }
    if u_begin > u0 {
        return Err(Error::Parameter(format!(
            "window start {u_begin} lies after the data parameter {u0}"
        )));
    }
    let (lo, _) = problem.net.support(eps);
    if u0 > lo && u0 < u_end {
        return Err(Error::Parameter(format!(
            "data at u = {u0} lies inside the impulse region starting at {lo}"
        )));
    }

    let w0 = match formulation {
        Formulation::Momentum => {
            data.vdot0 + 0.5 * problem.profile.value(&data.x0) * problem.net.value(eps, u0)
        }
        Formulation::Raw => data.vdot0,
    };
    let y0 = pack(data.v0, w0, &data.x0, &data.xdot0);
    let flow = RegularizedFlow {
        problem,
        eps,
        formulation,
    };
    let opts = solver_options(eps, cfg, (0..n).map(|i| (2 + i, 2 + n + i)).collect());
    let forward = ode::solve(&flow, u0, &y0, u_end, &opts)?;
    let solution = if u_begin < u0 {
        let backward = ode::solve(&flow, u0, &y0, u_begin, &opts)?;
        Solution::concat(backward, forward)
    } else {
        forward
    };
    Ok(Trajectory {
        eps,
        formulation,
        problem: problem.clone(),
        solution,
    })
}

/// Length of the guaranteed existence interval `[−ε, α − ε]`.
///
/// Ratios with a vanishing denominator count as `+∞`.
pub fn existence_interval_alpha(
    b: f64,
    c: f64,
    f1_sup: f64,
    f2_norm: f64,
    k_sup: f64,
    l1_bound: f64,
    xdot0_norm: f64,
) -> f64 {
    let ratio = |num: f64, den: f64| if den > 0.0 { num / den } else { f64::INFINITY };
    let first = ratio(b, xdot0_norm + f1_sup + l1_bound * f2_norm + k_sup);
    let second = ratio(c, f1_sup + k_sup);
    1.0f64.min(first).min(second)
}

/// Radii of the boxes around the data used for the existence interval.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LemmaBoxes {
    pub b: f64,
    pub c: f64,
}

impl Default for LemmaBoxes {
    fn default() -> Self {
        LemmaBoxes { b: 1.0, c: 1.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LemmaReport {
    pub eps: f64,
    pub b: f64,
    pub c: f64,
    pub l1_bound: f64,
    pub f1_sup: f64,
    pub f2_sup: f64,
    pub alpha: f64,
    pub max_position_excursion: f64,
    pub max_velocity_excursion: f64,
    /// `b − max |x − x₀|`.
    pub b_margin: f64,
    /// `c + C‖F₂‖ − max |ẋ − ẋ₀|`.
    pub c_margin: f64,
    pub holds: bool,
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|a| a * a).sum::<f64>().sqrt()
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(p, q)| (p - q) * (p - q))
        .sum::<f64>()
        .sqrt()
}

fn sample_ball(rng: &mut ChaCha8Rng, center: &[f64], radius: f64, on_boundary: bool) -> Vec<f64> {
    let n = center.len();
    loop {
        let d: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..=1.0)).collect();
        let r = norm(&d);
        if r > 1.0 || r == 0.0 {
            continue;
        }
        let scale = if on_boundary { radius / r } else { radius };
        return center.iter().zip(&d).map(|(c, e)| c + scale * e).collect();
    }
}

/// Number of random points used to estimate the sup norms over the boxes.
pub const LEMMA_SAMPLES: usize = 4000;

/// Estimates the sup norms over the boxes around the data, computes `α`,
/// integrates on `[−ε, α − ε]` with the data posed at `−ε` and checks that the
/// position and velocity stay inside their boxes.
pub fn verify_lemma_bounds(
    problem: &Problem,
    eps: f64,
    data: &InitialData,
    cfg: &IntegratorConfig,
    boxes: LemmaBoxes,
    seed: u64,
) -> Result<LemmaReport> {
    let LemmaBoxes { b, c } = boxes;
    if !(b > 0.0 && c > 0.0) {
        return Err(Error::Parameter(
            "box radii b and c must be positive".into(),
        ));
    }
    let m = &problem.manifold;
    let x0 = &data.x0;
    let xd0 = &data.xdot0;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let mut ys = vec![x0.clone()];
    for i in 0..x0.len() {
        for s in [-1.0, 1.0] {
            let mut p = x0.clone();
            p[i] += s * b;
            ys.push(p);
        }
    }
    for k in 0..LEMMA_SAMPLES {
        ys.push(sample_ball(&mut rng, x0, b, k % 2 == 0));
    }
    for y in &ys {
        if !m.in_domain(y) {
            return Err(Error::Parameter(format!(
                "position box of radius {b} around {x0:?} leaves the chart domain at {y:?}"
            )));
        }
    }
    let mut f2_sup: f64 = 0.0;
    for y in &ys {
        f2_sup = f2_sup.max(norm(&problem.half_grad(y)?));
    }
    let l1_bound = problem.net.l1_norm();
    let velocity_radius = c + l1_bound * f2_sup;

    let mut f1_sup: f64 = 0.0;
    if m.has_analytic_christoffel() && matches!(m.geometry(), crate::manifold::Geometry::Euclidean)
    {
        // Γ ≡ 0
    } else {
        for (k, y) in ys.iter().enumerate() {
            let gamma = m.christoffel_raw(y)?;
            for j in 0..4 {
                let z = if k == 0 && j == 0 {
                    xd0.clone()
                } else {
                    sample_ball(&mut rng, xd0, velocity_radius, j % 2 == 0)
                };
                f1_sup = f1_sup.max(norm(&gamma.contract(&z, &z)));
            }
        }
    }

    let alpha = existence_interval_alpha(b, c, f1_sup, f2_sup, 0.0, l1_bound, norm(xd0));
    let posed = InitialData {
        u0: -eps,
        ..data.clone()
    };
    let traj = integrate(problem, eps, &posed, alpha - eps, cfg)?;

    let mut dx_max: f64 = 0.0;
    let mut dv_max: f64 = 0.0;
    let mut check = |s: &GeodesicState| {
        dx_max = dx_max.max(dist(&s.x, x0));
        dv_max = dv_max.max(dist(&s.xdot, xd0));
    };
    for s in traj.samples() {
        check(&s);
    }
    let grid = 2000;
    for k in 0..=grid {
        let u = -eps + alpha * k as f64 / grid as f64;
        check(&traj.state_at(u.min(alpha - eps))?);
    }
    let b_margin = b - dx_max;
    let c_margin = velocity_radius - dv_max;
    Ok(LemmaReport {
        eps,
        b,
        c,
        l1_bound,
        f1_sup,
        f2_sup,
        alpha,
        max_position_excursion: dx_max,
        max_velocity_excursion: dv_max,
        b_margin,
        c_margin,
        holds: b_margin >= 0.0 && c_margin >= 0.0,
    })
}
