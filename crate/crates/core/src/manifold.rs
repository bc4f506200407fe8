//! Riemannian backgrounds presented in a single global chart.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::expr::Expr;
use crate::impulse::WaveProfile;
use crate::ode::{self, OdeSystem, Solution, SolverOptions};

/// Default polar margin of the sphere chart, in radians.
pub const SPHERE_MARGIN: f64 = 1e-3;
/// Default central-difference step for metrics without analytic Christoffel symbols.
pub const FD_STEP: f64 = 1e-5;
/// Default h-speed drift tolerance for background geodesics.
pub const GEODESIC_TOL: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq)]
pub enum Geometry {
    /// Flat ℝⁿ.
    Euclidean,
    /// Unit sphere in the `(theta, phi)` chart, `theta ∈ (margin, π − margin)`.
    Sphere {
        margin: f64,
    },
    /// Poincaré half-plane `y > 0` with `h = (dx² + dy²)/y²`.
    HalfPlane,
    Custom(CustomMetric),
}

/// Metric components given as expressions over an open coordinate box.
#[derive(Debug, Clone, PartialEq)]
pub struct CustomMetric {
    components: Vec<Expr>,
    bounds: Vec<(f64, f64)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChartManifold {
    name: String,
    coords: Vec<String>,
    geometry: Geometry,
    fd_step: f64,
}

/// Christoffel symbols `Γ^k_{ij}` stored densely as `[k][i][j]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Christoffel {
    n: usize,
    data: Vec<f64>,
}

impl Christoffel {
    pub fn zeros(n: usize) -> Self {
        Christoffel {
            n,
            data: vec![0.0; n * n * n],
        }
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn get(&self, k: usize, i: usize, j: usize) -> f64 {
        self.data[(k * self.n + i) * self.n + j]
    }

    fn set_sym(&mut self, k: usize, i: usize, j: usize, value: f64) {
        let n = self.n;
        self.data[(k * n + i) * n + j] = value;
        self.data[(k * n + j) * n + i] = value;
    }

    /// `Γ^k_{ij} a^i b^j` for every `k`.
    pub fn contract(&self, a: &[f64], b: &[f64]) -> Vec<f64> {
        let n = self.n;
        (0..n)
            .map(|k| {
                let mut acc = 0.0;
                for i in 0..n {
                    if a[i] == 0.0 {
                        continue;
                    }
                    for j in 0..n {
                        acc += self.get(k, i, j) * a[i] * b[j];
                    }
                }
                acc
            })
            .collect()
    }

    pub fn max_abs_diff(&self, other: &Christoffel) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

impl ChartManifold {
    pub fn euclidean(n: usize) -> Self {
        let coords = match n {
            1 => vec!["x".to_string()],
            2 => vec!["x".into(), "y".into()],
            3 => vec!["x".into(), "y".into(), "z".into()],
            _ => (1..=n).map(|i| format!("x{i}")).collect(),
        };
        ChartManifold {
            name: format!("euclidean:{n}"),
            coords,
            geometry: Geometry::Euclidean,
            fd_step: FD_STEP,
        }
    }

    pub fn sphere() -> Self {
        Self::sphere_with_margin(SPHERE_MARGIN)
    }

    pub fn sphere_with_margin(margin: f64) -> Self {
        ChartManifold {
            name: "sphere".into(),
            coords: vec!["theta".into(), "phi".into()],
            geometry: Geometry::Sphere { margin },
            fd_step: FD_STEP,
        }
    }

    pub fn half_plane() -> Self {
        ChartManifold {
            name: "half-plane".into(),
            coords: vec!["x".into(), "y".into()],
            geometry: Geometry::HalfPlane,
            fd_step: FD_STEP,
        }
    }

    /// Resolves `euclidean:<n>`, `sphere` or `half-plane`.
    pub fn builtin(name: &str) -> Result<Self> {
        match name {
            "sphere" => Ok(Self::sphere()),
            "half-plane" => Ok(Self::half_plane()),
            _ => {
                let n = name
                    .strip_prefix("euclidean:")
                    .and_then(|d| d.parse::<usize>().ok())
                    .filter(|&n| n > 0)
                    .ok_or_else(|| {
                        Error::Parameter(format!(
                            "unknown manifold `{name}` (expected euclidean:<n>, sphere, half-plane)"
                        ))
                    })?;
                Ok(Self::euclidean(n))
            }
        }
    }

    /// Metric from a row-major matrix of expressions; the domain is the open
    /// box given by `bounds` (use infinities for unbounded directions).
    pub fn custom(
        name: &str,
        coords: &[&str],
        metric: &[Vec<String>],
        bounds: &[(f64, f64)],
    ) -> Result<Self> {
        let n = coords.len();
        if n == 0 {
            return Err(Error::Parameter("custom metric needs coordinates".into()));
        }
        if metric.len() != n || metric.iter().any(|row| row.len() != n) {
            return Err(Error::Parameter(format!(
                "custom metric must be a {n}x{n} matrix"
            )));
        }
        if bounds.len() != n || bounds.iter().any(|(lo, hi)| !(lo < hi)) {
            return Err(Error::Parameter(format!(
                "custom metric needs {n} ordered coordinate bounds"
            )));
        }
        let mut components = Vec::with_capacity(n * n);
        for row in metric {
            for src in row {
                components.push(Expr::parse(src, coords)?);
            }
        }
        for i in 0..n {
            for j in 0..i {
                if components[i * n + j] != components[j * n + i] {
                    return Err(Error::Geometry(format!(
                        "custom metric is not symmetric at ({i}, {j})"
                    )));
                }
            }
        }
        Ok(ChartManifold {
            name: name.to_string(),
            coords: coords.iter().map(|s| s.to_string()).collect(),
            geometry: Geometry::Custom(CustomMetric {
                components,
                bounds: bounds.to_vec(),
            }),
            fd_step: FD_STEP,
        })
    }

    pub fn with_fd_step(mut self, step: f64) -> Self {
        self.fd_step = step;
        self
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn dim(&self) -> usize {
        self.coords.len()
    }

    pub fn coords(&self) -> &[String] {
        &self.coords
    }

    pub fn coord_refs(&self) -> Vec<&str> {
        self.coords.iter().map(String::as_str).collect()
    }

    pub fn geometry(&self) -> &Geometry {
        &self.geometry
    }

    pub fn has_analytic_christoffel(&self) -> bool {
        !matches!(self.geometry, Geometry::Custom(_))
    }

    pub fn in_domain(&self, x: &[f64]) -> bool {
        if x.len() != self.dim() || x.iter().any(|v| !v.is_finite()) {
            return false;
        }
        match &self.geometry {
            Geometry::Euclidean => true,
            Geometry::Sphere { margin } => x[0] > *margin && x[0] < std::f64::consts::PI - margin,
            Geometry::HalfPlane => x[1] > 0.0,
            Geometry::Custom(c) => x
                .iter()
                .zip(&c.bounds)
                .all(|(v, (lo, hi))| v > lo && v < hi),
        }
    }

    pub fn check_domain(&self, x: &[f64]) -> Result<()> {
        if self.in_domain(x) {
            Ok(())
        } else {
            Err(Error::Domain {
                chart: self.name.clone(),
                point: x.to_vec(),
            })
        }
    }

    fn metric_raw(&self, x: &[f64]) -> DMatrix<f64> {
        let n = self.dim();
        match &self.geometry {
            Geometry::Euclidean => DMatrix::identity(n, n),
            Geometry::Sphere { .. } => {
                let s = x[0].sin();
                DMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![1.0, s * s]))
            }
            Geometry::HalfPlane => DMatrix::identity(2, 2) / (x[1] * x[1]),
            Geometry::Custom(c) => DMatrix::from_fn(n, n, |i, j| c.components[i * n + j].eval(x)),
        }
    }

    pub fn metric_at(&self, x: &[f64]) -> Result<DMatrix<f64>> {
        self.check_domain(x)?;
        let h = self.metric_raw(x);
        let asym = (&h - h.transpose()).amax();
        if asym > 1e-12 * h.amax().max(1.0) || h.clone().cholesky().is_none() {
            return Err(Error::Geometry(format!(
                "metric of `{}` is not symmetric positive-definite at {x:?}",
                self.name
            )));
        }
        Ok(h)
    }

    pub(crate) fn inverse_metric_raw(&self, x: &[f64]) -> Result<DMatrix<f64>> {
        let n = self.dim();
        match &self.geometry {
            Geometry::Euclidean => Ok(DMatrix::identity(n, n)),
            Geometry::Sphere { .. } => {
                let s = x[0].sin();
                Ok(DMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![
                    1.0,
                    1.0 / (s * s),
                ])))
            }
            Geometry::HalfPlane => Ok(DMatrix::identity(2, 2) * (x[1] * x[1])),
            Geometry::Custom(_) => self
                .metric_raw(x)
                .cholesky()
                .map(|c| c.inverse())
                .ok_or_else(|| {
                    Error::Geometry(format!(
                        "metric of `{}` is not positive-definite at {x:?}",
                        self.name
                    ))
                }),
        }
    }

    pub fn inverse_metric_at(&self, x: &[f64]) -> Result<DMatrix<f64>> {
        self.check_domain(x)?;
        self.inverse_metric_raw(x)
    }

    pub fn christoffel_at(&self, x: &[f64]) -> Result<Christoffel> {
        self.check_domain(x)?;
        self.christoffel_raw(x)
    }

    pub(crate) fn christoffel_raw(&self, x: &[f64]) -> Result<Christoffel> {
        let n = self.dim();
        match &self.geometry {
            Geometry::Euclidean => Ok(Christoffel::zeros(n)),
            Geometry::Sphere { .. } => {
                let (s, c) = x[0].sin_cos();
                let mut g = Christoffel::zeros(2);
                g.set_sym(0, 1, 1, -s * c);
                g.set_sym(1, 0, 1, c / s);
                Ok(g)
            }
            Geometry::HalfPlane => {
                let y = x[1];
                let mut g = Christoffel::zeros(2);
                g.set_sym(0, 0, 1, -1.0 / y);
                g.set_sym(1, 0, 0, 1.0 / y);
                g.set_sym(1, 1, 1, -1.0 / y);
                Ok(g)
            }
            Geometry::Custom(_) => self.christoffel_fd(x, self.fd_step),
        }
    }

    /// `½ h^{kl}(∂_i h_{jl} + ∂_j h_{il} − ∂_l h_{ij})` with central differences of step `step`.
    pub fn christoffel_fd(&self, x: &[f64], step: f64) -> Result<Christoffel> {
        self.check_domain(x)?;
        let n = self.dim();
        let mut dh = Vec::with_capacity(n);
        for m in 0..n {
            let mut xp = x.to_vec();
            let mut xm = x.to_vec();
            xp[m] += step;
            xm[m] -= step;
            if !self.in_domain(&xp) || !self.in_domain(&xm) {
                return Err(Error::Differentiation {
                    chart: self.name.clone(),
                    point: x.to_vec(),
                    step,
                });
            }
            dh.push((self.metric_raw(&xp) - self.metric_raw(&xm)) / (2.0 * step));
        }
        let hinv = self.inverse_metric_raw(x)?;
        let mut g = Christoffel::zeros(n);
        for k in 0..n {
            for i in 0..n {
                for j in i..n {
                    let mut acc = 0.0;
                    for l in 0..n {
                        acc += hinv[(k, l)] * (dh[i][(j, l)] + dh[j][(i, l)] - dh[l][(i, j)]);
                    }
                    g.set_sym(k, i, j, 0.5 * acc);
                }
            }
        }
        Ok(g)
    }

    /// `h^{km} ∂_m f`.
    pub fn grad_h(&self, profile: &WaveProfile, x: &[f64]) -> Result<Vec<f64>> {
        self.check_domain(x)?;
        self.grad_raw(profile, x)
    }

    pub(crate) fn grad_raw(&self, profile: &WaveProfile, x: &[f64]) -> Result<Vec<f64>> {
        let df = profile.partials(x);
        let hinv = self.inverse_metric_raw(x)?;
        Ok((0..self.dim())
            .map(|k| (0..self.dim()).map(|m| hinv[(k, m)] * df[m]).sum())
            .collect())
    }

    pub fn norm_h(&self, x: &[f64], v: &[f64]) -> f64 {
        let h = self.metric_raw(x);
        let mut acc = 0.0;
        for i in 0..self.dim() {
            for j in 0..self.dim() {
                acc += h[(i, j)] * v[i] * v[j];
            }
        }
        acc.max(0.0).sqrt()
    }

    pub fn background_geodesic(
        &self,
        x0: &[f64],
        xdot0: &[f64],
        u0: f64,
        u1: f64,
        tol: f64,
    ) -> Result<BackgroundGeodesic> {
        let n = self.dim();
        if x0.len() != n || xdot0.len() != n {
            return Err(Error::Parameter(format!(
                "geodesic data must have dimension {n}"
            )));
        }
        if !(tol > 0.0) {
            return Err(Error::Parameter(
                "geodesic tolerance must be positive".into(),
            ));
        }
        self.check_domain(x0)?;
        let mut y0 = x0.to_vec();
        y0.extend_from_slice(xdot0);
        let opts = SolverOptions {
            rtol: (tol * 1e-2).max(1e-13),
            atol: (tol * 1e-3).max(1e-15),
            max_step: 0.1,
            second_order: (0..n).map(|i| (i, n + i)).collect(),
            ..Default::default()
        };
        let solution = ode::solve(&GeodesicFlow { manifold: self }, u0, &y0, u1, &opts)?;
        let geodesic = BackgroundGeodesic {
            start_u: u0,
            dim: n,
            solution,
        };
        let speed0 = self.norm_h(x0, xdot0);
        for (u, x, xd) in geodesic.samples() {
            let drift = (self.norm_h(&x, &xd) - speed0).abs();
            if drift > tol * (1.0 + (u - u0).abs()) {
                return Err(Error::Integrator {
                    u,
                    reason: format!("h-speed drift {drift:e} exceeds tolerance {tol:e}"),
                });
            }
        }
        Ok(geodesic)
    }
}

struct GeodesicFlow<'a> {
    manifold: &'a ChartManifold,
}

impl OdeSystem for GeodesicFlow<'_> {
    fn dim(&self) -> usize {
        2 * self.manifold.dim()
    }

    fn eval(&self, _u: f64, y: &[f64], dy: &mut [f64]) -> Result<()> {
        let n = self.manifold.dim();
        let (x, xd) = y.split_at(n);
        self.manifold.check_domain(x)?;
        let gamma = self.manifold.christoffel_raw(x)?;
        let acc = gamma.contract(xd, xd);
        dy[..n].copy_from_slice(xd);
        for k in 0..n {
            dy[n + k] = -acc[k];
        }
        Ok(())
    }

    fn exit_point(&self, y: &[f64]) -> Vec<f64> {
        y[..self.manifold.dim()].to_vec()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeodesicSample {
    pub u: f64,
    pub x: Vec<f64>,
    pub xdot: Vec<f64>,
}

/// A solution of `∇_ẋ ẋ = 0` with dense output.
#[derive(Debug, Clone)]
pub struct BackgroundGeodesic {
    pub start_u: f64,
    dim: usize,
    solution: Solution,
}

impl BackgroundGeodesic {
    pub fn u_range(&self) -> (f64, f64) {
        self.solution.u_range()
    }

    pub fn samples(&self) -> impl Iterator<Item = (f64, Vec<f64>, Vec<f64>)> + '_ {
        let n = self.dim;
        self.solution
            .us
            .iter()
            .zip(&self.solution.ys)
            .map(move |(&u, y)| (u, y[..n].to_vec(), y[n..].to_vec()))
    }

    pub fn sampled_states(&self) -> Vec<GeodesicSample> {
        self.samples()
            .map(|(u, x, xdot)| GeodesicSample { u, x, xdot })
            .collect()
    }

    pub fn state_at(&self, u: f64) -> Result<(Vec<f64>, Vec<f64>)> {
        let (lo, hi) = self.u_range();
        let y = self.solution.eval(u).ok_or(Error::Range { u, lo, hi })?;
        Ok((y[..self.dim].to_vec(), y[self.dim..].to_vec()))
    }

    pub fn stats(&self) -> ode::SolverStats {
        self.solution.stats
    }

    /// Joins a piece ending where `after` begins.
    pub(crate) fn joined(before: BackgroundGeodesic, after: BackgroundGeodesic) -> Self {
        BackgroundGeodesic {
            start_u: after.start_u,
            dim: after.dim,
            solution: Solution::concat(before.solution, after.solution),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::f64::consts::{FRAC_PI_2, FRAC_PI_4, PI};

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn metric_values_at_reference_points() {
        let e = ChartManifold::euclidean(2).metric_at(&[3.0, -1.0]).unwrap();
        assert_eq!(e, DMatrix::identity(2, 2));
        let hp = ChartManifold::half_plane().metric_at(&[0.0, 2.0]).unwrap();
        assert!(close(hp[(0, 0)], 0.25, 1e-15) && close(hp[(1, 1)], 0.25, 1e-15));
        assert_eq!(hp[(0, 1)], 0.0);
        let s = ChartManifold::sphere()
            .metric_at(&[FRAC_PI_2, 0.0])
            .unwrap();
        assert!(close(s[(0, 0)], 1.0, 1e-15) && close(s[(1, 1)], 1.0, 1e-15));
    }

    #[test]
    fn domain_errors() {
        let hp = ChartManifold::half_plane();
        assert!(matches!(
            hp.metric_at(&[0.0, -1.0]),
            Err(Error::Domain { .. })
        ));
        let s = ChartManifold::sphere();
        assert!(matches!(
            s.christoffel_at(&[1e-4, 0.0]),
            Err(Error::Domain { .. })
        ));
        assert!(matches!(
            s.christoffel_fd(&[SPHERE_MARGIN + 1e-6, 0.0], 1e-5),
            Err(Error::Differentiation { .. })
        ));
    }

    #[test]
    fn non_spd_custom_metric_is_rejected() {
        let m = ChartManifold::custom(
            "indefinite",
            &["a", "b"],
            &[vec!["1".into(), "0".into()], vec!["0".into(), "-1".into()]],
            &[(-1.0, 1.0), (-1.0, 1.0)],
        )
        .unwrap();
        assert!(matches!(m.metric_at(&[0.0, 0.0]), Err(Error::Geometry(_))));
        let asym = ChartManifold::custom(
            "asym",
            &["a", "b"],
            &[vec!["1".into(), "a".into()], vec!["0".into(), "1".into()]],
            &[(-1.0, 1.0), (-1.0, 1.0)],
        );
        assert!(matches!(asym, Err(Error::Geometry(_))));
    }

    #[test]
    fn christoffel_reference_values() {
        let e = ChartManifold::euclidean(3)
            .christoffel_at(&[0.3, 1.0, -2.0])
            .unwrap();
        assert!(e.data.iter().all(|&v| v == 0.0));

        let s = ChartManifold::sphere()
            .christoffel_at(&[FRAC_PI_4, 0.0])
            .unwrap();
        assert!(close(s.get(0, 1, 1), -0.5, 1e-15));
        assert!(close(s.get(1, 0, 1), 1.0, 1e-15));
        assert!(close(s.get(1, 1, 0), 1.0, 1e-15));
        assert_eq!(s.get(0, 0, 0), 0.0);
        assert_eq!(s.get(1, 1, 1), 0.0);

        let h = ChartManifold::half_plane()
            .christoffel_at(&[0.0, 1.0])
            .unwrap();
        assert_eq!(h.get(0, 0, 1), -1.0);
        assert_eq!(h.get(1, 0, 0), 1.0);
        assert_eq!(h.get(1, 1, 1), -1.0);
        assert_eq!(h.get(0, 0, 0), 0.0);
        assert_eq!(h.get(1, 0, 1), 0.0);
    }

    #[test]
    fn custom_sphere_matches_builtin_through_finite_differences() {
        let custom = ChartManifold::custom(
            "round",
            &["theta", "phi"],
            &[
                vec!["1".into(), "0".into()],
                vec!["0".into(), "sin(theta)^2".into()],
            ],
            &[(0.01, PI - 0.01), (f64::NEG_INFINITY, f64::INFINITY)],
        )
        .unwrap();
        assert!(!custom.has_analytic_christoffel());
        let x = [1.1, 0.4];
        let fd = custom.christoffel_at(&x).unwrap();
        let exact = ChartManifold::sphere().christoffel_at(&x).unwrap();
        assert!(fd.max_abs_diff(&exact) < 1e-8);
    }

    #[test]
    fn grad_h_reference_values() {
        let flat = ChartManifold::euclidean(2);
        let f = WaveProfile::parse("saddle", "x^2 - y^2", &flat.coord_refs()).unwrap();
        assert_eq!(flat.grad_h(&f, &[1.0, 0.0]).unwrap(), vec![2.0, -0.0]);
        let c = WaveProfile::parse("const", "3.5", &flat.coord_refs()).unwrap();
        assert_eq!(flat.grad_h(&c, &[0.2, 0.7]).unwrap(), vec![0.0, 0.0]);
        let hp = ChartManifold::half_plane();
        let lin = WaveProfile::parse("linear", "x", &hp.coord_refs()).unwrap();
        assert_eq!(hp.grad_h(&lin, &[0.0, 2.0]).unwrap(), vec![4.0, 0.0]);
    }

    #[test]
    fn straight_line_and_equator() {
        let flat = ChartManifold::euclidean(2);
        let g = flat
            .background_geodesic(&[0.0, 0.0], &[1.0, 2.0], 0.0, 1.0, GEODESIC_TOL)
            .unwrap();
        let (x, v) = g.state_at(1.0).unwrap();
        assert!(close(x[0], 1.0, 1e-12) && close(x[1], 2.0, 1e-12));
        assert!(close(v[0], 1.0, 1e-12) && close(v[1], 2.0, 1e-12));

        let s = ChartManifold::sphere();
        let g = s
            .background_geodesic(&[FRAC_PI_2, 0.0], &[0.0, 1.0], 0.0, FRAC_PI_2, GEODESIC_TOL)
            .unwrap();
        let (x, _) = g.state_at(FRAC_PI_2).unwrap();
        assert!(close(x[0], FRAC_PI_2, 1e-10) && close(x[1], FRAC_PI_2, 1e-10));
    }

    #[test]
    fn half_plane_geodesic_is_unit_semicircle() {
        let hp = ChartManifold::half_plane();
        let g = hp
            .background_geodesic(&[0.0, 1.0], &[1.0, 0.0], 0.0, 1.0, GEODESIC_TOL)
            .unwrap();
        for k in 0..=20 {
            let u = k as f64 / 20.0;
            let (x, _) = g.state_at(u).unwrap();
            // closed form with unit hyperbolic speed: (tanh u, sech u)
            assert!(close(x[0], u.tanh(), 1e-9), "u={u}");
            assert!(close(x[1], 1.0 / u.cosh(), 1e-9), "u={u}");
            assert!(close(x[0] * x[0] + x[1] * x[1], 1.0, 1e-9));
        }
        assert!(matches!(g.state_at(1.5), Err(Error::Range { .. })));
    }

    #[test]
    fn sphere_geodesic_through_pole_leaves_chart() {
        let s = ChartManifold::sphere();
        let err = s
            .background_geodesic(&[1.0, 0.0], &[-1.0, 0.0], 0.0, 2.0, GEODESIC_TOL)
            .unwrap_err();
        match err {
            Error::ChartExit { u, point } => {
                assert!(u > 0.99 && u < 1.0, "exit at {u}");
                assert!(point[0] > SPHERE_MARGIN);
            }
            other => panic!("expected chart exit, got {other:?}"),
        }
    }

    #[test]
    fn forward_backward_reversibility() {
        let s = ChartManifold::sphere();
        let x0 = [1.2, 0.3];
        let v0 = [0.4, 0.9];
        let fwd = s
            .background_geodesic(&x0, &v0, 0.0, 2.0, GEODESIC_TOL)
            .unwrap();
        let (x1, v1) = fwd.state_at(2.0).unwrap();
        let back = s
            .background_geodesic(&x1, &v1, 2.0, 0.0, GEODESIC_TOL)
            .unwrap();
        let (xr, vr) = back.state_at(0.0).unwrap();
        for i in 0..2 {
            assert!(close(xr[i], x0[i], 10.0 * GEODESIC_TOL));
            assert!(close(vr[i], v0[i], 10.0 * GEODESIC_TOL));
        }
    }

    /// Bounded box inside the chart domain for property tests.
    fn sample_box(m: &ChartManifold) -> Vec<(f64, f64)> {
        use std::f64::consts::PI;
        match &m.geometry {
            Geometry::Euclidean => vec![(-3.0, 3.0); m.dim()],
            Geometry::Sphere { margin } => vec![(margin + 0.05, PI - margin - 0.05), (-PI, PI)],
            Geometry::HalfPlane => vec![(-3.0, 3.0), (0.2, 3.0)],
            Geometry::Custom(_) => unreachable!("only builtins are sampled"),
        }
    }

    fn builtins() -> Vec<ChartManifold> {
        vec![
            ChartManifold::euclidean(2),
            ChartManifold::sphere(),
            ChartManifold::half_plane(),
        ]
    }

    proptest! {
        #[test]
        fn inverse_metric_round_trip(a in 0.0f64..1.0, b in 0.0f64..1.0) {
            for m in builtins() {
                let bx = sample_box(&m);
                let x: Vec<f64> = bx.iter().zip([a, b]).map(|((lo, hi), t)| lo + t * (hi - lo)).collect();
                let h = m.metric_at(&x).unwrap();
                let hinv = m.inverse_metric_at(&x).unwrap();
                let err = (h * hinv - DMatrix::identity(2, 2)).amax();
                prop_assert!(err <= 1e-10);
            }
        }

        #[test]
        fn christoffel_symmetric_and_consistent(a in 0.0f64..1.0, b in 0.0f64..1.0) {
            for m in builtins() {
                let bx = sample_box(&m);
                let x: Vec<f64> = bx.iter().zip([a, b]).map(|((lo, hi), t)| lo + t * (hi - lo)).collect();
                let g = m.christoffel_at(&x).unwrap();
                for k in 0..2 { for i in 0..2 { for j in 0..2 {
                    prop_assert_eq!(g.get(k, i, j), g.get(k, j, i));
                }}}
                let fd = m.christoffel_fd(&x, 1e-4).unwrap();
                prop_assert!(g.max_abs_diff(&fd) < 1e-5 * (1.0 + g.data.iter().fold(0.0f64, |m, v| m.max(v.abs()))));
            }
        }

        #[test]
        fn speed_is_conserved(theta in 0.6f64..2.5, vt in -1.0f64..1.0, vp in -1.0f64..1.0) {
            let s = ChartManifold::sphere();
            let x0 = [theta, 0.0];
            let v0 = [vt * 0.5, vp];
            let g = s.background_geodesic(&x0, &v0, 0.0, 1.0, GEODESIC_TOL).unwrap();
            let speed0 = s.norm_h(&x0, &v0);
            for (u, x, v) in g.samples() {
                prop_assert!((s.norm_h(&x, &v) - speed0).abs() <= GEODESIC_TOL * (1.0 + u));
            }
        }
    }
}
