//! Scenario descriptions: what to integrate, at which ε, with which options.

use std::f64::consts::FRAC_PI_2;

use serde::{Deserialize, Serialize};

use crate::asymptotics::{geometric_grid, Perturbation, SweepOptions};
use crate::dynamics::{InitialData, IntegratorConfig, LemmaBoxes, Problem};
use crate::error::{Error, Result};
use crate::impulse::{DeltaNet, WaveProfile};
use crate::manifold::ChartManifold;

/// `"sphere"`, `"half-plane"`, `"euclidean:<n>"` or a custom metric table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ManifoldSpec {
    Builtin(String),
    Custom {
        name: String,
        coords: Vec<String>,
        metric: Vec<Vec<String>>,
        bounds: Vec<[f64; 2]>,
    },
}

/// An explicit list or `"start:stop:count"` (geometric).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum EpsGrid {
    List(Vec<f64>),
    Range(String),
}

impl EpsGrid {
    pub fn parse_range(spec: &str) -> Result<Vec<f64>> {
        let parts: Vec<&str> = spec.split(':').collect();
        let bad = || Error::Parameter(format!("eps grid `{spec}` must look like start:stop:count"));
        if parts.len() != 3 {
            return Err(bad());
        }
        let start: f64 = parts[0].trim().parse().map_err(|_| bad())?;
        let stop: f64 = parts[1].trim().parse().map_err(|_| bad())?;
        let count: usize = parts[2].trim().parse().map_err(|_| bad())?;
        geometric_grid(start, stop, count)
    }

    pub fn values(&self) -> Result<Vec<f64>> {
        match self {
            EpsGrid::List(v) => Ok(v.clone()),
            EpsGrid::Range(s) => Self::parse_range(s),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ValidateOptions {
    pub eps_list: Vec<f64>,
    pub quad_tol: f64,
}

impl Default for ValidateOptions {
    fn default() -> Self {
        ValidateOptions {
            eps_list: vec![1e-1, 1e-2, 1e-3, 1e-4],
            quad_tol: 1e-10,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct StabilityOptions {
    pub q: Vec<u32>,
    pub perturbation: Perturbation,
}

impl Default for StabilityOptions {
    fn default() -> Self {
        StabilityOptions {
            q: vec![1, 2],
            perturbation: Perturbation::default(),
        }
    }
}

fn default_net() -> String {
    "bump".into()
}

fn default_horizon() -> f64 {
    2.0
}

fn default_output() -> String {
    "out".into()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub id: String,
    pub manifold: ManifoldSpec,
    pub profile: String,
    #[serde(default = "default_net")]
    pub net: String,
    pub data: InitialData,
    #[serde(default = "default_horizon")]
    pub horizon: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eps: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eps_grid: Option<EpsGrid>,
    #[serde(default)]
    pub integrator: IntegratorConfig,
    #[serde(default = "default_output")]
    pub output: String,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub sweep: SweepOptions,
    #[serde(default)]
    pub lemma: LemmaBoxes,
    #[serde(default)]
    pub stability: StabilityOptions,
    #[serde(default)]
    pub validate: ValidateOptions,
}

/// A config with every name resolved.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub config: ScenarioConfig,
    pub problem: Problem,
    pub eps: Vec<f64>,
}

impl Scenario {
    pub fn id(&self) -> &str {
        &self.config.id
    }

    pub fn data(&self) -> &InitialData {
        &self.config.data
    }

    pub fn integrator(&self) -> &IntegratorConfig {
        &self.config.integrator
    }
}

fn at(key: &str) -> impl Fn(Error) -> Error + '_ {
    move |e| match e {
        Error::Config { .. } => e,
        other => Error::config(key, other.to_string()),
    }
}

impl ScenarioConfig {
    pub fn manifold(&self) -> Result<ChartManifold> {
        match &self.manifold {
            ManifoldSpec::Builtin(name) => ChartManifold::builtin(name).map_err(at("manifold")),
            ManifoldSpec::Custom {
                name,
                coords,
                metric,
                bounds,
            } => {
                let refs: Vec<&str> = coords.iter().map(String::as_str).collect();
                let b: Vec<(f64, f64)> = bounds.iter().map(|[lo, hi]| (*lo, *hi)).collect();
                ChartManifold::custom(name, &refs, metric, &b).map_err(at("manifold"))
            }
        }
    }

    /// ε values requested by `eps` and `eps_grid`, largest first.
    pub fn eps_values(&self) -> Result<Vec<f64>> {
        let mut v = Vec::new();
        if let Some(e) = self.eps {
            v.push(e);
        }
        if let Some(g) = &self.eps_grid {
            v.extend(g.values().map_err(at("eps_grid"))?);
        }
        if v.is_empty() {
            return Err(Error::config("eps", "neither eps nor eps_grid is set"));
        }
        let min = self.integrator.min_eps;
        for &e in &v {
            if !(e >= min && e <= 1.0) {
                let key = if Some(e) == self.eps {
                    "eps"
                } else {
                    "eps_grid"
                };
                return Err(Error::config(key, format!("{e} is outside [{min}, 1]")));
            }
        }
        v.sort_by(|a, b| b.total_cmp(a));
        v.dedup();
        Ok(v)
    }

    pub fn resolve(&self) -> Result<Scenario> {
        if self.id.is_empty()
            || !self
                .id
                .chars()
                .all(|c| c.is_ascii_alphanumeric() || c == '-' || c == '_' || c == '.')
        {
            return Err(Error::config(
                "id",
                "must be non-empty and use only letters, digits, '-', '_' or '.'",
            ));
        }
        let manifold = self.manifold()?;
        let n = manifold.dim();
        let coords = manifold.coord_refs();
        let profile =
            WaveProfile::parse(&self.profile, &self.profile, &coords).map_err(at("profile"))?;
        let net = DeltaNet::by_name(&self.net).map_err(at("net"))?;
        self.integrator.validate().map_err(at("integrator"))?;
        let d = &self.data;
        if d.x0.len() != n {
            return Err(Error::config(
                "data.x0",
                format!("has {} components, manifold has dimension {n}", d.x0.len()),
            ));
        }
        if d.xdot0.len() != n {
            return Err(Error::config(
                "data.xdot0",
                format!(
                    "has {} components, manifold has dimension {n}",
                    d.xdot0.len()
                ),
            ));
        }
        manifold.check_domain(&d.x0).map_err(at("data.x0"))?;
        if !(self.horizon > 0.0 && self.horizon.is_finite()) {
            return Err(Error::config("horizon", "must be positive"));
        }
        let eps = self.eps_values()?;
        if !(d.u0 <= -eps[0]) {
            return Err(Error::config(
                "data.u0",
                format!(
                    "must lie before the impulse region (-{}, {})",
                    eps[0], eps[0]
                ),
            ));
        }
        let problem = Problem::new(manifold, profile, net).map_err(at("profile"))?;
        Ok(Scenario {
            config: self.clone(),
            problem,
            eps,
        })
    }
}

fn shipped(
    id: &str,
    manifold: &str,
    profile: &str,
    data: InitialData,
    lemma: LemmaBoxes,
) -> ScenarioConfig {
    ScenarioConfig {
        id: id.into(),
        manifold: ManifoldSpec::Builtin(manifold.into()),
        profile: profile.into(),
        net: default_net(),
        data,
        horizon: default_horizon(),
        eps: None,
        eps_grid: Some(EpsGrid::List(vec![1e-1, 1e-2, 1e-3, 1e-4])),
        integrator: IntegratorConfig::default(),
        output: default_output(),
        seed: 0,
        sweep: SweepOptions::default(),
        lemma,
        stability: StabilityOptions::default(),
        validate: ValidateOptions::default(),
    }
}

/// Scenarios shipped with the crate, one per builtin geometry.
pub fn shipped_scenarios() -> Vec<ScenarioConfig> {
    vec![
        shipped(
            "flat-quadratic",
            "euclidean:2",
            "x^2 - y^2",
            InitialData::new(0.0, 0.0, vec![1.0, 0.0], vec![0.0, 0.0]),
            LemmaBoxes { b: 1.0, c: 1.0 },
        ),
        shipped(
            "flat-linear-1d",
            "euclidean:1",
            "2*x",
            InitialData::new(0.0, 1.0, vec![0.0], vec![0.5]),
            LemmaBoxes { b: 1.0, c: 1.0 },
        ),
        shipped(
            "sphere-cos",
            "sphere",
            "cos(theta)",
            InitialData::new(0.0, 0.0, vec![FRAC_PI_2, -1.0], vec![0.0, 1.0]),
            LemmaBoxes { b: 0.5, c: 0.5 },
        ),
        shipped(
            "half-plane-linear",
            "half-plane",
            "x",
            InitialData::new(0.0, 0.0, vec![0.0, 1.0], vec![1.0, 0.0]),
            LemmaBoxes { b: 0.5, c: 0.5 },
        ),
    ]
}

pub fn shipped_scenario(id: &str) -> Result<ScenarioConfig> {
    shipped_scenarios()
        .into_iter()
        .find(|s| s.id == id)
        .ok_or_else(|| Error::Parameter(format!("no shipped scenario `{id}`")))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::verify_lemma_bounds;

    #[test]
    fn shipped_scenarios_resolve() {
        for s in shipped_scenarios() {
            let r = s.resolve().unwrap();
            assert_eq!(r.eps, vec![1e-1, 1e-2, 1e-3, 1e-4]);
            assert_eq!(r.problem.dim(), s.data.x0.len());
        }
        assert!(shipped_scenario("nope").is_err());
    }

    #[test]
    fn dimension_mismatch_names_key() {
        let mut s = shipped_scenario("flat-quadratic").unwrap();
        s.data.x0 = vec![1.0, 0.0, 0.0];
        match s.resolve() {
            Err(Error::Config { key, .. }) => assert_eq!(key, "data.x0"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn bad_names_and_eps() {
        let base = shipped_scenario("sphere-cos").unwrap();
        let key_of = |s: ScenarioConfig| match s.resolve() {
            Err(Error::Config { key, .. }) => key,
            other => panic!("{other:?}"),
        };
        let mut s = base.clone();
        s.net = "gauss".into();
        assert_eq!(key_of(s), "net");
        let mut s = base.clone();
        s.profile = "cos(x)".into();
        assert_eq!(key_of(s), "profile");
        let mut s = base.clone();
        s.manifold = ManifoldSpec::Builtin("torus".into());
        assert_eq!(key_of(s), "manifold");
        let mut s = base.clone();
        s.eps_grid = Some(EpsGrid::Range("1e-1:1e-8:3".into()));
        assert_eq!(key_of(s), "eps_grid");
        let mut s = base.clone();
        s.eps_grid = None;
        assert_eq!(key_of(s), "eps");
        let mut s = base;
        s.data.u0 = -0.05;
        assert_eq!(key_of(s), "data.u0");
    }

    #[test]
    fn grid_specs() {
        let g = EpsGrid::Range("1e-1:1e-3:3".into()).values().unwrap();
        assert_eq!(g.len(), 3);
        assert!((g[1] - 1e-2).abs() < 1e-15);
        assert!(EpsGrid::parse_range("1e-1:1e-3").is_err());
        assert!(EpsGrid::parse_range("a:b:c").is_err());
    }

    #[test]
    fn custom_manifold_spec() {
        let mut s = shipped_scenario("flat-quadratic").unwrap();
        s.manifold = ManifoldSpec::Custom {
            name: "conformal".into(),
            coords: vec!["x".into(), "y".into()],
            metric: vec![
                vec!["exp(x)".into(), "0".into()],
                vec!["0".into(), "exp(x)".into()],
            ],
            bounds: vec![[-5.0, 5.0], [-5.0, 5.0]],
        };
        let r = s.resolve().unwrap();
        assert_eq!(r.problem.manifold.name(), "conformal");
    }

    #[test]
    fn lemma_bounds_hold_for_shipped() {
        for s in shipped_scenarios() {
            let r = s.resolve().unwrap();
            for &eps in &[1e-1, 1e-3] {
                let rep =
                    verify_lemma_bounds(&r.problem, eps, r.data(), r.integrator(), s.lemma, s.seed)
                        .unwrap();
                assert!(rep.holds, "{}: {rep:?}", s.id);
                assert!(rep.b_margin > 0.0 && rep.c_margin > 0.0);
            }
        }
    }
}
