//! Distributional limit of the regularized geodesics.
//!
//! The `x` limit is a broken background geodesic: the geodesic through the
//! data up to `u = 0`, continued by the geodesic with refracted velocity
//! `ẋ(0) + ½ grad^h f(x(0))`. The `v` limit is
//! `w(u) − ½ f(x(0)) H(u) + s · u₊(u)` with `w(u) = v₀ + v̇₀ (1 + u)`.

use serde::{Deserialize, Serialize};

use crate::dynamics::InitialData;
use crate::error::{Error, Result};
use crate::impulse::WaveProfile;
use crate::manifold::{BackgroundGeodesic, ChartManifold, GeodesicSample, GEODESIC_TOL};

/// Default parameter range covered by the two pieces.
pub const DEFAULT_RANGE: (f64, f64) = (-2.0, 2.0);

/// Which slope multiplies the kink `u₊` in the `v` limit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum KinkConvention {
    /// `−Σ_j (ẋ^j(0) + ¼ grad^h f^j) ∂_j f`.
    #[default]
    Printed,
    /// Half of the printed slope, the value the regularized ODE converges to.
    Consistent,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VParams {
    pub v0: f64,
    pub vdot0: f64,
    pub u0: f64,
    /// Coefficient of `H(u)`.
    pub jump: f64,
    pub kink_slope: f64,
    pub kink_slope_consistent: f64,
}

impl VParams {
    pub fn slope(&self, kink: KinkConvention) -> f64 {
        match kink {
            KinkConvention::Printed => self.kink_slope,
            KinkConvention::Consistent => self.kink_slope_consistent,
        }
    }

    /// `v` limit at `u`, with `H(0) = 1`.
    pub fn value(&self, u: f64, kink: KinkConvention) -> f64 {
        let w = self.v0 + self.vdot0 * (u - self.u0);
        if u >= 0.0 {
            w + self.jump + self.slope(kink) * u
        } else {
            w
        }
    }
}

#[derive(Debug, Clone)]
pub struct BrokenGeodesic {
    pub pre: BackgroundGeodesic,
    pub post: BackgroundGeodesic,
    pub cross_point: Vec<f64>,
    pub cross_velocity_pre: Vec<f64>,
    pub cross_velocity_post: Vec<f64>,
    pub refraction: Vec<f64>,
    pub v_params: VParams,
}

impl BrokenGeodesic {
    pub fn u_range(&self) -> (f64, f64) {
        (self.pre.u_range().0, self.post.u_range().1)
    }

    /// `(v, x)` of the limit at `u`.
    pub fn eval(&self, u: f64) -> Result<(f64, Vec<f64>)> {
        self.eval_with(u, KinkConvention::Printed)
    }

    pub fn eval_with(&self, u: f64, kink: KinkConvention) -> Result<(f64, Vec<f64>)> {
        let (x, _) = self.state_at(u)?;
        Ok((self.v_params.value(u, kink), x))
    }

    /// Position and velocity of the limit; the velocity at 0 is the post one.
    pub fn state_at(&self, u: f64) -> Result<(Vec<f64>, Vec<f64>)> {
        let (lo, hi) = self.u_range();
        if !(u >= lo && u <= hi) {
            return Err(Error::Range { u, lo, hi });
        }
        if u == 0.0 {
            Ok((self.cross_point.clone(), self.cross_velocity_post.clone()))
        } else if u < 0.0 {
            self.pre.state_at(u)
        } else {
            self.post.state_at(u)
        }
    }

    pub fn x_at(&self, u: f64) -> Result<Vec<f64>> {
        Ok(self.state_at(u)?.0)
    }

    pub fn export(&self) -> LimitExport {
        LimitExport {
            cross_point: self.cross_point.clone(),
            cross_velocity_pre: self.cross_velocity_pre.clone(),
            cross_velocity_post: self.cross_velocity_post.clone(),
            refraction: self.refraction.clone(),
            jump: self.v_params.jump,
            kink_slope: self.v_params.kink_slope,
            kink_slope_consistent: self.v_params.kink_slope_consistent,
            v0: self.v_params.v0,
            vdot0: self.v_params.vdot0,
            u0: self.v_params.u0,
            pre: self.pre.sampled_states(),
            post: self.post.sampled_states(),
        }
    }
}

/// Serializable summary of a [`BrokenGeodesic`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LimitExport {
    pub cross_point: Vec<f64>,
    pub cross_velocity_pre: Vec<f64>,
    pub cross_velocity_post: Vec<f64>,
    pub refraction: Vec<f64>,
    pub jump: f64,
    pub kink_slope: f64,
    pub kink_slope_consistent: f64,
    pub v0: f64,
    pub vdot0: f64,
    pub u0: f64,
    pub pre: Vec<GeodesicSample>,
    pub post: Vec<GeodesicSample>,
}

/// Limit on the default range `[−2, 2]`.
pub fn limit_geodesic(
    manifold: &ChartManifold,
    profile: &WaveProfile,
    data: &InitialData,
) -> Result<BrokenGeodesic> {
    let (lo, hi) = DEFAULT_RANGE;
    limit_geodesic_on(manifold, profile, data, lo.min(data.u0), hi, GEODESIC_TOL)
}

pub fn limit_geodesic_on(
    manifold: &ChartManifold,
    profile: &WaveProfile,
    data: &InitialData,
    u_min: f64,
    u_max: f64,
    tol: f64,
) -> Result<BrokenGeodesic> {
    let u0 = data.u0;
    if !(u0 < 0.0) {
        return Err(Error::Parameter(format!(
            "data must be posed before the impulse, got u0 = {u0}"
        )));
    }
    if !(u_min <= u0 && u_max > 0.0) {
        return Err(Error::Parameter(format!(
            "range [{u_min}, {u_max}] must contain [{u0}, 0] and extend past 0"
        )));
    }
    if profile.dim() != manifold.dim() {
        return Err(Error::Parameter(format!(
            "profile `{}` does not match the manifold dimension {}",
            profile.label(),
            manifold.dim()
        )));
    }
    let mut pre = manifold.background_geodesic(&data.x0, &data.xdot0, u0, 0.0, tol)?;
    if u_min < u0 {
        let back = manifold.background_geodesic(&data.x0, &data.xdot0, u0, u_min, tol)?;
        pre = BackgroundGeodesic::joined(back, pre);
    }
    let (x_cross, xd_pre) = pre.state_at(0.0)?;
    let grad = manifold.grad_h(profile, &x_cross)?;
    let refraction: Vec<f64> = grad.iter().map(|g| 0.5 * g).collect();
    let xd_post: Vec<f64> = xd_pre.iter().zip(&refraction).map(|(a, b)| a + b).collect();
    let post = manifold.background_geodesic(&x_cross, &xd_post, 0.0, u_max, tol)?;

    let df = profile.partials(&x_cross);
    let printed: f64 = -xd_pre
        .iter()
        .zip(&grad)
        .zip(&df)
        .map(|((xd, g), d)| (xd + 0.25 * g) * d)
        .sum::<f64>();
    let v_params = VParams {
        v0: data.v0,
        vdot0: data.vdot0,
        u0,
        jump: -0.5 * profile.value(&x_cross),
        kink_slope: printed,
        kink_slope_consistent: 0.5 * printed,
    };
    Ok(BrokenGeodesic {
        pre,
        post,
        cross_point: x_cross,
        cross_velocity_pre: xd_pre,
        cross_velocity_post: xd_post,
        refraction,
        v_params,
    })
}
