//! Adaptive Dormand–Prince 5(4) integrator with Hermite dense output.
//!
//! The solver never steps across a registered break point, and inside an
//! optional "fine window" the step is additionally capped. Both are needed
//! for forcing terms concentrated on a short interval, which plain error
//! control is free to step over.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub trait OdeSystem {
    fn dim(&self) -> usize;

    /// Writes `dy/du` at `(u, y)`. An [`Error::Domain`] is treated as a
    /// rejected step, anything else aborts the integration.
    fn eval(&self, u: f64, y: &[f64], dy: &mut [f64]) -> Result<()>;

    /// Point reported with a [`Error::ChartExit`] when steps collapse at a domain boundary.
    fn exit_point(&self, y: &[f64]) -> Vec<f64> {
        y.to_vec()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FineWindow {
    pub lo: f64,
    pub hi: f64,
    pub max_step: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolverOptions {
    pub rtol: f64,
    pub atol: f64,
    pub max_step: f64,
    pub max_steps: usize,
    pub breakpoints: Vec<f64>,
    pub fine_window: Option<FineWindow>,
    /// `(position, velocity)` index pairs interpolated with quintic Hermite.
    pub second_order: Vec<(usize, usize)>,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions {
            rtol: 1e-10,
            atol: 1e-12,
            max_step: f64::INFINITY,
            max_steps: 2_000_000,
            breakpoints: Vec::new(),
            fine_window: None,
            second_order: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct SolverStats {
    pub accepted: usize,
    pub rejected: usize,
    pub evaluations: usize,
    pub min_step: f64,
}

/// Accepted steps in increasing `u` order with their derivatives.
#[derive(Debug, Clone)]
pub struct Solution {
    pub us: Vec<f64>,
    pub ys: Vec<Vec<f64>>,
    pub dys: Vec<Vec<f64>>,
    pub stats: SolverStats,
    second_order: Vec<(usize, usize)>,
}

const C: [f64; 7] = [0.0, 0.2, 0.3, 0.8, 8.0 / 9.0, 1.0, 1.0];
const A: [[f64; 6]; 7] = [
    [0.0; 6],
    [0.2, 0.0, 0.0, 0.0, 0.0, 0.0],
    [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
    [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
    [
        19372.0 / 6561.0,
        -25360.0 / 2187.0,
        64448.0 / 6561.0,
        -212.0 / 729.0,
        0.0,
        0.0,
    ],
    [
        9017.0 / 3168.0,
        -355.0 / 33.0,
        46732.0 / 5247.0,
        49.0 / 176.0,
        -5103.0 / 18656.0,
        0.0,
    ],
    [
        35.0 / 384.0,
        0.0,
        500.0 / 1113.0,
        125.0 / 192.0,
        -2187.0 / 6784.0,
        11.0 / 84.0,
    ],
];
// fifth-order minus embedded fourth-order weights
const E: [f64; 7] = [
    71.0 / 57600.0,
    0.0,
    -71.0 / 16695.0,
    71.0 / 1920.0,
    -17253.0 / 339200.0,
    22.0 / 525.0,
    -1.0 / 40.0,
];

pub fn solve<S: OdeSystem + ?Sized>(
    sys: &S,
    u0: f64,
    y0: &[f64],
    u1: f64,
    opts: &SolverOptions,
) -> Result<Solution> {
    let n = sys.dim();
    if y0.len() != n {
        return Err(Error::Parameter(format!(
            "initial state has length {}, system dimension is {n}",
            y0.len()
        )));
    }
    if !(opts.rtol > 0.0 && opts.atol > 0.0) {
        return Err(Error::Parameter("tolerances must be positive".into()));
    }
    let mut stats = SolverStats {
        min_step: f64::INFINITY,
        ..Default::default()
    };
    let mut us = vec![u0];
    let mut ys = vec![y0.to_vec()];
    let mut f0 = vec![0.0; n];
    sys.eval(u0, y0, &mut f0)?;
    stats.evaluations += 1;
    let mut dys = vec![f0.clone()];

    if u1 == u0 {
        return Ok(finish(us, ys, dys, stats, opts, false));
    }
    let dir = (u1 - u0).signum();

    let mut targets: Vec<f64> = opts
        .breakpoints
        .iter()
        .copied()
        .filter(|&b| (b - u0) * dir > 0.0 && (u1 - b) * dir > 0.0)
        .collect();
    targets.sort_by(|a, b| (a * dir).total_cmp(&(b * dir)));
    targets.dedup();
    targets.push(u1);

    let mut u = u0;
    let mut y = y0.to_vec();
    let mut fy = f0;
    let mut h = initial_step(sys, u, &y, &fy, dir, opts, &mut stats)?;

    let mut k: Vec<Vec<f64>> = vec![vec![0.0; n]; 7];
    let mut stage = vec![0.0; n];
    let mut y_new = vec![0.0; n];
    let mut target_idx = 0;

    while target_idx < targets.len() {
        let target = targets[target_idx];
        let mut h_cap = opts.max_step;
        if let Some(w) = opts.fine_window {
            let inside = if dir > 0.0 {
                u >= w.lo && u < w.hi
            } else {
                u > w.lo && u <= w.hi
            };
            if inside {
                h_cap = h_cap.min(w.max_step);
            }
        }
        h = h.min(h_cap);
        let remaining = (target - u).abs();
        let mut hits = false;
        if h >= remaining * (1.0 - 1e-12) {
            h = remaining;
            hits = true;
        }
        let h_min = 1e-14 * u.abs().max(1.0);
        if h < h_min {
            return Err(Error::Integrator {
                u,
                reason: format!("step size collapsed to {h:e}"),
            });
        }
        if stats.accepted + stats.rejected >= opts.max_steps {
            return Err(Error::Integrator {
                u,
                reason: format!("exceeded {} steps", opts.max_steps),
            });
        }

        let hs = dir * h;
        k[0].copy_from_slice(&fy);
        let mut domain_failure = false;
        for s in 1..7 {
            for i in 0..n {
                let mut acc = 0.0;
                for (j, kj) in k.iter().enumerate().take(s) {
                    acc += A[s][j] * kj[i];
                }
                stage[i] = y[i] + hs * acc;
            }
            match sys.eval(u + C[s] * hs, &stage, &mut k[s]) {
                Ok(()) => {}
                Err(Error::Domain { .. }) => {
                    domain_failure = true;
                    break;
                }
                Err(e) => return Err(e),
            }
            stats.evaluations += 1;
            if s == 6 {
                y_new.copy_from_slice(&stage);
            }
        }
        if domain_failure {
            stats.rejected += 1;
            h *= 0.25;
            if h < h_min {
                return Err(Error::ChartExit {
                    u,
                    point: sys.exit_point(&y),
                });
            }
            continue;
        }

        let mut err_sq = 0.0;
        for i in 0..n {
            let mut e = 0.0;
            for (s, ks) in k.iter().enumerate() {
                e += E[s] * ks[i];
            }
            let scale = opts.atol + opts.rtol * y[i].abs().max(y_new[i].abs());
            let r = hs * e / scale;
            err_sq += r * r;
        }
        let err = (err_sq / n as f64).sqrt();
        if !err.is_finite() {
            stats.rejected += 1;
            h *= 0.25;
            continue;
        }

        if err <= 1.0 {
            let u_new = if hits { target } else { u + hs };
            stats.accepted += 1;
            stats.min_step = stats.min_step.min(h);
            u = u_new;
            std::mem::swap(&mut y, &mut y_new);
            fy.copy_from_slice(&k[6]);
            us.push(u);
            ys.push(y.clone());
            dys.push(fy.clone());
            if hits {
                target_idx += 1;
            }
            let factor = if err == 0.0 {
                5.0
            } else {
                (0.9 * err.powf(-0.2)).clamp(0.2, 5.0)
            };
            h *= factor;
        } else {
            stats.rejected += 1;
            h *= (0.9 * err.powf(-0.2)).max(0.1);
        }
    }

    Ok(finish(us, ys, dys, stats, opts, dir < 0.0))
}

fn finish(
    mut us: Vec<f64>,
    mut ys: Vec<Vec<f64>>,
    mut dys: Vec<Vec<f64>>,
    mut stats: SolverStats,
    opts: &SolverOptions,
    reverse: bool,
) -> Solution {
    if reverse {
        us.reverse();
        ys.reverse();
        dys.reverse();
    }
    if !stats.min_step.is_finite() {
        stats.min_step = 0.0;
    }
    Solution {
        us,
        ys,
        dys,
        stats,
        second_order: opts.second_order.clone(),
    }
}

fn initial_step<S: OdeSystem + ?Sized>(
    sys: &S,
    u: f64,
    y: &[f64],
    f: &[f64],
    dir: f64,
    opts: &SolverOptions,
    stats: &mut SolverStats,
) -> Result<f64> {
    let n = y.len();
    let scale: Vec<f64> = y.iter().map(|v| opts.atol + opts.rtol * v.abs()).collect();
    let rms = |v: &[f64]| {
        (v.iter()
            .zip(&scale)
            .map(|(a, s)| (a / s) * (a / s))
            .sum::<f64>()
            / n as f64)
            .sqrt()
    };
    let d0 = rms(y);
    let d1 = rms(f);
    let mut h0 = if d0 < 1e-5 || d1 < 1e-5 {
        1e-6
    } else {
        0.01 * d0 / d1
    };
    h0 = h0.min(opts.max_step);
    if let Some(w) = opts.fine_window {
        if u >= w.lo && u <= w.hi {
            h0 = h0.min(w.max_step);
        }
    }
    let probe: Vec<f64> = y.iter().zip(f).map(|(a, b)| a + dir * h0 * b).collect();
    let mut f1 = vec![0.0; n];
    if sys.eval(u + dir * h0, &probe, &mut f1).is_err() {
        return Ok(h0 * 1e-3);
    }
    stats.evaluations += 1;
    let diff: Vec<f64> = f1.iter().zip(f).map(|(a, b)| a - b).collect();
    let d2 = rms(&diff) / h0;
    let h1 = if d1.max(d2) <= 1e-15 {
        (h0 * 1e-3).max(1e-6)
    } else {
        (0.01 / d1.max(d2)).powf(0.2)
    };
    Ok((100.0 * h0).min(h1).min(opts.max_step))
}

impl Solution {
    /// Joins two solutions that share the end point of `before` and the start of `after`.
    pub fn concat(before: Solution, after: Solution) -> Solution {
        let mut out = before;
        let skip = usize::from(out.us.last() == after.us.first());
        out.us.extend_from_slice(&after.us[skip..]);
        out.ys.extend_from_slice(&after.ys[skip..]);
        out.dys.extend_from_slice(&after.dys[skip..]);
        out.stats.accepted += after.stats.accepted;
        out.stats.rejected += after.stats.rejected;
        out.stats.evaluations += after.stats.evaluations;
        out.stats.min_step = match (out.stats.min_step, after.stats.min_step) {
            (0.0, b) => b,
            (a, 0.0) => a,
            (a, b) => a.min(b),
        };
        out
    }

    pub fn u_range(&self) -> (f64, f64) {
        (self.us[0], *self.us.last().unwrap())
    }

    pub fn len(&self) -> usize {
        self.us.len()
    }

    pub fn is_empty(&self) -> bool {
        self.us.is_empty()
    }

    pub fn last(&self) -> &[f64] {
        self.ys.last().unwrap()
    }

    /// Dense state at `u`, or `None` outside the integrated range.
    pub fn eval(&self, u: f64) -> Option<Vec<f64>> {
        let (lo, hi) = self.u_range();
        if !(u >= lo && u <= hi) {
            return None;
        }
        if self.us.len() == 1 {
            return Some(self.ys[0].clone());
        }
        let idx = self.us.partition_point(|&s| s <= u);
        let i = idx.clamp(1, self.us.len() - 1) - 1;
        let (ua, ub) = (self.us[i], self.us[i + 1]);
        let h = ub - ua;
        let t = (u - ua) / h;
        let (ya, yb) = (&self.ys[i], &self.ys[i + 1]);
        let (fa, fb) = (&self.dys[i], &self.dys[i + 1]);

        let t2 = t * t;
        let t3 = t2 * t;
        let h00 = 2.0 * t3 - 3.0 * t2 + 1.0;
        let h10 = t3 - 2.0 * t2 + t;
        let h01 = -2.0 * t3 + 3.0 * t2;
        let h11 = t3 - t2;
        let mut out: Vec<f64> = (0..ya.len())
            .map(|j| h00 * ya[j] + h10 * h * fa[j] + h01 * yb[j] + h11 * h * fb[j])
            .collect();

        if !self.second_order.is_empty() {
            let t4 = t3 * t;
            let t5 = t4 * t;
            let b = [
                1.0 - 10.0 * t3 + 15.0 * t4 - 6.0 * t5,
                t - 6.0 * t3 + 8.0 * t4 - 3.0 * t5,
                0.5 * t2 - 1.5 * t3 + 1.5 * t4 - 0.5 * t5,
                0.5 * t3 - t4 + 0.5 * t5,
                -4.0 * t3 + 7.0 * t4 - 3.0 * t5,
                10.0 * t3 - 15.0 * t4 + 6.0 * t5,
            ];
            let db = [
                -30.0 * t2 + 60.0 * t3 - 30.0 * t4,
                1.0 - 18.0 * t2 + 32.0 * t3 - 15.0 * t4,
                t - 4.5 * t2 + 6.0 * t3 - 2.5 * t4,
                1.5 * t2 - 4.0 * t3 + 2.5 * t4,
                -12.0 * t2 + 28.0 * t3 - 15.0 * t4,
                30.0 * t2 - 60.0 * t3 + 30.0 * t4,
            ];
            for &(p, q) in &self.second_order {
                let c = [
                    ya[p],
                    h * ya[q],
                    h * h * fa[q],
                    h * h * fb[q],
                    h * yb[q],
                    yb[p],
                ];
                out[p] = b.iter().zip(&c).map(|(bi, ci)| bi * ci).sum();
                out[q] = db.iter().zip(&c).map(|(bi, ci)| bi * ci).sum::<f64>() / h;
            }
        }
        Some(out)
    }
}
