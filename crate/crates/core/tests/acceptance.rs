//! Acceptance checks. Each test prints one `[PASS]`/`[FAIL]` line and then
//! asserts the same condition. Run with `--nocapture` to see the lines.

use std::f64::consts::FRAC_PI_2;
use std::time::Instant;

use ipwave::asymptotics::{
    moderateness_probe, monotone_with_jitter, net_independence, stability_probe, sweep,
    Perturbation, SweepOptions, TestFunctionSpec,
};
use ipwave::dynamics::{integrate, verify_lemma_bounds, InitialData, IntegratorConfig, Problem};
use ipwave::fit::loglog_fit;
use ipwave::impulse::{Axiom, DeltaNet, WaveProfile};
use ipwave::limit::{limit_geodesic, KinkConvention};
use ipwave::manifold::{ChartManifold, GEODESIC_TOL};
use ipwave::scenario::shipped_scenarios;

const GRID4: [f64; 4] = [1e-1, 1e-2, 1e-3, 1e-4];

fn verdict(id: &str, title: &str, pass: bool, detail: &str) {
    println!(
        "[{}] {id} {title}: {detail}",
        if pass { "PASS" } else { "FAIL" }
    );
    assert!(pass, "{id} {title}: {detail}");
}

fn saddle() -> Problem {
    let m = ChartManifold::euclidean(2);
    let f = WaveProfile::parse("saddle", "x^2 - y^2", &m.coord_refs()).unwrap();
    Problem::new(m, f, DeltaNet::standard_bump()).unwrap()
}

fn saddle_data() -> InitialData {
    InitialData::new(0.0, 0.0, vec![1.0, 0.0], vec![0.0, 0.0])
}

fn jump(problem: &Problem, data: &InitialData, eps: f64) -> Vec<f64> {
    let t = integrate(problem, eps, data, 2.0 * eps, &IntegratorConfig::default()).unwrap();
    let a = t.state_at(-eps).unwrap();
    let b = t.state_at(eps).unwrap();
    b.xdot.iter().zip(&a.xdot).map(|(p, q)| p - q).collect()
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(p, q)| (p - q) * (p - q))
        .sum::<f64>()
        .sqrt()
}

fn sci(v: &[f64]) -> String {
    v.iter()
        .map(|x| format!("{x:.3e}"))
        .collect::<Vec<_>>()
        .join(", ")
}

#[test]
fn ac01_refraction_law() {
    let p = saddle();
    let d = saddle_data();
    let start = Instant::now();
    let errs: Vec<f64> = GRID4
        .iter()
        .map(|&e| dist(&jump(&p, &d, e), &[1.0, 0.0]))
        .collect();
    let secs = start.elapsed().as_secs_f64();
    let decreasing = errs.windows(2).all(|w| w[1] < w[0]);
    let pass = errs[2] <= 0.05 && decreasing && secs < 10.0;
    verdict(
        "AC-1",
        "refraction law",
        pass,
        &format!(
            "jump errors [{}] for eps 1e-1..1e-4, runtime {secs:.2}s",
            sci(&errs)
        ),
    );
}

#[test]
fn ac02_v_jump_and_kink() {
    let p = saddle();
    let t = integrate(&p, 1e-3, &saddle_data(), 1.0, &IntegratorConfig::default()).unwrap();
    let v1 = t.end_state().v;
    let bg = limit_geodesic(&p.manifold, &p.profile, &saddle_data()).unwrap();
    let printed = bg.v_params.value(1.0, KinkConvention::Printed);
    let consistent = bg.v_params.value(1.0, KinkConvention::Consistent);
    println!(
        "       AC-2 diagnostic: v_eps(1) = {v1:.6}, closed form {printed}, halved kink gives {consistent} (|diff| {:.2e})",
        (v1 - consistent).abs()
    );
    verdict(
        "AC-2",
        "v jump and kink",
        (v1 + 1.5).abs() <= 0.05 && printed == -1.5,
        &format!(
            "|v_eps(1) + 1.5| = {:.4} at eps=1e-3 (limit {:.3})",
            (v1 + 1.5).abs(),
            -1.5
        ),
    );
}

#[test]
fn ac03_zero_association_of_x() {
    let r = sweep(
        "flat-quadratic",
        &saddle(),
        &saddle_data(),
        &GRID4,
        &SweepOptions::default(),
        &IntegratorConfig::default(),
    )
    .unwrap();
    let errs: Vec<f64> = r.per_eps.iter().map(|m| m.sup_x_err.unwrap()).collect();
    let pass = monotone_with_jitter(&errs, 0.0) && errs[3] < 0.01;
    verdict(
        "AC-3",
        "0-association of x",
        pass,
        &format!(
            "sup_[-2,2] |x_eps - y| = [{}], fitted slope {:.3}",
            sci(&errs),
            r.fits.sup_x_err.slope.unwrap_or(f64::NAN)
        ),
    );
}

#[test]
fn ac04_distributional_convergence_of_v() {
    let phi = TestFunctionSpec {
        label: Some("bump(-0.5,0.5)".into()),
        expr: None,
        support: [-0.5, 0.5],
    };
    let run = |kink| {
        let opts = SweepOptions {
            kink,
            test_functions: vec![phi.clone()],
            ..Default::default()
        };
        sweep(
            "flat-quadratic",
            &saddle(),
            &saddle_data(),
            &GRID4,
            &opts,
            &IntegratorConfig::default(),
        )
        .unwrap()
    };
    let consistent = run(KinkConvention::Consistent);
    let cp: Vec<f64> = consistent.per_eps.iter().map(|m| m.pairings[0]).collect();
    println!(
        "       AC-4 diagnostic: pairing against the halved kink [{}]",
        sci(&cp)
    );

    let r = run(KinkConvention::Printed);
    let pairing: Vec<f64> = r.per_eps.iter().map(|m| m.pairings[0]).collect();
    let near_zero: Vec<f64> = r
        .per_eps
        .iter()
        .map(|m| m.v_sup_err_impulse.unwrap())
        .collect();
    let pass = pairing[3].abs() <= 0.01 && near_zero.iter().all(|&s| s >= 0.1);
    println!(
        "       AC-4 diagnostic: pairing against the closed form shrinks by a factor {:.3} over the grid",
        pairing[3].abs() / pairing[0].abs()
    );
    verdict(
        "AC-4",
        "distributional convergence of v",
        pass,
        &format!(
            "pairing [{}]; sup near u=0 [{}]",
            sci(&pairing),
            sci(&near_zero)
        ),
    );
}

#[test]
fn ac05_moderateness_orders() {
    let r = moderateness_probe(
        &saddle(),
        &saddle_data(),
        &GRID4,
        2,
        &IntegratorConfig::default(),
    )
    .unwrap();
    let e = |k: usize| r.rows[k].exponent.unwrap_or(0.0);
    let (x1, x2, v2) = (e(0), e(1), e(2));
    let pass = x1 >= -0.2 && x2 >= -1.2 && v2 >= -2.2;
    verdict(
        "AC-5",
        "moderateness orders",
        pass,
        &format!("exponents x' {x1:.3}, x'' {x2:.3}, v'' {v2:.3}"),
    );
}

#[test]
fn ac06_gronwall_stability() {
    let grid = [1e-1, 1e-2, 1e-3];
    let mut pass = true;
    let mut parts = Vec::new();
    for q in [1u32, 2] {
        let r = stability_probe(
            &saddle(),
            &saddle_data(),
            q,
            &grid,
            2.0,
            Perturbation::default(),
            &IntegratorConfig::default(),
            0,
        )
        .unwrap();
        let slope = r.fit.slope.unwrap_or(f64::NAN);
        let ok = slope >= q as f64 - 0.2 && r.rows.iter().all(|row| row.psi <= row.bound);
        pass &= ok;
        let psi: Vec<f64> = r.rows.iter().map(|row| row.psi).collect();
        let bound: Vec<f64> = r.rows.iter().map(|row| row.bound).collect();
        parts.push(format!(
            "q={q}: exponent {slope:.3}, psi [{}] <= bound [{}]",
            sci(&psi),
            sci(&bound)
        ));
    }
    verdict("AC-6", "Gronwall stability", pass, &parts.join("; "));
}

#[test]
fn ac07_existence_interval() {
    let mut pass = true;
    let mut parts = Vec::new();
    for s in shipped_scenarios() {
        let sc = s.resolve().unwrap();
        for eps in [1e-2, 1e-3] {
            match verify_lemma_bounds(
                &sc.problem,
                eps,
                sc.data(),
                sc.integrator(),
                s.lemma,
                s.seed,
            ) {
                Ok(r) => {
                    let ok = r.holds && r.b_margin > 0.0 && r.c_margin > 0.0;
                    pass &= ok;
                    parts.push(format!(
                        "{} eps={eps:e}: alpha {:.3}, b margin {:.3}, c margin {:.3}",
                        s.id, r.alpha, r.b_margin, r.c_margin
                    ));
                }
                Err(e) => {
                    pass = false;
                    parts.push(format!("{} eps={eps:e}: {e}", s.id));
                }
            }
        }
    }
    verdict("AC-7", "existence interval", pass, &parts.join("; "));
}

#[test]
fn ac08_net_independence() {
    let r = net_independence(
        &saddle(),
        &DeltaNet::shipped(),
        &saddle_data(),
        &[1e-2, 5e-3, 2.5e-3, 1.25e-3],
        1.0,
        &IntegratorConfig::default(),
    )
    .unwrap();
    let limits: Vec<String> = r
        .nets
        .iter()
        .map(|n| format!("{} -> (v {:.5}, x {:.5})", n.net, n.limit[0], n.limit[1]))
        .collect();
    let worst = r
        .comparisons
        .iter()
        .flat_map(|c| c.differences.iter().zip(&c.allowed).map(|(d, a)| d / a))
        .fold(0.0, f64::max);
    verdict(
        "AC-8",
        "net independence",
        r.all_agree,
        &format!(
            "{}; worst difference / allowance {worst:.3}",
            limits.join(", ")
        ),
    );
}

#[test]
fn ac09_geometry_suite() {
    let steps = [1e-2, 5e-3, 2.5e-3];
    let mut min_order = f64::INFINITY;
    let points: [(ChartManifold, Vec<Vec<f64>>); 3] = [
        (ChartManifold::euclidean(2), vec![vec![0.3, -0.7]]),
        (
            ChartManifold::sphere(),
            vec![vec![1.0, 0.4], vec![0.4, 2.0], vec![2.5, -1.0]],
        ),
        (
            ChartManifold::half_plane(),
            vec![vec![0.0, 1.0], vec![0.5, 0.3], vec![-2.0, 2.5]],
        ),
    ];
    for (m, xs) in &points {
        for x in xs {
            let exact = m.christoffel_at(x).unwrap();
            let errs: Vec<f64> = steps
                .iter()
                .map(|&h| m.christoffel_fd(x, h).unwrap().max_abs_diff(&exact))
                .collect();
            if errs.iter().all(|&e| e < 1e-13) {
                continue;
            }
            min_order = min_order.min(loglog_fit(&steps, &errs).unwrap().slope);
        }
    }

    let mut drift: f64 = 0.0;
    let data: [(ChartManifold, Vec<f64>, Vec<f64>); 3] = [
        (ChartManifold::euclidean(2), vec![0.0, 0.0], vec![1.0, 2.0]),
        (ChartManifold::sphere(), vec![1.2, 0.0], vec![0.3, 0.9]),
        (ChartManifold::half_plane(), vec![0.0, 1.0], vec![1.0, 0.5]),
    ];
    for (m, x0, v0) in &data {
        let g = m
            .background_geodesic(x0, v0, -1.0, 2.0, GEODESIC_TOL)
            .unwrap();
        let s0 = m.norm_h(x0, v0);
        for (_, x, v) in g.samples() {
            drift = drift.max((m.norm_h(&x, &v) - s0).abs());
        }
    }

    let sphere = ChartManifold::sphere();
    let f = WaveProfile::parse("cos", "cos(theta)", &sphere.coord_refs()).unwrap();
    let p = Problem::new(sphere, f, DeltaNet::standard_bump()).unwrap();
    let d = InitialData::new(0.0, 0.0, vec![FRAC_PI_2, -1.0], vec![0.0, 1.0]);
    let oracle = limit_geodesic(&p.manifold, &p.profile, &d)
        .unwrap()
        .refraction;
    let measured = jump(&p, &d, 1e-3);
    let refr_err = dist(&measured, &oracle);

    let pass = min_order >= 1.8 && drift <= 1e-8 && refr_err <= 0.05;
    verdict(
        "AC-9",
        "geometry suite",
        pass,
        &format!(
            "min FD order {min_order:.3}, max speed drift {drift:.2e}, sphere refraction error {refr_err:.2e} (oracle {oracle:?})"
        ),
    );
}

#[test]
fn ac10_validator() {
    let eps = [1e-1, 1e-2, 1e-3, 1e-4];
    let mut pass = true;
    let mut parts = Vec::new();
    for net in DeltaNet::shipped() {
        let r = net.validate_strict(&eps, 1e-10).unwrap();
        pass &= r.all_pass;
        parts.push(format!(
            "{} {}",
            net.label(),
            if r.all_pass { "accepted" } else { "rejected" }
        ));
    }
    let expected = [
        ("bump-wide", Axiom::Support),
        ("bump-mass2", Axiom::Mass),
        ("bump-l1-blowup", Axiom::L1Bound),
    ];
    for (name, axiom) in expected {
        let r = DeltaNet::by_name(name)
            .unwrap()
            .validate_strict(&eps, 1e-10)
            .unwrap();
        let failed = r.failed_axioms();
        pass &= failed == vec![axiom];
        parts.push(format!("{name} fails {failed:?}"));
    }
    verdict("AC-10", "validator", pass, &parts.join(", "));
}
