//! The four subcommands. Each returns whether its verdicts passed; errors
//! bubble up and are mapped to exit codes in `main`.

use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use ipwave::asymptotics::{
    moderateness_probe, stability_probe, sweep, ModeratenessReport, StabilityReport, SweepReport,
    SCHEMA_VERSION,
};
use ipwave::dynamics::{integrate, verify_lemma_bounds, LemmaReport, Trajectory};
use ipwave::impulse::ValidationReport;
use ipwave::limit::{limit_geodesic_on, LimitExport};
use ipwave::manifold::GEODESIC_TOL;
use ipwave::scenario::{Scenario, ScenarioConfig, ValidateOptions};
use ipwave::DeltaNet;
use rayon::prelude::*;
use serde::Serialize;
use serde_json::Value;

use crate::config::{config_hash, core_config_error, embedded, ConfigError};
use crate::output::{csv, eps_tag, fmt_opt, loglog, write_json, write_text, Layout};

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Format {
    Csv,
    Json,
}

/// Where a command writes and the config that produced it.
pub struct RunContext {
    pub config: ScenarioConfig,
    pub scenario: Scenario,
    pub layout: Layout,
    pub hash: String,
    pub embedded: Value,
}

impl RunContext {
    pub fn new(config: ScenarioConfig) -> Result<Self> {
        let scenario = config.resolve().map_err(core_config_error)?;
        let layout = Layout::new(Path::new(&config.output), &config.id);
        Ok(RunContext {
            hash: config_hash(&config)?,
            embedded: embedded(&config)?,
            config,
            scenario,
            layout,
        })
    }

    fn provenance(&self) -> Provenance<'_> {
        Provenance {
            scenario: &self.config.id,
            manifold: self.scenario.problem.manifold.name(),
            profile: self.scenario.problem.profile.source(),
            net: self.scenario.problem.net.label(),
            config_hash: &self.hash,
        }
    }
}

#[derive(Serialize)]
struct Provenance<'a> {
    scenario: &'a str,
    manifold: &'a str,
    profile: &'a str,
    net: &'a str,
    config_hash: &'a str,
}

/// Wrapper written for every report: the config first, then the payload.
#[derive(Serialize)]
struct Envelope<'a, T: Serialize> {
    schema_version: u32,
    kind: &'a str,
    config_hash: &'a str,
    config: &'a Value,
    report: &'a T,
}

fn write_report<T: Serialize>(ctx: &RunContext, kind: &str, report: &T) -> Result<PathBuf> {
    let path = ctx.layout.reports()?.join(format!("{kind}.json"));
    write_json(
        &path,
        &Envelope {
            schema_version: SCHEMA_VERSION,
            kind,
            config_hash: &ctx.hash,
            config: &ctx.embedded,
            report,
        },
    )?;
    Ok(path)
}

fn trajectory_rows(traj: &Trajectory) -> Vec<Vec<f64>> {
    traj.samples()
        .iter()
        .map(|s| {
            let mut r = vec![s.u, s.v, traj.vdot(s)];
            r.extend(&s.x);
            r.extend(&s.xdot);
            r
        })
        .collect()
}

fn trajectory_header(n: usize) -> Vec<String> {
    let mut h: Vec<String> = ["u", "v", "vdot"].iter().map(|s| s.to_string()).collect();
    h.extend((1..=n).map(|i| format!("x{i}")));
    h.extend((1..=n).map(|i| format!("xdot{i}")));
    h
}

#[derive(Serialize)]
struct TrajectoryStats {
    accepted: usize,
    rejected: usize,
    evaluations: usize,
    min_step: f64,
}

#[derive(Serialize)]
struct TrajectoryFile<'a> {
    eps: f64,
    provenance: Provenance<'a>,
    stats: TrajectoryStats,
    columns: Vec<String>,
    rows: Vec<Vec<f64>>,
}

#[derive(Serialize)]
struct IndexEntry {
    eps: f64,
    file: String,
    steps: usize,
}

#[derive(Serialize)]
struct TrajectoryIndex<'a> {
    provenance: Provenance<'a>,
    format: &'a str,
    entries: Vec<IndexEntry>,
}

pub fn simulate(ctx: &RunContext, format: Format) -> Result<bool> {
    let sc = &ctx.scenario;
    let horizon = ctx.config.horizon;
    let trajs = sc
        .eps
        .par_iter()
        .map(|&eps| {
            integrate(
                &sc.problem,
                eps,
                &sc.config.data,
                horizon,
                &sc.config.integrator,
            )
            .with_context(|| format!("integrating at eps = {eps:e}"))
        })
        .collect::<Result<Vec<_>>>()?;
    let dir = ctx.layout.trajectories()?;
    let header = trajectory_header(sc.problem.dim());
    let mut entries = Vec::new();
    for traj in &trajs {
        let rows = trajectory_rows(traj);
        let (file, ext) = match format {
            Format::Csv => (csv(&header, &rows), "csv"),
            Format::Json => {
                let st = traj.stats();
                let doc = TrajectoryFile {
                    eps: traj.eps,
                    provenance: ctx.provenance(),
                    stats: TrajectoryStats {
                        accepted: st.accepted,
                        rejected: st.rejected,
                        evaluations: st.evaluations,
                        min_step: st.min_step,
                    },
                    columns: header.clone(),
                    rows: rows.clone(),
                };
                (serde_json::to_string_pretty(&doc)? + "\n", "json")
            }
        };
        let name = format!("{}.{ext}", eps_tag(traj.eps));
        write_text(&dir.join(&name), &file)?;
        entries.push(IndexEntry {
            eps: traj.eps,
            file: name,
            steps: rows.len(),
        });
    }
    if ctx.config.eps_grid.is_some() || entries.len() > 1 {
        let index = TrajectoryIndex {
            provenance: ctx.provenance(),
            format: match format {
                Format::Csv => "csv",
                Format::Json => "json",
            },
            entries,
        };
        write_json(&dir.join("index.json"), &index)?;
    }
    Ok(true)
}

#[derive(Serialize)]
struct Probes {
    moderateness: ModeratenessReport,
    stability: Vec<StabilityReport>,
    lemma: LemmaReport,
    all_pass: bool,
}

fn run_probes(ctx: &RunContext) -> Result<Probes> {
    let sc = &ctx.scenario;
    let cfg = &ctx.config;
    let (p, d, ic) = (&sc.problem, &cfg.data, &cfg.integrator);
    let moderateness = moderateness_probe(p, d, &sc.eps, 3, ic)?;
    let stability = cfg
        .stability
        .q
        .iter()
        .map(|&q| {
            stability_probe(
                p,
                d,
                q,
                &sc.eps,
                cfg.horizon,
                cfg.stability.perturbation,
                ic,
                cfg.seed,
            )
        })
        .collect::<ipwave::Result<Vec<_>>>()?;
    let smallest = *sc.eps.last().expect("non-empty grid");
    let lemma = verify_lemma_bounds(p, smallest, d, ic, cfg.lemma, cfg.seed)?;
    let all_pass = moderateness.all_pass && stability.iter().all(|s| s.all_pass) && lemma.holds;
    Ok(Probes {
        moderateness,
        stability,
        lemma,
        all_pass,
    })
}

fn errors_table(r: &SweepReport) -> String {
    let mut head = vec![
        "eps".to_string(),
        "sup_x_err".into(),
        "v_err".into(),
        "v_sup_err_impulse".into(),
        "jump_err".into(),
    ];
    head.extend(r.test_functions.iter().enumerate().map(|(k, t)| {
        format!(
            "pairing_{}",
            t.label.clone().unwrap_or_else(|| k.to_string())
        )
    }));
    let mut s = head.join(",") + "\n";
    for m in &r.per_eps {
        let mut cells = vec![
            fmt_opt(Some(m.eps)),
            fmt_opt(m.sup_x_err),
            fmt_opt(m.v_err),
            fmt_opt(m.v_sup_err_impulse),
            fmt_opt(m.jump_err),
        ];
        for k in 0..r.test_functions.len() {
            cells.push(fmt_opt(m.pairings.get(k).copied()));
        }
        s.push_str(&cells.join(","));
        s.push('\n');
    }
    s
}

pub fn sweep_cmd(ctx: &RunContext, probes: bool) -> Result<bool> {
    let sc = &ctx.scenario;
    let cfg = &ctx.config;
    let mut opts = cfg.sweep.clone();
    opts.horizon = cfg.horizon;
    let report = sweep(
        &cfg.id,
        &sc.problem,
        &cfg.data,
        &sc.eps,
        &opts,
        &cfg.integrator,
    )?;
    write_report(ctx, "sweep", &report)?;
    write_text(
        &ctx.layout.reports()?.join("errors.csv"),
        &errors_table(&report),
    )?;

    let plot = ctx.layout.plotdata()?;
    let eps = &report.eps_grid;
    let series: [(&str, Vec<Option<f64>>); 3] = [
        ("sup_x_err", report.column(|m| m.sup_x_err)),
        ("v_err", report.column(|m| m.v_err)),
        ("jump_err", report.column(|m| m.jump_err)),
    ];
    for (name, col) in &series {
        write_text(&plot.join(format!("{name}.dat")), &loglog(name, eps, col))?;
    }
    for (k, t) in report.test_functions.iter().enumerate() {
        let label = t.label.clone().unwrap_or_else(|| k.to_string());
        let col = report.column(|m| m.pairings.get(k).map(|p| p.abs()));
        let name = format!("pairing_{label}");
        write_text(&plot.join(format!("{name}.dat")), &loglog(&name, eps, &col))?;
    }

    let mut pass = report.all_pass;
    for v in report.verdicts.iter().filter(|v| !v.pass) {
        eprintln!("verdict `{}` failed: {}", v.name, v.detail);
    }
    if probes {
        let pr = run_probes(ctx)?;
        if !pr.all_pass {
            eprintln!("probe checks failed, see reports/probes.json");
        }
        pass &= pr.all_pass;
        write_report(ctx, "probes", &pr)?;
    }
    Ok(pass)
}

#[derive(Serialize)]
struct LimitReport {
    u_range: (f64, f64),
    limit: LimitExport,
}

pub fn limit_cmd(ctx: &RunContext) -> Result<bool> {
    let sc = &ctx.scenario;
    let cfg = &ctx.config;
    let d = &cfg.data;
    let t = cfg.horizon;
    let lim = limit_geodesic_on(
        &sc.problem.manifold,
        &sc.problem.profile,
        d,
        d.u0.min(-t),
        t,
        GEODESIC_TOL,
    )?;
    let (lo, hi) = lim.u_range();
    write_report(
        ctx,
        "limit",
        &LimitReport {
            u_range: (lo, hi),
            limit: lim.export(),
        },
    )?;

    let n = sc.problem.dim();
    let count = cfg.sweep.grid_points.max(2);
    let mut rows = Vec::with_capacity(count);
    for k in 0..count {
        let u = lo + (hi - lo) * k as f64 / (count - 1) as f64;
        let (v, x) = lim.eval_with(u, cfg.sweep.kink)?;
        let mut r = vec![u, v];
        r.extend(x);
        rows.push(r);
    }
    let mut head = vec!["u".to_string(), "v".into()];
    head.extend((1..=n).map(|i| format!("x{i}")));
    let table = csv(&head, &rows);
    let mut body = format!("# {}\n", head.join(" "));
    for line in table.lines().skip(1) {
        body.push_str(&line.replace(',', " "));
        body.push('\n');
    }
    write_text(&ctx.layout.plotdata()?.join("limit.dat"), &body)?;
    Ok(true)
}

/// Validation needs only a net, so it runs without a scenario file.
pub struct NetTarget {
    pub id: String,
    pub net: String,
    pub options: ValidateOptions,
    pub out: PathBuf,
    pub config: Option<Value>,
    pub hash: Option<String>,
}

#[derive(Serialize)]
struct ValidationEnvelope<'a> {
    schema_version: u32,
    kind: &'a str,
    #[serde(skip_serializing_if = "Option::is_none")]
    config_hash: Option<&'a str>,
    #[serde(skip_serializing_if = "Option::is_none")]
    config: Option<&'a Value>,
    report: &'a ValidationReport,
    failed_axioms: Vec<String>,
}

pub fn validate_net(t: &NetTarget) -> Result<bool> {
    let net = DeltaNet::by_name(&t.net).map_err(|e| ConfigError::new("net", e.to_string()))?;
    let report = net.validate_strict(&t.options.eps_list, t.options.quad_tol)?;
    let failed: Vec<String> = report
        .failed_axioms()
        .iter()
        .map(|a| a.to_string())
        .collect();
    for f in &failed {
        eprintln!("net `{}` violates axiom {f}", t.net);
    }
    let layout = Layout::new(&t.out, &t.id);
    write_json(
        &layout.reports()?.join("validation.json"),
        &ValidationEnvelope {
            schema_version: SCHEMA_VERSION,
            kind: "validation",
            config_hash: t.hash.as_deref(),
            config: t.config.as_ref(),
            report: &report,
            failed_axioms: failed,
        },
    )?;
    Ok(report.all_pass)
}
