//! Subcommand implementations. Each writes its CSV files into the output
//! directory and returns a status that maps onto the process exit code.

use std::fs;
use std::io::Write;
use std::path::Path;

use anyhow::{bail, Context, Result};
use codesign_core::cost::check_assumption1;
use codesign_core::gridmap::{entropy_curve, spearman};
use codesign_core::optimizer::{monotonicity_violations, utilization_profile, Codesign};
use codesign_core::oracle::{cross_check, Agreement, OracleConfig};
use codesign_core::sim::{compare_policies, run, PolicyRun, SimConfig, SimCsvRow};
use codesign_core::{CodesignResult, Policy, Tau, Threshold, ThresholdCurve};
use serde::Serialize;

use crate::scenario::Scenario;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Status {
    Ok,
    NotConverged,
    OracleMismatch,
    Infeasible,
}

impl Status {
    pub fn code(self) -> i32 {
        match self {
            Status::Ok => 0,
            Status::NotConverged => 3,
            Status::OracleMismatch => 4,
            Status::Infeasible => 5,
        }
    }
}

fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).with_context(|| format!("cannot write {}", path.display()))?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Serialize)]
struct CodesignRow {
    agent: usize,
    tau_star: Tau,
    #[serde(rename = "H_star")]
    h_star: String,
    lambda: f64,
    utilization: f64,
}

#[derive(Serialize)]
struct DualRow {
    iteration: usize,
    #[serde(rename = "C")]
    c: f64,
    f: f64,
    dual_value: f64,
}

#[derive(Serialize)]
struct TauVsP {
    region: usize,
    p: f64,
    tau_star: Tau,
}

pub fn codesign(sc: &Scenario) -> Result<CodesignResult> {
    Ok(Codesign::new(&sc.agents)?.optimize(&sc.file.optimizer)?)
}

fn solve_status(res: &CodesignResult) -> Status {
    if res.infeasible() {
        Status::Infeasible
    } else if !res.converged {
        Status::NotConverged
    } else {
        Status::Ok
    }
}

pub fn solve(sc: &Scenario, out: &Path, log: &mut impl Write) -> Result<Status> {
    let res = codesign(sc)?;
    let rows: Vec<CodesignRow> = res
        .choices
        .iter()
        .zip(&sc.agents)
        .map(|(ch, a)| CodesignRow {
            agent: a.id,
            tau_star: ch.tau_star,
            h_star: ch.result.threshold_age().map_or_else(|| "never".to_owned(), |h| h.to_string()),
            lambda: ch.result.avg_cost,
            utilization: ch.result.utilization,
        })
        .collect();
    write_csv(&out.join("codesign.csv"), &rows)?;
    let trace: Vec<DualRow> = res
        .trace
        .iter()
        .map(|t| DualRow { iteration: t.iteration, c: t.c, f: t.utilization, dual_value: t.dual_value })
        .collect();
    write_csv(&out.join("dual_trace.csv"), &trace)?;

    let regions: Vec<TauVsP> = sc
        .flip_probs
        .iter()
        .zip(&res.choices)
        .filter_map(|(p, ch)| p.map(|p| (p, ch.tau_star)))
        .enumerate()
        .map(|(region, (p, tau_star))| TauVsP { region, p, tau_star })
        .collect();
    if !regions.is_empty() {
        write_csv(&out.join("tau_vs_p.csv"), &regions)?;
    }

    writeln!(
        log,
        "C* = {}  f = {:.6}  dual = {:.6}  iterations = {}  stop = {:?}",
        res.c_star, res.total_utilization, res.dual_value, res.iterations, res.stop
    )?;
    for r in &rows {
        writeln!(
            log,
            "agent {:>3}  tau* = {:>3}  H* = {:>8}  lambda = {:.6}  f = {:.6}",
            r.agent, r.tau_star, r.h_star, r.lambda, r.utilization
        )?;
    }
    if regions.len() >= 2 {
        let ps: Vec<f64> = regions.iter().map(|r| r.p).collect();
        let ts: Vec<f64> = regions.iter().map(|r| f64::from(r.tau_star)).collect();
        writeln!(log, "rank correlation(p, tau*) = {:.4}", spearman(&ps, &ts))?;
    }
    Ok(solve_status(&res))
}

pub struct SimulateOptions {
    pub policies: Option<Vec<String>>,
    pub seeds: Option<usize>,
    pub horizon: Option<u64>,
    pub codesign: bool,
    pub sweep_tau: Option<(Tau, Tau)>,
}

fn resolve_policies(names: &[String], freq: Option<&[f64]>) -> Result<Vec<Policy>> {
    names
        .iter()
        .map(|name| {
            if name == "randomized-opt" {
                let f = freq.context("policy randomized-opt needs --codesign")?;
                return Ok(Policy::randomized_from_frequencies(f)?);
            }
            Policy::parse(name).with_context(|| format!("unknown policy `{name}`"))
        })
        .collect()
}

fn label(policy: &Policy, name: &str) -> String {
    if name == "randomized-opt" {
        name.to_owned()
    } else {
        policy.name().to_owned()
    }
}

#[derive(Serialize)]
struct SummaryRow {
    policy: String,
    mean_cost: f64,
    stderr: f64,
    seeds: usize,
    whittle_improvement_pct: Option<f64>,
}

#[derive(Serialize)]
struct SweepRow {
    tau: Tau,
    policy: String,
    mean_cost: f64,
    stderr: f64,
}

pub fn simulate(sc: &Scenario, opts: &SimulateOptions, out: &Path, log: &mut impl Write) -> Result<Status> {
    let sim = &sc.file.simulation;
    let names = opts.policies.clone().unwrap_or_else(|| sim.policies.clone());
    if names.is_empty() {
        bail!("no policies selected");
    }
    let seeds = sc.seeds(opts.seeds);
    let horizon = opts.horizon.unwrap_or(sim.horizon);

    let mut status = Status::Ok;
    let mut freq = None;
    let taus: Option<Vec<Tau>> = if opts.codesign {
        let res = codesign(sc)?;
        status = solve_status(&res);
        writeln!(log, "co-designed tau = {:?} (C* = {})", res.taus(), res.c_star)?;
        freq = Some(res.choices.iter().map(|c| c.result.utilization).collect::<Vec<f64>>());
        Some(res.taus())
    } else {
        sim.taus.clone()
    };
    let policies = resolve_policies(&names, freq.as_deref())?;

    if let Some((lo, hi)) = opts.sweep_tau {
        return sweep_taus(sc, &names, &policies, lo, hi, horizon, &seeds, out, log).map(|()| status);
    }

    let taus = taus.context("no processing times: set simulation.taus or pass --codesign")?;
    let arms: Vec<PolicyRun> = policies
        .iter()
        .zip(&names)
        .map(|(p, n)| PolicyRun { label: label(p, n), policy: p.clone(), taus: taus.clone() })
        .collect();

    let mut rows: Vec<SimCsvRow> = Vec::new();
    let cmp = if seeds.len() >= codesign_core::sim::MIN_SEEDS {
        let cmp = compare_policies(&sc.agents, &arms, horizon, &seeds)?;
        for (arm, reps) in arms.iter().zip(&cmp.reports) {
            for rep in reps {
                rows.extend(rep.csv_rows(&sc.file.name).into_iter().map(|mut r| {
                    r.policy = arm.label.clone();
                    r
                }));
            }
        }
        Some(cmp)
    } else {
        // too few seeds for error bars: per-run rows only
        for arm in &arms {
            for &seed in &seeds {
                let mut cfg = SimConfig::new(horizon, seed);
                cfg.burn_in = sim.burn_in;
                let rep = run(&sc.agents, &arm.taus, &arm.policy, &cfg)?;
                rows.extend(rep.csv_rows(&sc.file.name).into_iter().map(|mut r| {
                    r.policy = arm.label.clone();
                    r
                }));
            }
        }
        None
    };
    write_csv(&out.join("simulate.csv"), &rows)?;

    if sc.file.output.trace {
        for arm in &arms {
            for &seed in &seeds {
                let cfg = SimConfig {
                    trace_every: Some(sc.file.output.trace_every),
                    burn_in: sim.burn_in,
                    ..SimConfig::new(horizon, seed)
                };
                let rep = run(&sc.agents, &arm.taus, &arm.policy, &cfg)?;
                let trace = rep.trace.unwrap_or_default();
                write_csv(&out.join(format!("trace_{}_{}.csv", arm.label, seed)), &trace)?;
            }
        }
    }

    if let Some(cmp) = cmp {
        let has_whittle = cmp.row("whittle").is_some();
        let summary: Vec<SummaryRow> = cmp
            .rows
            .iter()
            .map(|r| SummaryRow {
                policy: r.label.clone(),
                mean_cost: r.mean,
                stderr: r.stderr,
                seeds: r.seeds,
                whittle_improvement_pct: if has_whittle { cmp.improvement("whittle", &r.label) } else { None },
            })
            .collect();
        write_csv(&out.join("summary.csv"), &summary)?;
        for r in &summary {
            let imp = r.whittle_improvement_pct.map_or(String::new(), |x| format!("  whittle gain {x:.2}%"));
            writeln!(log, "{:<15} {:>14.4} +/- {:<10.4}{}", r.policy, r.mean_cost, r.stderr, imp)?;
        }
    }
    Ok(status)
}

#[allow(clippy::too_many_arguments)]
fn sweep_taus(
    sc: &Scenario,
    names: &[String],
    policies: &[Policy],
    lo: Tau,
    hi: Tau,
    horizon: u64,
    seeds: &[u64],
    out: &Path,
    log: &mut impl Write,
) -> Result<()> {
    if lo > hi {
        bail!("empty tau range {lo}:{hi}");
    }
    let taus: Vec<Tau> = (lo..=hi).filter(|t| sc.agents.iter().all(|a| a.admits(*t))).collect();
    if taus.is_empty() {
        bail!("no tau in {lo}:{hi} is admissible for every agent");
    }
    let arms: Vec<PolicyRun> = taus
        .iter()
        .flat_map(|&t| {
            policies.iter().zip(names).map(move |(p, n)| PolicyRun {
                label: format!("{}@{t}", label(p, n)),
                policy: p.clone(),
                taus: vec![t; sc.agents.len()],
            })
        })
        .collect();
    let cmp = compare_policies(&sc.agents, &arms, horizon, seeds)?;
    let rows: Vec<SweepRow> = arms
        .iter()
        .zip(&cmp.rows)
        .map(|(arm, r)| {
            let (policy, _) = arm.label.split_once('@').expect("labels carry the tau");
            SweepRow { tau: arm.taus[0], policy: policy.to_owned(), mean_cost: r.mean, stderr: r.stderr }
        })
        .collect();
    write_csv(&out.join("sweep.csv"), &rows)?;
    for r in &rows {
        writeln!(log, "tau {:>3}  {:<15} {:>14.4} +/- {:.4}", r.tau, r.policy, r.mean_cost, r.stderr)?;
    }
    Ok(())
}

#[derive(Serialize)]
struct EntropyRow {
    p: f64,
    tau: Tau,
    age: u64,
    entropy: f64,
}

/// Entropy-vs-age curves for every mapping region.
pub fn entropy_curves(sc: &Scenario, max_age: u64, out: &Path) -> Result<bool> {
    let Some(m) = &sc.file.mapping else {
        return Ok(false);
    };
    let ages: Vec<u64> = (0..=max_age).collect();
    let mut rows = Vec::new();
    for region in m.config().regions()? {
        for &tau in &region.tau_set {
            for (age, entropy) in entropy_curve(&region, tau, &ages)? {
                rows.push(EntropyRow { p: region.flip_prob, tau, age, entropy });
            }
        }
    }
    write_csv(&out.join("entropy_curve.csv"), &rows)?;
    Ok(true)
}

pub struct OracleOptions {
    pub agent: usize,
    pub tau: Option<Tau>,
    pub c: Option<f64>,
    pub age_cap: Option<f64>,
    pub tol: f64,
}

#[derive(Serialize)]
struct OracleRow {
    h: f64,
    #[serde(rename = "S_prime")]
    s_prime: f64,
    action: u8,
}

fn fmt_threshold(t: Threshold, delta: f64) -> String {
    match t {
        Threshold::At(m) => format!("{}", delta + m as f64),
        Threshold::NeverTransmit => "never".to_owned(),
    }
}

pub fn oracle(sc: &Scenario, opts: &OracleOptions, out: &Path, log: &mut impl Write) -> Result<Status> {
    let spec = sc.agents.get(opts.agent).with_context(|| format!("no agent {}", opts.agent))?;
    let (tau, c) = match (opts.tau, opts.c) {
        (Some(t), Some(c)) => (t, c),
        _ => {
            let res = codesign(sc)?;
            (opts.tau.unwrap_or(res.choices[opts.agent].tau_star), opts.c.unwrap_or(res.c_star))
        }
    };
    if !spec.admits(tau) {
        bail!("tau = {tau} is not admissible for agent {}", opts.agent);
    }
    let cfg = OracleConfig { age_cap: opts.age_cap, ..OracleConfig::default() };
    let chk = match cross_check(spec, tau, c, &cfg, opts.tol) {
        Ok(chk) => chk,
        Err(e @ codesign_core::Error::OracleDiverged { .. }) => {
            writeln!(log, "FAIL: {e}")?;
            return Ok(Status::OracleMismatch);
        }
        Err(e) => return Err(e.into()),
    };
    let rows: Vec<OracleRow> =
        chk.oracle.rows().map(|(h, s, a)| OracleRow { h, s_prime: s, action: u8::from(a) }).collect();
    write_csv(&out.join("oracle.csv"), &rows)?;

    let delta = chk.closed_form.reset_age;
    writeln!(log, "agent {} tau {} C {}", opts.agent, tau, c)?;
    writeln!(
        log,
        "closed form: H = {}  lambda = {:.12}",
        fmt_threshold(chk.closed_form.threshold, delta),
        chk.closed_form.avg_cost
    )?;
    writeln!(
        log,
        "oracle:      H = {}  lambda = {:.12}  ({} iterations, age cap {})",
        fmt_threshold(chk.oracle.threshold, delta),
        chk.oracle.lambda,
        chk.oracle.iterations,
        chk.oracle.age_cap
    )?;
    writeln!(log, "|lambda gap| = {:.3e}  tolerance = {:.3e}", chk.lambda_gap, chk.tolerance)?;
    match chk.agreement {
        Agreement::Tie => writeln!(log, "thresholds differ by one at a Whittle tie")?,
        Agreement::Degenerate => writeln!(log, "thresholds differ where the cost curve is flat")?,
        _ => {}
    }
    if chk.pass() {
        writeln!(log, "PASS")?;
        Ok(Status::Ok)
    } else {
        writeln!(log, "FAIL")?;
        Ok(Status::OracleMismatch)
    }
}

/// Invariant checks on the scenario's own agents.
pub fn validate(sc: &Scenario, log: &mut impl Write) -> Result<Status> {
    let mut ok = true;
    let mut report = |name: String, pass: bool, log: &mut dyn Write| -> Result<()> {
        ok &= pass;
        writeln!(log, "{} {name}", if pass { "PASS" } else { "FAIL" })?;
        Ok(())
    };
    let ages: Vec<f64> = (0..=1000).map(f64::from).collect();
    let grid: Vec<f64> = (0..100).map(|k| 10f64.powf(-3.0 + 6.0 * k as f64 / 99.0)).collect();

    for a in &sc.agents {
        report(
            format!("agent {} cost is monotone", a.id),
            check_assumption1(a.cost().as_ref(), a.tau_set(), &ages),
            log,
        )?;
        for &tau in a.tau_set() {
            let mut curve = ThresholdCurve::new(a, tau)?;
            let mut prev = 0u64;
            let mut monotone = true;
            for &c in &grid {
                let m = match curve.solve(c)?.threshold {
                    Threshold::At(m) => m,
                    Threshold::NeverTransmit => u64::MAX,
                };
                monotone &= m >= prev;
                prev = m;
            }
            report(format!("agent {} tau {tau} threshold non-decreasing in C", a.id), monotone, log)?;
        }
        let tau = a.tau_set()[0];
        for c in [0.01, 1.0, 100.0] {
            let chk = cross_check(a, tau, c, &OracleConfig::default(), 1e-6);
            let pass = chk.as_ref().is_ok_and(|chk| chk.pass());
            report(format!("agent {} tau {tau} C {c} closed form matches oracle", a.id), pass, log)?;
        }
    }
    let profile = utilization_profile(&sc.agents, &grid)?;
    let bad = monotonicity_violations(&profile);
    report(format!("total utilization non-increasing in C ({} violations)", bad.len()), bad.is_empty(), log)?;
    Ok(if ok { Status::Ok } else { Status::OracleMismatch })
}

pub fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("cannot create {}", dir.display()))
}
