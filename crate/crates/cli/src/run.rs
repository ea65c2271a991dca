//! Executes the analyses of a scenario in dependency order.

use std::collections::BTreeMap;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sgnet_core::gainop::{kleene_star, GainOperator, DEFAULT_KLEENE_EPS, DEFAULT_KLEENE_MAX_DEPTH};
use sgnet_core::kfunc::{self, ScalarFn};
use sgnet_core::network::{
    check_decay_implication, check_iss_estimate, compose_v, fit_iss_envelope, gamma_external, iss_gain, simulate_batch,
    trajectory_table, v_series, InputSignal, Network, Trajectory,
};
use sgnet_core::path::{
    build_path, envelopes_are_kinf, path_table, verify_decay, verify_envelopes, verify_monotone, DecayPath, PathOptions,
};
use sgnet_core::sgc::{
    check_chain_condition, check_max_robust_sgc, check_sgc_cycles, check_sgc_sampled, check_strong_sgc, check_ugas,
    check_ugs, ray, standard_samples, virtual_reduction_verdict, IndexPartition, UgasReport, Verdict, Witness,
};

use crate::config::{AnalysisSpec, FnRef, InputSpec, Scenario};
use crate::report::{Drift, Report, Step, StepStatus, Table};
use crate::CliError;

/// A finished run: the report plus the tables it refers to.
#[derive(Debug, Clone)]
pub struct RunOutput {
    pub report: Report,
    /// Table names are the file stems, `<step id>_<table>`.
    pub tables: Vec<Table>,
}

type StepResult<T> = Result<T, String>;

/// Named verdicts, metrics and tables of one condition check.
type ConditionOutcome = (Vec<(String, Verdict)>, BTreeMap<String, f64>, Vec<Table>);

fn msg<E: std::fmt::Display>(e: E) -> String {
    e.to_string()
}

struct Context<'a> {
    scenario: &'a Scenario,
    g: GainOperator,
    net: Option<Network>,
    path: Option<DecayPath>,
}

impl Context<'_> {
    fn resolve(&self, f: &FnRef) -> StepResult<ScalarFn> {
        f.resolve(&self.scenario.functions)
    }
}

/// Step ids: the label if given, else the check name, suffixed `-2`, `-3`, …
/// on repeats.
pub fn step_ids(analyses: &[AnalysisSpec]) -> Vec<String> {
    let mut seen: BTreeMap<String, usize> = BTreeMap::new();
    analyses
        .iter()
        .map(|a| {
            let base = a.label().unwrap_or(a.check_name()).to_string();
            let count = seen.entry(base.clone()).or_insert(0);
            *count += 1;
            if *count == 1 {
                base
            } else {
                format!("{base}-{count}")
            }
        })
        .collect()
}

/// Runs every analysis of `scenario`: condition checks first, then
/// closures, paths and simulations, each group in file order. A failing
/// analysis becomes a refused step; later steps still run.
pub fn execute(scenario: &Scenario) -> Result<RunOutput, CliError> {
    scenario.validate()?;
    let g = scenario.operator.build(&scenario.functions)?;
    let net = scenario.network.as_ref().map(|n| n.build(&scenario.name)).transpose()?;
    let mut ctx = Context { scenario, g, net, path: None };
    let ids = step_ids(&scenario.analyses);
    let mut order: Vec<usize> = (0..scenario.analyses.len()).collect();
    order.sort_by_key(|&k| scenario.analyses[k].stage());

    let mut report = Report::new(scenario.clone());
    let mut tables = Vec::new();
    let total = Instant::now();
    for k in order {
        let spec = &scenario.analyses[k];
        let id = &ids[k];
        let start = Instant::now();
        let (mut step, step_tables) = match run_analysis(&mut ctx, id, spec) {
            Ok(done) => done,
            Err(reason) => (Step::refused(id, spec.check_name(), reason), Vec::new()),
        };
        for mut t in step_tables {
            t.name = format!("{id}_{}", t.name);
            step.tables.push(format!("{}.csv", t.name));
            tables.push(t);
        }
        report.timing.insert(id.clone(), start.elapsed().as_secs_f64());
        report.steps.push(step);
    }
    report.timing.insert("total".into(), total.elapsed().as_secs_f64());
    Ok(RunOutput { report, tables })
}

fn run_analysis(ctx: &mut Context, id: &str, spec: &AnalysisSpec) -> StepResult<(Step, Vec<Table>)> {
    match spec {
        AnalysisSpec::Iterate { r, steps, indices, .. } => iterate_table(ctx, id, *r, steps, indices),
        AnalysisSpec::Star { radii, eps, m_max, .. } => star(ctx, id, radii, *eps, *m_max),
        AnalysisSpec::Path { theta, r_grid, eps, m_max, omega, k_max, .. } => {
            let theta = ctx.resolve(theta)?;
            let omega = omega.as_ref().map(|o| ctx.resolve(o)).transpose()?;
            let options = PathOptions { omega, k_max: *k_max, decay_target: None };
            path(ctx, id, &theta, &r_grid.points(), *eps, *m_max, &options)
        }
        AnalysisSpec::Simulate { .. } => simulate(ctx, id, spec),
        _ => condition(ctx, id, spec),
    }
}

/// Evaluates a condition check on `g`, returning named verdicts, metrics and tables.
fn evaluate_condition(ctx: &Context, g: &GainOperator, spec: &AnalysisSpec) -> StepResult<ConditionOutcome> {
    let single = |v: Verdict| Ok((vec![(spec.check_name().to_string(), v)], BTreeMap::new(), Vec::new()));
    match spec {
        AnalysisSpec::Sgc { samples, seed, .. } => {
            single(check_sgc_sampled(g, &standard_samples(g, *samples, *seed).map_err(msg)?).map_err(msg)?)
        }
        AnalysisSpec::StrongSgc { rho, samples, seed, .. } => {
            let samples = standard_samples(g, *samples, *seed).map_err(msg)?;
            single(check_strong_sgc(g, &ctx.resolve(rho)?, &samples).map_err(msg)?)
        }
        AnalysisSpec::MaxRobustSgc { omega, ij_bound, samples, seed, .. } => {
            let samples = standard_samples(g, *samples, *seed).map_err(msg)?;
            single(check_max_robust_sgc(g, &ctx.resolve(omega)?, *ij_bound, &samples).map_err(msg)?)
        }
        AnalysisSpec::SgcCycles { r_grid, .. } => {
            let grid = r_grid.as_ref().map_or_else(kfunc::default_grid, |s| s.points());
            single(check_sgc_cycles(g, &grid).map_err(msg)?)
        }
        AnalysisSpec::Chain { eta, r, n_max, index_bound, .. } => {
            let bound = index_bound.unwrap_or(g.window());
            single(check_chain_condition(g, &ctx.resolve(eta)?, *r, *n_max, bound).map_err(msg)?)
        }
        AnalysisSpec::VirtualReduction { classes, assign, default, gains, .. } => {
            let partition =
                IndexPartition { classes: *classes, explicit: assign.iter().copied().collect(), default: *default };
            let bars = gains
                .iter()
                .map(|row| row.iter().map(|f| ctx.resolve(f)).collect::<StepResult<Vec<_>>>())
                .collect::<StepResult<Vec<_>>>()?;
            single(virtual_reduction_verdict(g, &partition, &bars, &kfunc::default_grid()).map_err(msg)?)
        }
        AnalysisSpec::Ugs { radii, k_max, .. } => {
            let rep = check_ugs(g, radii, *k_max).map_err(msg)?;
            Ok((vec![("ugs".into(), ugs_verdict(&rep))], ugas_metrics(&rep), vec![norm_table(&rep)]))
        }
        AnalysisSpec::Ugas { radii, k_max, decay_target, .. } => {
            let rep = check_ugas(g, radii, *k_max, *decay_target).map_err(msg)?;
            let verdicts = vec![("ugs".into(), ugs_verdict(&rep)), ("ugas".into(), ugas_verdict(g, &rep)?)];
            Ok((verdicts, ugas_metrics(&rep), vec![norm_table(&rep)]))
        }
        _ => Err(format!("{} is not a condition check", spec.check_name())),
    }
}

fn condition(ctx: &Context, id: &str, spec: &AnalysisSpec) -> StepResult<(Step, Vec<Table>)> {
    let (verdicts, metrics, tables) = evaluate_condition(ctx, &ctx.g, spec)?;
    let scope = verdicts.first().map(|(_, v)| v.scope.clone()).unwrap_or_default();
    let mut step = Step::new(id, spec.check_name(), scope);
    for (name, v) in verdicts {
        step.push_verdict(&name, v);
    }
    step.metrics = metrics;
    if ctx.scenario.drift && !ctx.g.is_explicit() {
        let window = 2 * ctx.g.window();
        let doubled = ctx.g.with_window(window).map_err(msg)?;
        let status = match evaluate_condition(ctx, &doubled, spec) {
            Ok((verdicts, _, _)) => {
                verdicts.iter().map(|(_, v)| StepStatus::from(v.status)).min().unwrap_or(step.status)
            }
            Err(_) => StepStatus::Refused,
        };
        step.drift = Some(Drift { window, status, changed: status != step.status });
    }
    Ok((step, tables))
}

fn ugs_verdict(rep: &UgasReport) -> Verdict {
    let scope = rep.scope.clone();
    match rep.radii.iter().zip(&rep.envelope).find(|(_, e)| !e.is_finite()) {
        Some((&r, &e)) => Verdict::falsified(Witness::GridPoint { r, index: 0, lhs: e, rhs: f64::MAX }, scope),
        None => Verdict::no_violation(scope),
    }
}

/// Falsified when some radius never decays below `decay_target·r`; the
/// witness is the largest component of `Γ^{k_max}(Q(r𝟙))`.
fn ugas_verdict(g: &GainOperator, rep: &UgasReport) -> StepResult<Verdict> {
    let target = rep.decay_target.unwrap_or(sgnet_core::sgc::DEFAULT_DECAY_TARGET);
    let scope = rep.scope.clone();
    let Some(a) = rep.decay_steps.iter().position(Option::is_none) else {
        let v = Verdict::no_violation(scope);
        return Ok(if rep.inconclusive { v.with_metric("inconclusive", 1.0) } else { v });
    };
    let r = rep.radii[a];
    let q = kleene_star(g, &ray(g, r), DEFAULT_KLEENE_EPS, DEFAULT_KLEENE_MAX_DEPTH).map_err(msg)?;
    let last = g.iterate(&q.closure, rep.k_max).map_err(msg)?;
    let (index, lhs) = (1..=g.window() + 1).map(|i| (i, last.get(i))).fold((1, f64::NEG_INFINITY), |best, cur| {
        if cur.1 > best.1 {
            cur
        } else {
            best
        }
    });
    Ok(Verdict::falsified(Witness::GridPoint { r, index, lhs, rhs: target * r }, scope))
}

fn ugas_metrics(rep: &UgasReport) -> BTreeMap<String, f64> {
    let mut m = BTreeMap::new();
    m.insert("k_max".into(), rep.k_max as f64);
    if let Some(t) = rep.decay_target {
        m.insert("decay_target".into(), t);
    }
    if let Some(w) = rep.weak_attractivity_on_imq {
        m.insert("weak_attractivity_on_image".into(), f64::from(u8::from(w)));
    }
    m
}

/// Columns `r, k, norm` and, after a UGAS check, `closure_norm`.
fn norm_table(rep: &UgasReport) -> Table {
    let with_closure = !rep.closure_norms.is_empty();
    let mut header = vec!["r".to_string(), "k".into(), "norm".into()];
    if with_closure {
        header.push("closure_norm".into());
    }
    let mut rows = Vec::new();
    for (a, &r) in rep.radii.iter().enumerate() {
        for (k, &norm) in rep.norms[a].iter().enumerate() {
            let mut row = vec![r, k as f64, norm];
            if with_closure {
                row.push(rep.closure_norms[a][k]);
            }
            rows.push(row);
        }
    }
    Table::new("norms", header, rows)
}

fn check_indices(g: &GainOperator, indices: &[usize]) -> StepResult<()> {
    let top = g.window() + 1;
    match indices.iter().find(|&&i| i == 0 || i > top) {
        Some(i) => Err(format!("index {i} outside 1..={top}")),
        None => Ok(()),
    }
}

fn iterate_table(
    ctx: &Context,
    id: &str,
    r: f64,
    steps: &[usize],
    indices: &[usize],
) -> StepResult<(Step, Vec<Table>)> {
    check_indices(&ctx.g, indices)?;
    if !(r >= 0.0) {
        return Err(format!("radius {r} must be nonnegative"));
    }
    let mut sorted = steps.to_vec();
    sorted.sort_unstable();
    sorted.dedup();
    let mut rows = Vec::new();
    let mut cur = ray(&ctx.g, r);
    let mut depth = 0;
    for &k in &sorted {
        cur = ctx.g.iterate(&cur, k - depth).map_err(msg)?;
        depth = k;
        rows.extend(indices.iter().map(|&i| vec![k as f64, i as f64, cur.get(i)]));
    }
    let scope = format!("iterates of {r}*1 at depths {sorted:?}; window {}", ctx.g.window());
    let table = Table::new("iterates", vec!["k".into(), "index".into(), "value".into()], rows);
    Ok((Step::new(id, "iterate", scope), vec![table]))
}

fn star(ctx: &Context, id: &str, radii: &[f64], eps: f64, m_max: usize) -> StepResult<(Step, Vec<Table>)> {
    let mut step =
        Step::new(id, "star", format!("closures with eps {eps:e}, depth cap {m_max}; window {}", ctx.g.window()));
    let mut rows = Vec::new();
    let mut all_converged = true;
    let mut deepest = 0usize;
    for &r in radii {
        let q = kleene_star(&ctx.g, &ray(&ctx.g, r), eps, m_max).map_err(msg)?;
        all_converged &= q.converged;
        deepest = deepest.max(q.depth_used);
        let top = if ctx.g.is_explicit() { ctx.g.window() } else { ctx.g.window() + 1 };
        rows.extend((1..=top).map(|i| vec![r, i as f64, q.closure.get(i)]));
    }
    step.metrics.insert("converged".into(), f64::from(u8::from(all_converged)));
    step.metrics.insert("max_depth_used".into(), deepest as f64);
    Ok((step, vec![Table::new("closure", vec!["r".into(), "index".into(), "value".into()], rows)]))
}

fn path(
    ctx: &mut Context,
    id: &str,
    theta: &ScalarFn,
    grid: &[f64],
    eps: f64,
    m_max: usize,
    options: &PathOptions,
) -> StepResult<(Step, Vec<Table>)> {
    let built = build_path(&ctx.g, theta, grid, eps, m_max, options).map_err(msg)?;
    let mut step = Step::new(id, "path", built.scope.clone());
    step.push_verdict("decay", verify_decay(&built, &ctx.g, 10.0 * eps).map_err(msg)?);
    step.push_verdict("envelopes", verify_envelopes(&built).map_err(msg)?);
    step.push_verdict("monotone", verify_monotone(&built, 0.0).map_err(msg)?);
    step.metrics.insert("grid_points".into(), grid.len() as f64);
    step.metrics.insert("max_depth".into(), built.depths.iter().copied().max().unwrap_or(0) as f64);
    step.metrics.insert("envelopes_kinf".into(), f64::from(u8::from(envelopes_are_kinf(&built).map_err(msg)?)));
    let indices: Vec<usize> = (1..=built.window).collect();
    let (header, rows) = path_table(&built, &indices).map_err(msg)?;
    ctx.path = Some(built);
    Ok((step, vec![Table::new("sigma", header, rows)]))
}

fn input_for(spec: &InputSpec, rng: &mut ChaCha8Rng, horizon: f64, dt: f64) -> StepResult<InputSignal> {
    match spec {
        InputSpec::Zero => Ok(InputSignal::zero()),
        InputSpec::Constant { value } => Ok(InputSignal::constant(*value)),
        InputSpec::Step { t0, value } => InputSignal::step(*t0, *value).map_err(msg),
        InputSpec::RandomStep { max_magnitude } => {
            let t0 = (rng.gen_range(0.0..=horizon / 2.0) / dt).round() * dt;
            let c = rng.gen_range(0.0..=*max_magnitude);
            InputSignal::step(t0, c).map_err(msg)
        }
    }
}

fn with_trajectory(v: Verdict, k: usize) -> Verdict {
    match v.witness {
        Some(Witness::Time { t, lhs, rhs, .. }) => {
            Verdict { witness: Some(Witness::Time { trajectory: k, t, lhs, rhs }), ..v }
        }
        _ => v,
    }
}

fn simulate(ctx: &Context, id: &str, spec: &AnalysisSpec) -> StepResult<(Step, Vec<Table>)> {
    let AnalysisSpec::Simulate {
        trajectories,
        horizon,
        dt,
        seed,
        x0_radius,
        input,
        alpha_hat,
        stride,
        tol,
        iss,
        table_stride,
        ..
    } = spec
    else {
        return Err("not a simulation".into());
    };
    let net = ctx.net.as_ref().ok_or("simulation needs a [network] section")?;
    let path = ctx.path.as_ref().ok_or("simulation needs a path analysis to build the composite Lyapunov function")?;
    if *trajectories == 0 || *table_stride == 0 {
        return Err("trajectories and table_stride must be positive".into());
    }
    if *iss && *trajectories < 2 {
        return Err("the ISS fit needs at least two trajectories".into());
    }
    let v = compose_v(net, path).map_err(msg)?;
    let gamma = gamma_external(path, net);
    let alpha_hat = ctx.resolve(alpha_hat)?;

    let mut rng = ChaCha8Rng::seed_from_u64(*seed);
    let n = net.state_dim();
    let mut cases = Vec::with_capacity(*trajectories);
    for _ in 0..*trajectories {
        let x0: Vec<f64> = (0..n).map(|_| rng.gen_range(-*x0_radius..=*x0_radius)).collect();
        cases.push((x0, input_for(input, &mut rng, *horizon, *dt)?));
    }
    let trajs: Vec<Trajectory> =
        simulate_batch(net, &cases, *horizon, *dt).into_iter().collect::<Result<_, _>>().map_err(msg)?;

    let mut step =
        Step::new(id, "simulate", format!("{trajectories} trajectories on [0, {horizon}], dt {dt}; {}", path.scope));
    let mut decay: Option<Verdict> = None;
    let mut active_total = 0.0;
    let mut summary = Vec::with_capacity(trajs.len());
    let mut monotone_worst = 0.0f64;
    for (k, tr) in trajs.iter().enumerate() {
        let verdict =
            with_trajectory(check_decay_implication(&v, &gamma, &alpha_hat, tr, *stride, *tol).map_err(msg)?, k);
        let active = verdict.metrics.get("active").copied().unwrap_or(0.0);
        active_total += active;
        let values = v_series(&v, tr).map_err(msg)?;
        monotone_worst = values.windows(2).map(|w| w[1] - w[0]).fold(monotone_worst, f64::max);
        summary.push(vec![
            k as f64,
            net.norm(tr.x0()),
            tr.sup_input_norm,
            values[0],
            values[values.len() - 1],
            active,
            verdict.metrics.get("worst_margin").copied().unwrap_or(f64::NAN),
        ]);
        if decay.as_ref().is_none_or(|d| d.passed() && !verdict.passed()) {
            decay = Some(verdict);
        }
    }
    let decay = decay.expect("at least one trajectory");
    let decay = if decay.passed() { Verdict { metrics: BTreeMap::new(), ..decay } } else { decay };
    step.push_verdict("decay", decay.with_metric("active", active_total));
    if matches!(input, InputSpec::Zero) {
        let scope = format!("V along {trajectories} zero-input trajectories, tol {tol:e}");
        let verdict = if monotone_worst > *tol {
            Verdict::falsified(Witness::GridPoint { r: 0.0, index: 0, lhs: monotone_worst, rhs: *tol }, scope)
        } else {
            Verdict::no_violation(scope)
        };
        step.push_verdict("monotone", verdict.with_metric("largest_increase", monotone_worst));
    }
    if *iss {
        let gamma_iss = iss_gain(path, net);
        let (train, held_out) = trajs.split_at(trajs.len() / 2);
        let beta = fit_iss_envelope(train, net, &gamma_iss).map_err(msg)?;
        let mut verdict = check_iss_estimate(held_out, net, &beta, &gamma_iss).map_err(msg)?;
        if let sgnet_core::envelope::KlEnvelope::Geometric { c, lambda } = beta {
            verdict = verdict.with_metric("beta_c", c).with_metric("beta_lambda", lambda);
        }
        step.push_verdict("iss", verdict);
    }

    let first = &trajs[0];
    let values = v_series(&v, first).map_err(msg)?;
    let threshold = gamma.eval(first.sup_input_norm).map_err(msg)?;
    let active: Vec<bool> = values.iter().map(|&x| x > threshold).collect();
    let (header, rows) = trajectory_table(first, &values, &active);
    let rows = rows.into_iter().step_by(*table_stride).collect();
    let summary_header = ["trajectory", "x0_norm", "input_norm", "v_start", "v_end", "active", "worst_margin"];
    Ok((
        step,
        vec![
            Table::new("summary", summary_header.iter().map(|s| s.to_string()).collect(), summary),
            Table::new("trajectory_0", header, rows),
        ],
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::parse_scenario;

    #[test]
    fn ids_are_unique() {
        let s = parse_scenario(
            "schema_version = 1\nname = \"x\"\n[operator]\npreset = \"twonode\"\n\
             [[analyses]]\ncheck = \"sgc\"\n[[analyses]]\ncheck = \"sgc\"\n[[analyses]]\ncheck = \"star\"\nlabel = \"q\"\n",
        )
        .unwrap();
        assert_eq!(step_ids(&s.analyses), ["sgc", "sgc-2", "q"]);
    }

    #[test]
    fn twonode_pipeline() {
        let s = parse_scenario(
            "schema_version = 1\nname = \"x\"\n[operator]\npreset = \"twonode\"\n\
             [[analyses]]\ncheck = \"path\"\ntheta = { kind = \"linear\", slope = 0.1 }\nr_grid = { lo = 0.1, hi = 10.0, per_decade = 8 }\n\
             [[analyses]]\ncheck = \"sgc-cycles\"\n",
        )
        .unwrap();
        let out = execute(&s).unwrap();
        assert_eq!(out.report.steps[0].id, "sgc-cycles");
        assert_eq!(out.report.steps[0].status, StepStatus::Certified);
        assert!((out.report.steps[0].verdicts["sgc-cycles"].metrics["max_cycle_ratio"] - 0.4).abs() < 1e-12);
        let path = &out.report.steps[1];
        assert_eq!(path.status, StepStatus::NoViolationFound, "{path:?}");
        assert_eq!(out.tables[0].name, "path_sigma");
        assert_eq!(out.tables[0].rows[0][1], 2.2 * out.tables[0].rows[0][0]);
    }

    #[test]
    fn simulation_without_path_is_refused() {
        let s = parse_scenario(
            "schema_version = 1\nname = \"x\"\n[operator]\npreset = \"twonode\"\n[network]\npreset = \"twonode\"\n\
             [[analyses]]\ncheck = \"simulate\"\ntrajectories = 1\nhorizon = 0.1\n",
        )
        .unwrap();
        let out = execute(&s).unwrap();
        assert_eq!(out.report.steps[0].status, StepStatus::Refused);
        assert_eq!(out.report.exit_code(), 1);
    }
}
