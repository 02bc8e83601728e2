//! Command implementations behind the `pattern-rank` binary.
//!
//! Every command returns a [`Report`]: `# key: value` metadata lines followed
//! by one or more whitespace-separated tables, each with a single header row.

use std::fmt::Write as _;
use std::path::PathBuf;

use anyhow::{anyhow, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use pattern_rank::fixtures;
use pattern_rank::multipliers::{fixed_point_iteration, xi_star_ranking, FixedPointTrace, MultiplierError};
use pattern_rank::policy::{index_rule, PolicySpec};
use pattern_rank::relaxed::{priority_policy, rank_pairs, Ranking, RelaxedError, TieBreak};
use pattern_rank::simulator::{simulate, SimConfig, SimError, SimResult, THREADS_ENV};
use pattern_rank::SystemModel;

/// A bad flag, scenario or combination of options.
#[derive(Debug)]
pub struct UsageError(pub String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

/// 2 for usage and configuration problems, 1 for runtime failures.
pub fn exit_code(err: &anyhow::Error) -> i32 {
    if err.downcast_ref::<UsageError>().is_some() {
        return 2;
    }
    match err.downcast_ref::<MultiplierError>() {
        Some(MultiplierError::NotWeaklyCoupled(_)) | Some(MultiplierError::NotHeavyTraffic(_)) => 2,
        _ => 1,
    }
}

#[derive(Parser, Debug)]
#[command(name = "pattern-rank", version, about = "Index policies for multi-pool resource allocation")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Run the relaxed priority policy and print ν, critical pairs and the attractor.
    SolveRelaxed(SolveArgs),
    /// Damped fixed-point search for decomposable multipliers.
    FixedPoint(FixedPointArgs),
    /// Simulate policies over a list of scaling parameters.
    #[command(alias = "sweep")]
    Simulate(SimulateArgs),
    /// Regenerate the data behind one of the benchmark figures.
    Reproduce(ReproduceArgs),
}

#[derive(Args, Debug, Clone)]
pub struct ScenarioArgs {
    /// Built-in scenario (fig1a, fig1b, fig2) or path to a TOML scenario file.
    #[arg(long)]
    pub scenario: String,
}

#[derive(Args, Debug, Clone)]
pub struct FixedPointParams {
    /// Initial multipliers: one value for every pool, or a comma-separated list.
    #[arg(long, value_delimiter = ',', default_value = "0")]
    pub gamma0: Vec<f64>,
    #[arg(long, default_value_t = 0.5)]
    pub damping: f64,
    #[arg(long, default_value_t = 50)]
    pub max_iter: usize,
}

#[derive(Args, Debug, Clone)]
pub struct SimParams {
    /// Scaling parameter; repeatable.
    #[arg(long = "h")]
    pub h: Vec<u32>,
    /// Simulated time per replication; defaults to 2000 / min(λ, μ).
    #[arg(long)]
    pub horizon: Option<f64>,
    #[arg(long, default_value_t = 0.2)]
    pub warmup: f64,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    /// Target CI half-width relative to the mean.
    #[arg(long, default_value_t = 0.03)]
    pub ci_target: f64,
    #[arg(long, default_value_t = 4)]
    pub min_reps: usize,
    #[arg(long, default_value_t = 64)]
    pub max_reps: usize,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
pub enum RankingSource {
    /// Ranking o_{k*} from the fixed-point search.
    FixedPoint,
    /// Descending Ξ* (weakly coupled systems only).
    XiStar,
    /// Descending Ξ(γ, 0) at the given γ.
    Index,
}

#[derive(Args, Debug)]
pub struct SolveArgs {
    #[command(flatten)]
    pub scenario: ScenarioArgs,
    /// Multipliers: one value for every pool, or a comma-separated list.
    #[arg(long, value_delimiter = ',', default_value = "0")]
    pub gamma: Vec<f64>,
    #[arg(long, value_enum, default_value_t = RankingSource::Index)]
    pub ranking: RankingSource,
    #[command(flatten)]
    pub fixed_point: FixedPointParams,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct FixedPointArgs {
    #[command(flatten)]
    pub scenario: ScenarioArgs,
    #[command(flatten)]
    pub fixed_point: FixedPointParams,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct SimulateArgs {
    #[command(flatten)]
    pub scenario: ScenarioArgs,
    /// index:eps=<ε_M>, max-reward, min-cost or random; repeatable.
    #[arg(long = "policy", default_value = "index:eps=0.01")]
    pub policies: Vec<String>,
    /// Ranking used by index policies.
    #[arg(long, value_enum, default_value_t = RankingSource::FixedPoint)]
    pub ranking: RankingSource,
    #[command(flatten)]
    pub fixed_point: FixedPointParams,
    #[command(flatten)]
    pub sim: SimParams,
    /// Also print simulated and predicted per-pattern occupancy.
    #[arg(long)]
    pub occupancy: bool,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
pub enum Figure {
    Fig1a,
    Fig1b,
    Fig2,
    Fig2b,
}

#[derive(Args, Debug)]
pub struct ReproduceArgs {
    #[arg(value_enum)]
    pub figure: Figure,
    #[command(flatten)]
    pub fixed_point: FixedPointParams,
    #[command(flatten)]
    pub sim: SimParams,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Clone, Debug, Default)]
pub struct Table {
    pub name: String,
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    fn new(name: &str, header: &[&str]) -> Self {
        Table { name: name.into(), header: header.iter().map(|s| s.to_string()).collect(), rows: Vec::new() }
    }
}

#[derive(Clone, Debug, Default)]
pub struct Report {
    pub meta: Vec<(String, String)>,
    pub tables: Vec<Table>,
}

impl Report {
    fn meta(&mut self, key: &str, value: impl ToString) {
        self.meta.push((key.into(), value.to_string()));
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.meta.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }

    pub fn table(&self, name: &str) -> Option<&Table> {
        self.tables.iter().find(|t| t.name == name)
    }

    pub fn render(&self) -> String {
        let mut s = String::new();
        for (k, v) in &self.meta {
            writeln!(s, "# {k}: {v}").unwrap();
        }
        for t in &self.tables {
            writeln!(s, "\n# table: {}", t.name).unwrap();
            writeln!(s, "{}", t.header.join("\t")).unwrap();
            for r in &t.rows {
                writeln!(s, "{}", r.join("\t")).unwrap();
            }
        }
        s
    }
}

fn join(v: &[f64]) -> String {
    v.iter().map(|x| format!("{x:.6}")).collect::<Vec<_>>().join(",")
}

pub fn load_scenario(reference: &str) -> Result<SystemModel> {
    if let Some(m) = fixtures::by_name(reference) {
        return Ok(m);
    }
    let text = std::fs::read_to_string(reference).map_err(|e| {
        usage(format!("scenario '{reference}' is neither a built-in ({}) nor a readable file: {e}", fixtures::NAMES.join(", ")))
    })?;
    SystemModel::from_toml(&text).map_err(|e| usage(format!("scenario '{reference}': {e}")))
}

fn broadcast(model: &SystemModel, values: &[f64], flag: &str) -> Result<Vec<f64>> {
    let j = model.num_pools();
    let v = match values.len() {
        1 => vec![values[0]; j],
        n if n == j => values.to_vec(),
        n => return Err(usage(format!("--{flag} has {n} entries; expected 1 or {j}"))),
    };
    if v.iter().any(|x| !x.is_finite() || *x < 0.0) {
        return Err(usage(format!("--{flag} entries must be finite and nonnegative")));
    }
    Ok(v)
}

fn run_fixed_point(model: &SystemModel, p: &FixedPointParams) -> Result<FixedPointTrace> {
    if !(0.0..=1.0).contains(&p.damping) {
        return Err(usage("--damping must lie in [0, 1]"));
    }
    if p.max_iter == 0 {
        return Err(usage("--max-iter must be at least 1"));
    }
    let g0 = broadcast(model, &p.gamma0, "gamma0")?;
    Ok(fixed_point_iteration(model, &g0, p.damping, p.max_iter)?)
}

fn fixed_point_meta(r: &mut Report, p: &FixedPointParams, trace: &FixedPointTrace) {
    r.meta("gamma0", join(&p.gamma0));
    r.meta("damping", p.damping);
    r.meta("max_iter", p.max_iter);
    r.meta("residual_norm", "euclidean");
    r.meta("k_star", trace.k_star);
    r.meta("gamma_star", join(trace.gamma_star()));
    r.meta("consistent", trace.check.consistent);
    r.meta("check_residual", format!("{:e}", trace.check.residual));
    r.meta("check_tolerance", format!("{:e}", trace.check.tolerance));
    r.meta("decomposable", trace.decomposable());
}

/// Parses `index:eps=0.01`, `index`, `max-reward`, `min-cost`, `random`.
/// Index policies get a placeholder ranking that the caller replaces.
#[derive(Clone, Debug, PartialEq)]
pub enum PolicyArg {
    Index(f64),
    MaxReward,
    MinCost,
    Random,
}

impl std::str::FromStr for PolicyArg {
    type Err = UsageError;

    fn from_str(s: &str) -> Result<Self, UsageError> {
        let bad = || UsageError(format!("unknown policy '{s}'"));
        match s {
            "max-reward" => return Ok(PolicyArg::MaxReward),
            "min-cost" => return Ok(PolicyArg::MinCost),
            "random" => return Ok(PolicyArg::Random),
            "index" => return Ok(PolicyArg::Index(0.01)),
            _ => {}
        }
        let eps = s.strip_prefix("index:eps=").ok_or_else(bad)?;
        let eps: f64 = eps.parse().map_err(|_| bad())?;
        if !(0.0..=1.0).contains(&eps) {
            return Err(UsageError(format!("ε_M in '{s}' must lie in [0, 1]")));
        }
        Ok(PolicyArg::Index(eps))
    }
}

impl PolicyArg {
    fn spec(&self, ranking: &Ranking) -> PolicySpec {
        match *self {
            PolicyArg::Index(eps_m) => PolicySpec::Index { ranking: ranking.clone(), eps_m },
            PolicyArg::MaxReward => PolicySpec::MaxReward,
            PolicyArg::MinCost => PolicySpec::MinCost,
            PolicyArg::Random => PolicySpec::Random,
        }
    }
}

fn sim_config(model: &SystemModel, p: &SimParams, h: u32) -> Result<SimConfig> {
    if h == 0 {
        return Err(usage("--h must be at least 1"));
    }
    let mut cfg = SimConfig::new(model, h);
    if let Some(t) = p.horizon {
        if !(t > 0.0) {
            return Err(usage("--horizon must be positive"));
        }
        cfg.horizon = t;
    }
    if !(0.0..1.0).contains(&p.warmup) {
        return Err(usage("--warmup must lie in [0, 1)"));
    }
    if !(p.ci_target > 0.0) {
        return Err(usage("--ci-target must be positive"));
    }
    if p.min_reps < 2 || p.max_reps < p.min_reps {
        return Err(usage("need 2 <= --min-reps <= --max-reps"));
    }
    cfg.warmup = p.warmup;
    cfg.seed = p.seed;
    cfg.target_rel_half_width = p.ci_target;
    cfg.initial_replications = p.min_reps;
    cfg.max_replications = p.max_reps;
    Ok(cfg)
}

fn sim_meta(r: &mut Report, model: &SystemModel, p: &SimParams) {
    let cfg = SimConfig::new(model, 1);
    r.meta("horizon", p.horizon.unwrap_or(cfg.horizon));
    r.meta("warmup", p.warmup);
    r.meta("seed", p.seed);
    r.meta("replication_seed", "seed xor replication index");
    r.meta("ci_target", p.ci_target);
    r.meta("confidence", cfg.confidence);
    r.meta("replications", format!("{}..{} (doubling)", p.min_reps, p.max_reps));
    r.meta("threads", std::env::var(THREADS_ENV).unwrap_or_else(|_| "all".into()));
    r.meta("eps_schedule", "eps_m*(k+1)/m over the m users of each pool in priority order, floored at (w-1)/C");
}

fn sim_header(model: &SystemModel) -> Vec<String> {
    let mut h: Vec<String> = ["scenario", "policy", "eps_m", "h", "revenue", "ci_half", "ref_revenue", "rel_gap"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    h.extend((1..=model.num_request_types()).map(|l| format!("blocking_rt{l}")));
    h.extend(["replications", "converged", "events", "seed"].iter().map(|s| s.to_string()));
    h
}

fn sim_row(scenario: &str, label: &str, eps_m: f64, h: u32, res: &SimResult, reference: f64, seed: u64) -> Vec<String> {
    let mut row = vec![
        scenario.to_string(),
        label.to_string(),
        format!("{eps_m}"),
        h.to_string(),
        format!("{:.4}", res.mean),
        format!("{:.4}", res.half_width),
        format!("{reference:.4}"),
        format!("{:.6}", (reference - res.mean) / reference),
    ];
    row.extend(res.blocking.iter().map(|b| format!("{b:.6}")));
    row.extend([res.replications.to_string(), res.converged.to_string(), res.events.to_string(), seed.to_string()]);
    row
}

pub fn cmd_solve_relaxed(args: &SolveArgs) -> Result<Report> {
    let model = load_scenario(&args.scenario.scenario)?;
    let gamma = broadcast(&model, &args.gamma, "gamma")?;
    let mut r = Report::default();
    r.meta("command", "solve-relaxed");
    r.meta("scenario", &args.scenario.scenario);
    r.meta("ranking", format!("{:?}", args.ranking).to_lowercase());
    let (o, gamma) = match args.ranking {
        RankingSource::Index => (rank_pairs(&model, &gamma, &vec![0.0; model.num_request_types()], TieBreak::Canonical), gamma),
        RankingSource::XiStar => (xi_star_ranking(&model, &vec![0.0; model.num_request_types()])?, gamma),
        RankingSource::FixedPoint => {
            let trace = run_fixed_point(&model, &args.fixed_point)?;
            fixed_point_meta(&mut r, &args.fixed_point, &trace);
            (trace.ranking_star().clone(), trace.gamma_star().to_vec())
        }
    };
    r.meta("gamma", join(&gamma));
    let s = priority_policy(&model, &o, &gamma, None)?;
    r.meta("heavy_traffic", s.nu.iter().all(|&v| v == 0.0));
    r.meta("revenue", format!("{:.6}", s.revenue));

    let mut t = Table::new("request_types", &["rt", "nu", "exhausted_at", "throughput", "offered"]);
    for (l, rt) in model.request_types().iter().enumerate() {
        t.rows.push(vec![
            (l + 1).to_string(),
            format!("{:.6}", s.nu[l]),
            s.exhausted_at[l].map_or("-".into(), |p| (p + 1).to_string()),
            format!("{:.6}", s.throughput[l]),
            format!("{:.6}", rt.arrival_rate),
        ]);
    }
    r.tables.push(t);
    let mut t = Table::new("critical", &["position", "pattern", "state", "pool"]);
    for c in &s.critical {
        t.rows.push(vec![
            (c.position + 1).to_string(),
            (c.pair.pattern + 1).to_string(),
            c.pair.state.to_string(),
            (c.pool + 1).to_string(),
        ]);
    }
    r.tables.push(t);
    let mut t = Table::new("patterns", &["pattern", "rt", "dummy", "occupancy"]);
    for (i, p) in model.patterns().iter().enumerate() {
        t.rows.push(vec![
            (i + 1).to_string(),
            (p.request_type + 1).to_string(),
            p.dummy.to_string(),
            format!("{:.6}", s.occupancy[i]),
        ]);
    }
    r.tables.push(t);
    let mut t = Table::new("pools", &["pool", "usage", "capacity"]);
    for (j, pool) in model.pools().iter().enumerate() {
        t.rows.push(vec![(j + 1).to_string(), format!("{:.6}", s.usage[j]), pool.capacity.to_string()]);
    }
    r.tables.push(t);
    let mut t = Table::new("attractor", &["position", "pattern", "state", "activation", "z"]);
    for (pos, pair) in o.pairs().iter().enumerate() {
        if s.z[pos] > 0.0 || s.activation[pos] > 0.0 {
            t.rows.push(vec![
                (pos + 1).to_string(),
                (pair.pattern + 1).to_string(),
                pair.state.to_string(),
                format!("{:.6}", s.activation[pos]),
                format!("{:.6}", s.z[pos]),
            ]);
        }
    }
    r.tables.push(t);
    Ok(r)
}

pub fn cmd_fixed_point(args: &FixedPointArgs) -> Result<Report> {
    let model = load_scenario(&args.scenario.scenario)?;
    let trace = run_fixed_point(&model, &args.fixed_point)?;
    let mut r = Report::default();
    r.meta("command", "fixed-point");
    r.meta("scenario", &args.scenario.scenario);
    fixed_point_meta(&mut r, &args.fixed_point, &trace);
    let zero = vec![0.0; model.num_pools()];
    let s = priority_policy(&model, trace.ranking_star(), &zero, None).map_err(anyhow::Error::from)?;
    r.meta("revenue_star", format!("{:.6}", s.revenue));
    r.meta("critical_pools_star", s.critical_pools().iter().map(|j| (j + 1).to_string()).collect::<Vec<_>>().join(","));
    let mut t = Table::new("trace", &["k", "residual", "clipped_reorder", "revenue", "gamma"]);
    for (k, g) in trace.gammas.iter().enumerate().skip(1) {
        let rev = priority_policy(&model, &trace.rankings[k], &zero, None)?.revenue;
        t.rows.push(vec![
            k.to_string(),
            format!("{:.6e}", trace.residuals[k - 1]),
            trace.clipped_reorder.contains(&k).to_string(),
            format!("{rev:.6}"),
            join(g),
        ]);
    }
    r.tables.push(t);
    Ok(r)
}

/// Ranking for index policies plus the reference revenue R(o).
fn reference_ranking(model: &SystemModel, source: RankingSource, fp: &FixedPointParams, r: &mut Report) -> Result<(Ranking, f64)> {
    let zero_g = vec![0.0; model.num_pools()];
    let zero_nu = vec![0.0; model.num_request_types()];
    let o = match source {
        RankingSource::FixedPoint => {
            let trace = run_fixed_point(model, fp)?;
            fixed_point_meta(r, fp, &trace);
            trace.ranking_star().clone()
        }
        RankingSource::XiStar => xi_star_ranking(model, &zero_nu)?,
        RankingSource::Index => rank_pairs(model, &zero_g, &zero_nu, TieBreak::Canonical),
    };
    let reference = priority_policy(model, &o, &zero_g, None)?.revenue;
    r.meta("ranking", format!("{source:?}").to_lowercase());
    r.meta("ref_revenue", format!("{reference:.6}"));
    Ok((o, reference))
}

fn note_clamping(model: &SystemModel, o: &Ranking, policies: &[PolicyArg], hs: &[u32], r: &mut Report) {
    for p in policies {
        if let PolicyArg::Index(eps) = *p {
            let clamped: Vec<String> =
                hs.iter().filter(|&&h| index_rule(model, o, eps, h).1.clamped).map(|h| h.to_string()).collect();
            if !clamped.is_empty() {
                let msg = format!("eps_m={eps} below (w-1)/C at h={}; base values used there", clamped.join(","));
                eprintln!("warning: {msg}");
                r.meta("warning", msg);
            }
        }
    }
}

fn run_sweep(
    r: &mut Report,
    scenario: &str,
    model: &SystemModel,
    policies: &[PolicyArg],
    o: &Ranking,
    reference: f64,
    sim: &SimParams,
    hs: &[u32],
    occupancy: bool,
) -> Result<()> {
    note_clamping(model, o, policies, hs, r);
    let mut t = Table { name: "results".into(), header: sim_header(model), rows: Vec::new() };
    let mut occ = Table::new("occupancy", &["policy", "h", "pattern", "simulated", "attractor"]);
    let attractor = priority_policy(model, o, &vec![0.0; model.num_pools()], None)?.occupancy;
    for p in policies {
        let spec = p.spec(o);
        for &h in hs {
            let cfg = sim_config(model, sim, h)?;
            let res = simulate(model, &spec, &cfg)?;
            t.rows.push(sim_row(scenario, &spec.label(), spec.eps_m(), h, &res, reference, cfg.seed));
            for i in (0..model.num_patterns()).filter(|&i| !model.pattern(i).dummy) {
                occ.rows.push(vec![
                    spec.label(),
                    h.to_string(),
                    (i + 1).to_string(),
                    format!("{:.6}", res.occupancy[i]),
                    format!("{:.6}", attractor[i]),
                ]);
            }
        }
    }
    r.tables.push(t);
    if occupancy {
        r.tables.push(occ);
    }
    Ok(())
}

pub fn cmd_simulate(args: &SimulateArgs) -> Result<Report> {
    let model = load_scenario(&args.scenario.scenario)?;
    if args.sim.h.is_empty() {
        return Err(usage("at least one --h is required"));
    }
    let policies: Vec<PolicyArg> = args.policies.iter().map(|s| s.parse()).collect::<Result<_, _>>()?;
    let mut r = Report::default();
    r.meta("command", "simulate");
    r.meta("scenario", &args.scenario.scenario);
    r.meta("policies", args.policies.join(","));
    r.meta("h", args.sim.h.iter().map(|h| h.to_string()).collect::<Vec<_>>().join(","));
    sim_meta(&mut r, &model, &args.sim);
    let (o, reference) = reference_ranking(&model, args.ranking, &args.fixed_point, &mut r)?;
    run_sweep(&mut r, &args.scenario.scenario, &model, &policies, &o, reference, &args.sim, &args.sim.h, args.occupancy)?;
    Ok(r)
}

pub fn cmd_reproduce(args: &ReproduceArgs) -> Result<Report> {
    let (scenario, policies, default_h): (&str, Vec<PolicyArg>, Vec<u32>) = match args.figure {
        Figure::Fig1a => ("fig1a", vec![PolicyArg::Index(0.01)], vec![1, 2, 5, 10, 20, 50, 100]),
        Figure::Fig1b => ("fig1b", vec![PolicyArg::Index(0.01)], vec![1, 2, 5, 10, 20, 50, 100]),
        Figure::Fig2 => (
            "fig2",
            vec![PolicyArg::Index(0.01), PolicyArg::Index(0.0), PolicyArg::MaxReward, PolicyArg::MinCost, PolicyArg::Random],
            vec![1, 5, 10, 20, 50],
        ),
        Figure::Fig2b => ("fig2", Vec::new(), vec![50]),
    };
    let model = load_scenario(scenario)?;
    let hs = if args.sim.h.is_empty() { default_h } else { args.sim.h.clone() };
    let mut r = Report::default();
    r.meta("command", format!("reproduce {:?}", args.figure).to_lowercase());
    r.meta("scenario", scenario);
    r.meta("h", hs.iter().map(|h| h.to_string()).collect::<Vec<_>>().join(","));
    sim_meta(&mut r, &model, &args.sim);
    if args.figure != Figure::Fig2b {
        let (o, reference) = reference_ranking(&model, RankingSource::FixedPoint, &args.fixed_point, &mut r)?;
        run_sweep(&mut r, scenario, &model, &policies, &o, reference, &args.sim, &hs, false)?;
        return Ok(r);
    }
    reproduce_fig2b(&mut r, &model, args, hs[0])?;
    Ok(r)
}

/// Per iteration k: R(o_k) and index-policy revenue under o_k at one h, with
/// the baselines as constant reference columns.
fn reproduce_fig2b(r: &mut Report, model: &SystemModel, args: &ReproduceArgs, h: u32) -> Result<()> {
    let trace = run_fixed_point(model, &args.fixed_point)?;
    fixed_point_meta(r, &args.fixed_point, &trace);
    let cfg = sim_config(model, &args.sim, h)?;
    let zero = vec![0.0; model.num_pools()];
    for (label, spec) in [("max_reward", PolicySpec::MaxReward), ("min_cost", PolicySpec::MinCost), ("random", PolicySpec::Random)] {
        let res = simulate(model, &spec, &cfg)?;
        r.meta(&format!("{label}_revenue"), format!("{:.4} ± {:.4}", res.mean, res.half_width));
    }
    let mut t = Table::new(
        "iterations",
        &["k", "ref_revenue", "index_0.01", "ci_0.01", "index_0", "ci_0", "decomposable_o_k"],
    );
    // Rankings repeat across iterations; simulate each distinct one once.
    let mut cache: Vec<(Ranking, [SimResult; 2])> = Vec::new();
    for k in 1..trace.rankings.len() {
        let o = &trace.rankings[k];
        let reference = priority_policy(model, o, &zero, None)?.revenue;
        let idx = match cache.iter().position(|(c, _)| c == o) {
            Some(p) => p,
            None => {
                let a = simulate(model, &PolicySpec::Index { ranking: o.clone(), eps_m: 0.01 }, &cfg)?;
                let b = simulate(model, &PolicySpec::Index { ranking: o.clone(), eps_m: 0.0 }, &cfg)?;
                cache.push((o.clone(), [a, b]));
                cache.len() - 1
            }
        };
        let [a, b] = &cache[idx].1;
        t.rows.push(vec![
            k.to_string(),
            format!("{reference:.4}"),
            format!("{:.4}", a.mean),
            format!("{:.4}", a.half_width),
            format!("{:.4}", b.mean),
            format!("{:.4}", b.half_width),
            (k == trace.k_star && trace.decomposable()).to_string(),
        ]);
    }
    r.tables.push(t);
    Ok(())
}

/// Dispatches a parsed command line and returns the rendered report and the
/// requested output path.
pub fn run(cli: &Cli) -> Result<(String, Option<PathBuf>)> {
    let (report, out) = match &cli.command {
        Command::SolveRelaxed(a) => (cmd_solve_relaxed(a)?, a.out.clone()),
        Command::FixedPoint(a) => (cmd_fixed_point(a)?, a.out.clone()),
        Command::Simulate(a) => (cmd_simulate(a)?, a.out.clone()),
        Command::Reproduce(a) => (cmd_reproduce(a)?, a.out.clone()),
    };
    Ok((report.render(), out))
}

/// Errors that indicate a broken internal invariant rather than bad input.
pub fn is_runtime_failure(err: &anyhow::Error) -> bool {
    err.downcast_ref::<SimError>().is_some() || err.downcast_ref::<RelaxedError>().is_some()
}

pub fn parse_from<I, T>(args: I) -> Result<Cli>
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    Cli::try_parse_from(args).map_err(|e| anyhow!(UsageError(e.to_string())))
}
