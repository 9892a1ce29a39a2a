use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, ValueEnum};
use serde::Serialize;

use mesa_core::env::Outcome;
use mesa_core::eval::{evaluate_policy, EpisodeSummary, MetricsReport, PolicySpec};
use mesa_core::net::{
    load_checkpoint, read_checkpoint, write_checkpoint, NetworkParameters, ValuePolicy,
};
use mesa_core::planner::{dijkstra_path, parse_map, run_mesa_navigation, OccupancyGrid};
use mesa_core::sim::{generate_scenario, ScenarioKind, ScenarioSpec, ROBOT_V_MAX};
use mesa_core::stats::{mann_whitney_u, UTestResult};
use mesa_core::train::{
    imitation_fit, initial_parameters, rl_train, run_demonstrations, DemoBuffer, EpisodeLog,
    RlState,
};
use mesa_core::{Error, Vec2};

use crate::context::{read_bytes, read_text, to_json, usage, CliResult, Context, LineWriter};
use crate::plot;

/// Held-out evaluation scenarios start at `seed + EVAL_SEED_OFFSET`.
pub const EVAL_SEED_OFFSET: u64 = 1_000_000;

/// Largest group the generator can reliably place around one anchor.
const HUMANS_PER_GROUP: usize = 5;

fn parse_point(s: &str) -> Result<Vec2, String> {
    let (x, y) = s
        .split_once(',')
        .ok_or_else(|| format!("expected `x,y`, got {s:?}"))?;
    let f = |v: &str| {
        v.trim()
            .parse::<f64>()
            .map_err(|_| format!("bad coordinate {v:?}"))
    };
    Ok(Vec2::new(f(x)?, f(y)?))
}

// ---------------------------------------------------------------- demo

#[derive(Serialize)]
struct DemoSummary<'a> {
    config_digest: &'a str,
    episodes: usize,
    transitions: usize,
    mean_return: f64,
    buffer_digest: String,
    path: &'a Path,
}

pub fn demo(ctx: &Context) -> CliResult {
    let cfg = &ctx.cfg;
    let mut buffer = run_demonstrations(
        &cfg.train,
        &cfg.scenario,
        &ctx.environment(),
        &cfg.orca,
        ctx.workers,
    )?;
    buffer.config_digest = ctx.digest.clone();
    let path = ctx.write("demos.bin", &buffer.to_bytes())?;
    println!(
        "{}",
        to_json(&DemoSummary {
            config_digest: &ctx.digest,
            episodes: buffer.episodes.len(),
            transitions: buffer.n_transitions(),
            mean_return: buffer.mean_return(),
            buffer_digest: buffer.digest(),
            path: &path,
        })
    );
    Ok(())
}

// ---------------------------------------------------------------- train

#[derive(Args)]
pub struct TrainArgs {
    /// Demonstration buffer written by `mesa demo`.
    #[arg(long)]
    demos: Option<PathBuf>,
    /// Start reinforcement learning directly.
    #[arg(long)]
    skip_imitation: bool,
    /// Continue from a `ckpt_ep{N}.state` file.
    #[arg(long, conflicts_with_all = ["demos", "skip_imitation", "model"])]
    resume: Option<PathBuf>,
    /// Initial weights instead of a fresh initialisation.
    #[arg(long)]
    model: Option<PathBuf>,
}

#[derive(Serialize)]
struct ImitationLine<'a> {
    config_digest: &'a str,
    epoch: usize,
    loss: f64,
}

#[derive(Serialize)]
struct TrainLine<'a> {
    config_digest: &'a str,
    #[serde(flatten)]
    log: &'a EpisodeLog,
}

/// Lines of an existing training log that precede `next_episode`.
fn log_prefix(path: &Path, next_episode: usize) -> CliResult<Vec<String>> {
    if !path.exists() {
        return Ok(Vec::new());
    }
    let text = read_text(path)?;
    let mut keep = Vec::new();
    for line in text.lines().filter(|l| !l.trim().is_empty()) {
        let v: serde_json::Value = serde_json::from_str(line)
            .map_err(|e| Error::Parse(format!("{}: {e}", path.display())))?;
        match v.get("episode").and_then(|e| e.as_u64()) {
            Some(e) if (e as usize) < next_episode => keep.push(line.to_string()),
            Some(_) => {}
            None => {
                return Err(
                    Error::Parse(format!("{}: line without an episode", path.display())).into(),
                )
            }
        }
    }
    Ok(keep)
}

fn initial_weights(ctx: &Context, model: Option<&Path>) -> CliResult<NetworkParameters> {
    match model.or(ctx.cfg.paths.checkpoint.as_deref()) {
        Some(p) => Ok(load_checkpoint(p, &ctx.cfg.train.net)?),
        None => Ok(initial_parameters(&ctx.cfg.train)),
    }
}

pub fn train(ctx: &Context, args: TrainArgs) -> CliResult {
    let cfg = &ctx.cfg.train;
    let env = ctx.environment();
    let log_path = ctx.output("train_log.jsonl")?;

    let (mut state, prefix) = if let Some(resume) = &args.resume {
        let state = RlState::from_bytes(&read_bytes(resume)?, cfg)?;
        let prefix = log_prefix(&log_path, state.next_episode)?;
        (state, prefix)
    } else {
        let mut params = initial_weights(ctx, args.model.as_deref())?;
        if !args.skip_imitation {
            let Some(demos) = args.demos.as_ref().or(ctx.cfg.paths.demo_buffer.as_ref()) else {
                return usage("no demonstration buffer: pass --demos <file> or --skip-imitation");
            };
            if !demos.exists() {
                return usage(format!(
                    "demonstration buffer {} does not exist",
                    demos.display()
                ));
            }
            let buffer = DemoBuffer::from_bytes(&read_bytes(demos)?)?;
            let mut lines = Vec::new();
            imitation_fit(&mut params, &buffer, cfg, |epoch, loss| {
                lines.push((epoch, loss))
            })?;
            ctx.write_jsonl(
                "imitation_log.jsonl",
                lines.iter().map(|&(epoch, loss)| ImitationLine {
                    config_digest: &ctx.digest,
                    epoch,
                    loss,
                }),
            )?;
            ctx.write("imitation.mesa", &write_checkpoint(&params))?;
        }
        (RlState::new(params, cfg), Vec::new())
    };

    let mut log = LineWriter::create(&log_path)?;
    for line in &prefix {
        log.raw(line)?;
    }
    let mut previous_state: Option<PathBuf> = None;
    let every = cfg.checkpoint_every;
    let out = &ctx.out;
    let result = rl_train(
        &mut state,
        cfg,
        &ctx.cfg.scenario,
        &env,
        cfg.rl_episodes,
        |st, entry| {
            log.line(&TrainLine {
                config_digest: &ctx.digest,
                log: entry,
            })?;
            let done = entry.episode + 1;
            if every > 0 && done % every == 0 {
                let ckpt = out.join(format!("ckpt_ep{done}.mesa"));
                fs::write(&ckpt, write_checkpoint(&st.params)).map_err(|e| Error::io(&ckpt, e))?;
                let state_path = out.join(format!("ckpt_ep{done}.state"));
                fs::write(&state_path, st.to_bytes()).map_err(|e| Error::io(&state_path, e))?;
                if let Some(old) = previous_state.replace(state_path) {
                    fs::remove_file(&old).map_err(|e| Error::io(&old, e))?;
                }
            }
            Ok(())
        },
    );
    log.finish()?;
    result?;
    let final_path = ctx.write("final.mesa", &write_checkpoint(&state.params))?;
    println!("{}", final_path.display());
    Ok(())
}

// ---------------------------------------------------------------- eval

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum PolicyKind {
    Net,
    Orca,
    Untrained,
}

#[derive(Args)]
pub struct EvalArgs {
    #[arg(long, value_enum, default_value = "net")]
    policy: PolicyKind,
    /// Checkpoint for `--policy net` (default: the config's checkpoint).
    #[arg(long)]
    model: Option<PathBuf>,
    #[arg(long, default_value_t = 500)]
    episodes: usize,
    /// Number of humans, overriding the scenario.
    #[arg(long)]
    humans: Option<usize>,
}

/// The configured scenario with `n` humans. Grouped crowds keep their group
/// count unless the groups would be too crowded to place.
pub fn with_humans(spec: &ScenarioSpec, n: usize) -> ScenarioSpec {
    let mut s = spec.clone();
    s.n_humans = n;
    if n == 0 {
        s.kind = ScenarioKind::Empty;
        s.n_groups = 0;
        return s;
    }
    match s.kind {
        ScenarioKind::Empty => s.kind = ScenarioKind::CircleCrossing,
        ScenarioKind::Grouped => {
            s.n_groups = s.n_groups.max(n.div_ceil(HUMANS_PER_GROUP)).clamp(1, n)
        }
        ScenarioKind::CircleCrossing => {}
    }
    s
}

fn policy_label(kind: PolicyKind) -> &'static str {
    match kind {
        PolicyKind::Net => "net",
        PolicyKind::Orca => "orca",
        PolicyKind::Untrained => "untrained",
    }
}

fn value_policy(ctx: &Context, params: NetworkParameters) -> ValuePolicy {
    ValuePolicy::new(
        params,
        ctx.cfg.reward.clone(),
        ctx.cfg.train.gamma,
        ROBOT_V_MAX,
    )
}

fn trained_params(ctx: &Context, model: Option<&Path>) -> CliResult<NetworkParameters> {
    let Some(path) = model.or(ctx.cfg.paths.checkpoint.as_deref()) else {
        return usage("a checkpoint is required: pass --model <file>");
    };
    Ok(read_checkpoint(&read_bytes(path)?, &ctx.cfg.train.net)?)
}

pub fn eval(ctx: &Context, args: EvalArgs) -> CliResult {
    if args.episodes == 0 {
        return usage("--episodes must be at least 1");
    }
    let spec = match args.humans {
        Some(n) => with_humans(&ctx.cfg.scenario, n),
        None => ctx.cfg.scenario.clone(),
    };
    let policy = match args.policy {
        PolicyKind::Net => PolicySpec::Net(value_policy(
            ctx,
            trained_params(ctx, args.model.as_deref())?,
        )),
        PolicyKind::Untrained => {
            PolicySpec::Net(value_policy(ctx, initial_parameters(&ctx.cfg.train)))
        }
        PolicyKind::Orca => PolicySpec::Orca(ctx.cfg.orca.clone()),
    };
    let result = evaluate_policy(
        &policy,
        &spec,
        &ctx.environment(),
        args.episodes,
        ctx.cfg.seed.wrapping_add(EVAL_SEED_OFFSET),
        ctx.cfg.train.gamma,
        ctx.workers,
    )?;
    let report = MetricsReport {
        config_digest: ctx.digest.clone(),
        policy: policy_label(args.policy).into(),
        metrics: result.metrics.clone(),
        per_episode: result.records.iter().map(EpisodeSummary::from).collect(),
    };
    let metrics_path = ctx.write_json("metrics.json", &report)?;
    let traj = ctx.output("trajectories.jsonl")?;
    let mut w = LineWriter::create(&traj)?;
    for (i, record) in result.records.iter().enumerate() {
        for step in &record.steps {
            let mut step = step.clone();
            step.episode = Some(i);
            step.config_digest = Some(ctx.digest.clone());
            w.line(&step)?;
        }
    }
    w.finish()?;
    println!("{}", to_json(&result.metrics));
    eprintln!("wrote {} and {}", metrics_path.display(), traj.display());
    Ok(())
}

// ---------------------------------------------------------------- nav / plan

fn load_map(ctx: &Context, map: Option<&Path>) -> CliResult<OccupancyGrid> {
    let Some(path) = map.or(ctx.cfg.paths.map.as_deref()) else {
        return usage("a map is required: pass --map <file>");
    };
    Ok(parse_map(&read_text(path)?)?)
}

#[derive(Args)]
pub struct NavArgs {
    #[arg(long)]
    map: Option<PathBuf>,
    #[arg(long)]
    model: Option<PathBuf>,
    /// Robot start `x,y` (default: the scenario's).
    #[arg(long, value_parser = parse_point)]
    start: Option<Vec2>,
    /// Robot goal `x,y` (default: the scenario's).
    #[arg(long, value_parser = parse_point)]
    goal: Option<Vec2>,
}

#[derive(Serialize)]
struct NavSummary<'a> {
    config_digest: &'a str,
    outcome: Outcome,
    nav_time: f64,
    path_length: f64,
    replans: usize,
    start: Vec2,
    goal: Vec2,
    paths: &'a [mesa_core::planner::PlanPath],
}

pub fn nav(ctx: &Context, args: NavArgs) -> CliResult {
    let grid = load_map(ctx, args.map.as_deref())?;
    let policy = value_policy(ctx, trained_params(ctx, args.model.as_deref())?);
    let mut world = generate_scenario(&ctx.cfg.scenario.with_seed(ctx.cfg.seed))?;
    if let Some(s) = args.start {
        world.robot.position = s;
    }
    if let Some(g) = args.goal {
        world.robot.goal = g;
    }
    let (start, goal) = (world.robot.position, world.robot.goal);
    let log = run_mesa_navigation(&policy, world, &grid, &ctx.cfg.planner, &ctx.environment())?;
    ctx.write_jsonl(
        "nav_log.jsonl",
        log.records.iter().map(|r| {
            let mut r = r.clone();
            r.config_digest = Some(ctx.digest.clone());
            r
        }),
    )?;
    let summary = NavSummary {
        config_digest: &ctx.digest,
        outcome: log.outcome,
        nav_time: log.nav_time,
        path_length: log.path_length,
        replans: log.paths.len() - 1,
        start,
        goal,
        paths: &log.paths,
    };
    ctx.write_json("nav_summary.json", &summary)?;
    println!(
        "{}",
        to_json(&serde_json::json!({
            "outcome": log.outcome,
            "nav_time": log.nav_time,
            "path_length": log.path_length,
            "replans": summary.replans,
        }))
    );
    Ok(())
}

#[derive(Args)]
pub struct PlanArgs {
    #[arg(long)]
    map: Option<PathBuf>,
    #[arg(long, value_parser = parse_point)]
    start: Option<Vec2>,
    #[arg(long, value_parser = parse_point)]
    goal: Option<Vec2>,
}

#[derive(Serialize)]
struct PlanOutput<'a> {
    config_digest: &'a str,
    start: Vec2,
    goal: Vec2,
    cost: f64,
    length: f64,
    waypoints: &'a [Vec2],
    cells: Vec<[usize; 2]>,
}

pub fn plan(ctx: &Context, args: PlanArgs) -> CliResult {
    let grid = load_map(ctx, args.map.as_deref())?;
    let arena = ctx.cfg.scenario.arena_radius;
    let start = args.start.unwrap_or(Vec2::new(0.0, -arena));
    let goal = args.goal.unwrap_or(Vec2::new(0.0, arena));
    let path = dijkstra_path(&grid, start, goal, ctx.cfg.planner.strict_corners)?;
    let out = PlanOutput {
        config_digest: &ctx.digest,
        start,
        goal,
        cost: path.cost,
        length: path.length(),
        waypoints: &path.waypoints,
        cells: path.cells.iter().map(|&(c, r)| [c, r]).collect(),
    };
    ctx.write_json("path.json", &out)?;
    println!(
        "{}",
        to_json(&serde_json::json!({ "cost": path.cost, "waypoints": path.waypoints.len() }))
    );
    Ok(())
}

// ---------------------------------------------------------------- stats

#[derive(Args)]
pub struct StatsArgs {
    /// Metrics report of method A.
    report_a: PathBuf,
    /// Metrics report of method B.
    report_b: PathBuf,
}

#[derive(Serialize)]
struct StatsRow {
    metric: &'static str,
    #[serde(flatten)]
    result: UTestResult,
}

#[derive(Serialize)]
struct StatsOutput {
    config_digest: String,
    report_digests: [String; 2],
    policies: [String; 2],
    rows: Vec<StatsRow>,
}

fn load_report(path: &Path) -> CliResult<MetricsReport> {
    serde_json::from_str(&read_text(path)?)
        .map_err(|e| Error::Parse(format!("{}: {e}", path.display())).into())
}

fn indicator(o: Outcome) -> impl Fn(&EpisodeSummary) -> f64 {
    move |e| f64::from(u8::from(e.outcome == o))
}

/// Per-episode samples behind each reported metric.
pub fn metric_samples(report: &MetricsReport) -> Vec<(&'static str, Vec<f64>)> {
    let col =
        |f: &dyn Fn(&EpisodeSummary) -> f64| report.per_episode.iter().map(f).collect::<Vec<f64>>();
    vec![
        ("SR", col(&indicator(Outcome::Success))),
        ("CR", col(&indicator(Outcome::Collision))),
        ("TO", col(&indicator(Outcome::Timeout))),
        ("NT", col(&|e| e.nav_time)),
        ("PL", col(&|e| e.path_length)),
        ("AR", col(&|e| e.ret)),
    ]
}

pub fn stats(ctx: &Context, args: StatsArgs) -> CliResult {
    let a = load_report(&args.report_a)?;
    let b = load_report(&args.report_b)?;
    if a.metrics.n_episodes != b.metrics.n_episodes || a.per_episode.len() != b.per_episode.len() {
        return usage(format!(
            "reports have different episode counts ({} vs {})",
            a.per_episode.len(),
            b.per_episode.len()
        ));
    }
    if a.per_episode.is_empty() {
        return usage("reports contain no episodes");
    }
    let rows = metric_samples(&a)
        .into_iter()
        .zip(metric_samples(&b))
        .map(|((metric, xs), (_, ys))| {
            Ok(StatsRow {
                metric,
                result: mann_whitney_u(&xs, &ys)?,
            })
        })
        .collect::<Result<Vec<_>, Error>>()?;
    for r in &rows {
        println!(
            "{:<3} U={:<10} p={:<12.6e} CLES={:.4} RBC={:.4}",
            r.metric, r.result.u, r.result.p_value, r.result.cles, r.result.rbc
        );
    }
    ctx.write_json(
        "stats.json",
        &StatsOutput {
            config_digest: ctx.digest.clone(),
            report_digests: [a.config_digest, b.config_digest],
            policies: [a.policy, b.policy],
            rows,
        },
    )?;
    Ok(())
}

// ---------------------------------------------------------------- plot

#[derive(Args)]
pub struct PlotArgs {
    /// Trajectory logs (`trajectories.jsonl` or `nav_log.jsonl`), one per method.
    #[arg(required = true)]
    logs: Vec<PathBuf>,
    /// Legend labels, one per log (default: the file's parent directory name).
    #[arg(long, value_delimiter = ',')]
    labels: Vec<String>,
}

pub fn plot(ctx: &Context, args: PlotArgs) -> CliResult {
    if !args.labels.is_empty() && args.labels.len() != args.logs.len() {
        return usage(format!(
            "{} labels for {} logs",
            args.labels.len(),
            args.logs.len()
        ));
    }
    let mut series = Vec::with_capacity(args.logs.len());
    for (i, path) in args.logs.iter().enumerate() {
        let label = args
            .labels
            .get(i)
            .cloned()
            .unwrap_or_else(|| default_label(path, i));
        series.push(plot::load_series(label, path)?);
    }
    let rows = plot::deviation_rows(&series)?;
    ctx.write(
        "trajectories.svg",
        plot::trajectories_svg(&series).as_bytes(),
    )?;
    ctx.write("deviation.csv", plot::deviation_csv(&rows).as_bytes())?;
    ctx.write(
        "deviation.svg",
        plot::deviation_svg(&series, &rows)?.as_bytes(),
    )?;
    println!(
        "{}",
        to_json(&serde_json::json!({ "series": series.len(), "samples": rows.len() }))
    );
    Ok(())
}

fn default_label(path: &Path, i: usize) -> String {
    path.parent()
        .and_then(|p| p.file_name())
        .map(|s| s.to_string_lossy().into_owned())
        .filter(|s| !s.is_empty())
        .unwrap_or_else(|| format!("log{i}"))
}
