//! Argument handling for the `snapmem` binary.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{anyhow, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::{Map, Value};

use snapmem_core::agent::policy::Policy;
use snapmem_core::agent::trace::EpisodeTrace;
use snapmem_core::agent::{replay_trace, run_episode};
use snapmem_core::metrics::{batch_run, score_episode, Job, PolicySpec, Report};
use snapmem_core::sim::{generate_scene, generate_tasks, Scene, SceneParams, Task, TaskKind};
use snapmem_core::EpisodeConfig;

pub const REMOTE_URL_ENV: &str = "SNAPMEM_REMOTE_URL";

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Runtime(anyhow::Error),
}

impl From<anyhow::Error> for CliError {
    fn from(e: anyhow::Error) -> Self {
        CliError::Runtime(e)
    }
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Runtime(_) => 2,
        }
    }
}

type CliResult<T> = Result<T, CliError>;

fn usage(msg: impl Into<String>) -> CliError {
    CliError::Usage(msg.into())
}

#[derive(Debug, Parser)]
#[command(name = "snapmem", version, about = "Snapshot scene memory and frontier exploration simulator")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum KindArg {
    Question,
    ObjectGoal,
}

impl From<KindArg> for TaskKind {
    fn from(k: KindArg) -> Self {
        match k {
            KindArg::Question => TaskKind::Question,
            KindArg::ObjectGoal => TaskKind::ObjectGoal,
        }
    }
}

#[derive(Debug, Args)]
pub struct SceneArgs {
    #[arg(long, default_value_t = 3)]
    pub rooms: u32,
    /// Objects per room.
    #[arg(long, default_value_t = 5)]
    pub objects: u32,
}

impl SceneArgs {
    fn params(&self) -> SceneParams {
        SceneParams { rooms: self.rooms, objects_per_room: self.objects, ..SceneParams::default() }
    }
}

/// Episode settings shared by `run` and `batch`.
#[derive(Debug, Args)]
pub struct EpisodeArgs {
    /// JSON file with any episode config fields plus `policy` and `parallelism`.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// oracle, random[:seed], remote[:url] or human.
    #[arg(long)]
    pub policy: Option<String>,
    #[arg(long)]
    pub n_views: Option<u32>,
    #[arg(long)]
    pub max_dist: Option<f64>,
    #[arg(long)]
    pub prefilter_k: Option<usize>,
    #[arg(long)]
    pub step_budget: Option<u32>,
    #[arg(long)]
    pub episode_seed: Option<u64>,
    /// Any other config field, as key=json-value. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a scene and write it as JSON.
    GenScene {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[command(flatten)]
        scene: SceneArgs,
        #[arg(short, long)]
        out: Option<PathBuf>,
    },
    /// Generate tasks for a scene.
    GenTasks {
        #[arg(long)]
        scene: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 1)]
        count: usize,
        #[arg(long, value_enum)]
        kind: Option<KindArg>,
        #[arg(short, long)]
        out: Option<PathBuf>,
    },
    /// Run one episode and print its score as JSON.
    Run {
        #[arg(long)]
        scene: PathBuf,
        /// Task JSON (a single task or a list; the first is used). Generated when omitted.
        #[arg(long)]
        task: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "object-goal")]
        kind: KindArg,
        /// Episode seed.
        #[arg(long)]
        seed: Option<u64>,
        #[command(flatten)]
        episode: EpisodeArgs,
        /// Write the episode trace here.
        #[arg(long)]
        trace: Option<PathBuf>,
    },
    /// Run episodes over generated scenes and report success, SPL and compactness.
    Batch {
        /// First scene seed.
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Number of scenes (consecutive seeds).
        #[arg(long, default_value_t = 10)]
        scenes: u64,
        #[arg(long, default_value_t = 1)]
        tasks_per_scene: usize,
        #[arg(long, value_enum)]
        kind: Option<KindArg>,
        #[command(flatten)]
        scene: SceneArgs,
        #[command(flatten)]
        episode: EpisodeArgs,
        /// Output directory for report.csv, summary.json and traces.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        parallelism: Option<usize>,
        /// Sweep one knob: n_views (N), max_dist or prefilter_k (K), e.g. K=5,10,20.
        #[arg(long, value_name = "PARAM=V1,V2,...")]
        ablate: Option<String>,
    },
    /// Re-run recorded traces.
    Replay {
        /// Trace file, or a directory of *.jsonl traces.
        #[arg(long)]
        trace: PathBuf,
        /// Fail unless every replay reproduces the recording byte for byte.
        #[arg(long)]
        verify: bool,
    },
    /// Start the steering HTTP service.
    Serve {
        #[arg(long, default_value = "127.0.0.1:8080")]
        addr: String,
    },
    /// Check that configured defaults equal the reference hyperparameters.
    SelfTest,
}

/// Parses `argv` and runs the command, writing results to `out`.
pub fn dispatch<I, S>(argv: I, out: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match execute(cli.command, out) {
        Ok(()) => 0,
        Err(e) => {
            match &e {
                CliError::Usage(m) => eprintln!("error: {m}"),
                CliError::Runtime(err) => eprintln!("error: {err:#}"),
            }
            e.exit_code()
        }
    }
}

fn execute(cmd: Command, out: &mut dyn Write) -> CliResult<()> {
    match cmd {
        Command::GenScene { seed, scene, out: path } => {
            let s = generate_scene(seed, scene.params()).map_err(|e| usage(e.to_string()))?;
            emit(out, path.as_deref(), &s.to_json())
        }
        Command::GenTasks { scene, seed, count, kind, out: path } => {
            let s = load_scene(&scene)?;
            let tasks = generate_tasks(&s, seed, count, kind.map(Into::into));
            emit(out, path.as_deref(), &pretty(&tasks))
        }
        Command::Run { scene, task, kind, seed, episode, trace } => {
            let s = load_scene(&scene)?;
            let task = match task {
                Some(p) => load_task(&p)?,
                None => generate_tasks(&s, s.seed, 1, Some(kind.into()))
                    .pop()
                    .ok_or_else(|| usage("scene has no objects to build a task from"))?,
            };
            let (mut cfg, policy, _) = resolve(&episode)?;
            if let Some(seed) = seed {
                cfg.seed = seed;
            }
            cfg.validate().map_err(|e| usage(e.to_string()))?;
            let mut p: Box<dyn Policy> = policy.build(cfg.seed ^ s.seed);
            let t = run_episode(Arc::new(s), task, p.as_mut(), cfg).map_err(|e| CliError::Runtime(e.into()))?;
            if let Some(path) = trace {
                write_file(&path, &t.to_jsonl())?;
            }
            let score = score_episode(&t).map_err(|e| anyhow!(e))?;
            emit(out, None, &pretty(&score))
        }
        Command::Batch { seed, scenes, tasks_per_scene, kind, scene, episode, out: dir, parallelism, ablate } => {
            let (cfg, policy, file_parallelism) = resolve(&episode)?;
            let parallelism = parallelism
                .or(file_parallelism)
                .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()));
            let jobs = batch_jobs(seed, scenes, tasks_per_scene, kind.map(Into::into), scene.params())?;
            let Some(spec) = ablate else {
                cfg.validate().map_err(|e| usage(e.to_string()))?;
                let report = batch_run(&jobs, &policy, &cfg, parallelism);
                if let Some(dir) = &dir {
                    write_report(dir, &report)?;
                }
                return emit(out, None, &report.summary_json());
            };
            let (key, values) = parse_ablation(&spec)?;
            let mut summaries = Vec::new();
            for v in values {
                let cfg = with_override(&cfg, key, v.clone())?;
                let report = batch_run(&jobs, &policy, &cfg, parallelism);
                if let Some(dir) = &dir {
                    write_report(&dir.join(format!("{key}={v}")), &report)?;
                }
                summaries.push(serde_json::json!({ "param": key, "value": v, "summary": report.summary }));
            }
            emit(out, None, &pretty(&summaries))
        }
        Command::Replay { trace, verify } => replay(&trace, verify, out),
        Command::Serve { addr } => {
            let rt = tokio::runtime::Runtime::new().context("starting runtime")?;
            rt.block_on(async {
                let listener = tokio::net::TcpListener::bind(&addr).await.with_context(|| format!("binding {addr}"))?;
                eprintln!("listening on http://{}", listener.local_addr()?);
                snapmem_steer::serve(listener, Arc::new(snapmem_steer::SessionStore::default())).await?;
                Ok::<(), anyhow::Error>(())
            })?;
            Ok(())
        }
        Command::SelfTest => {
            let checks = self_test();
            let mut failed = 0;
            for (name, got, want) in &checks {
                let ok = got == want;
                failed += usize::from(!ok);
                writeln!(out, "{} {name} = {got} (expected {want})", if ok { "ok  " } else { "FAIL" }).map_err(io)?;
            }
            if failed > 0 {
                return Err(CliError::Runtime(anyhow!("{failed} default(s) differ")));
            }
            Ok(())
        }
    }
}

/// Configured defaults against the reference values, as (name, actual, expected).
pub fn self_test() -> Vec<(&'static str, String, String)> {
    let c = EpisodeConfig::default();
    let f = |v: f64| format!("{v}");
    vec![
        ("n_views", c.n_views.to_string(), "3".into()),
        ("view_gap_deg", f(c.view_gap_deg), "60".into()),
        ("max_dist", f(c.max_dist), "3.5".into()),
        ("prefilter_k", c.prefilter_k.to_string(), "10".into()),
        ("obs_dist", f(c.obs_dist), "0.75".into()),
        ("move_limit", f(c.move_limit), "1".into()),
        ("arrive_radius", f(c.arrive_radius), "0.5".into()),
        ("success_radius", f(c.success_radius), "1".into()),
        ("step_budget", c.step_budget.to_string(), "50".into()),
        ("cell_size", f(c.cell_size), "0.1".into()),
        ("explored_radius", f(c.explored_radius), "1.7".into()),
        ("iou_update_threshold", f(c.iou_update_threshold), "0.95".into()),
        ("span_split_threshold_deg", f(c.span_split_threshold_deg), "150".into()),
        ("min_frontier_cells", c.min_frontier_cells.to_string(), "20".into()),
    ]
}

fn io(e: std::io::Error) -> CliError {
    CliError::Runtime(e.into())
}

fn pretty<T: serde::Serialize>(v: &T) -> String {
    serde_json::to_string_pretty(v).expect("serialization is infallible")
}

fn emit(out: &mut dyn Write, path: Option<&Path>, text: &str) -> CliResult<()> {
    match path {
        Some(p) => write_file(p, text),
        None => writeln!(out, "{text}").map_err(io),
    }
}

fn write_file(path: &Path, text: &str) -> CliResult<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).with_context(|| format!("creating {}", parent.display()))?;
    }
    let mut text = text.to_string();
    if !text.ends_with('\n') {
        text.push('\n');
    }
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

fn runtime(msg: String) -> CliError {
    CliError::Runtime(anyhow!(msg))
}

fn read(path: &Path) -> CliResult<String> {
    fs::read_to_string(path).map_err(|e| runtime(format!("cannot read {}: {e}", path.display())))
}

fn load_scene(path: &Path) -> CliResult<Scene> {
    Scene::from_json(&read(path)?).map_err(|e| runtime(format!("{}: {e}", path.display())))
}

fn load_task(path: &Path) -> CliResult<Task> {
    let text = read(path)?;
    let bad = |e: serde_json::Error| runtime(format!("{}: {e}", path.display()));
    let task = match serde_json::from_str::<Value>(&text).map_err(bad)? {
        Value::Array(mut items) if !items.is_empty() => serde_json::from_value(items.remove(0)).map_err(bad)?,
        v => serde_json::from_value::<Task>(v).map_err(bad)?,
    };
    task.validate().map_err(|e| runtime(format!("{}: {e}", path.display())))?;
    Ok(task)
}

/// Config precedence: flags, then the config file, then defaults.
fn resolve(args: &EpisodeArgs) -> CliResult<(EpisodeConfig, PolicySpec, Option<usize>)> {
    let mut cfg = match serde_json::to_value(EpisodeConfig::default()).expect("config serializes") {
        Value::Object(m) => m,
        _ => unreachable!("config is a struct"),
    };
    let mut policy = None;
    let mut parallelism = None;
    if let Some(path) = &args.config {
        let text = read(path)?;
        let file: Map<String, Value> =
            serde_json::from_str(&text).map_err(|e| runtime(format!("{}: {e}", path.display())))?;
        for (k, v) in file {
            match k.as_str() {
                "policy" => policy = Some(v.as_str().ok_or_else(|| usage("config policy must be a string"))?.to_string()),
                "parallelism" => {
                    parallelism = Some(v.as_u64().ok_or_else(|| usage("config parallelism must be an integer"))? as usize)
                }
                _ => set_key(&mut cfg, &k, v)?,
            }
        }
    }
    let flags: [(&str, Option<Value>); 5] = [
        ("n_views", args.n_views.map(Value::from)),
        ("max_dist", args.max_dist.map(Value::from)),
        ("prefilter_k", args.prefilter_k.map(Value::from)),
        ("step_budget", args.step_budget.map(Value::from)),
        ("seed", args.episode_seed.map(Value::from)),
    ];
    for (k, v) in flags {
        if let Some(v) = v {
            set_key(&mut cfg, k, v)?;
        }
    }
    for o in &args.overrides {
        let (k, v) = o.split_once('=').ok_or_else(|| usage(format!("--set expects KEY=VALUE, got {o:?}")))?;
        let v = serde_json::from_str(v).unwrap_or_else(|_| Value::String(v.into()));
        set_key(&mut cfg, k, v)?;
    }
    let cfg: EpisodeConfig =
        serde_json::from_value(Value::Object(cfg)).map_err(|e| usage(format!("invalid config: {e}")))?;
    let policy = parse_policy(args.policy.as_deref().or(policy.as_deref()).unwrap_or("oracle"))?;
    Ok((cfg, policy, parallelism))
}

fn set_key(cfg: &mut Map<String, Value>, key: &str, v: Value) -> CliResult<()> {
    match cfg.get_mut(key) {
        Some(slot) => {
            *slot = v;
            Ok(())
        }
        None => Err(usage(format!("unknown config field {key:?}"))),
    }
}

fn with_override(cfg: &EpisodeConfig, key: &str, v: Value) -> CliResult<EpisodeConfig> {
    let Value::Object(mut m) = serde_json::to_value(cfg).expect("config serializes") else { unreachable!() };
    set_key(&mut m, key, v)?;
    let cfg: EpisodeConfig = serde_json::from_value(Value::Object(m)).map_err(|e| usage(format!("{key}: {e}")))?;
    cfg.validate().map_err(|e| usage(e.to_string()))?;
    Ok(cfg)
}

pub fn parse_policy(s: &str) -> CliResult<PolicySpec> {
    let env = std::env::var(REMOTE_URL_ENV).ok().filter(|u| !u.is_empty());
    if s == "human" {
        return Err(usage("the human policy is driven through `snapmem serve`"));
    }
    if s == "remote" || s.starts_with("remote:") {
        let url = env.or_else(|| s.strip_prefix("remote:").map(str::to_string));
        return url.map(PolicySpec::Remote).ok_or_else(|| usage(format!("remote policy needs a URL or {REMOTE_URL_ENV}")));
    }
    s.parse().map_err(usage)
}

/// Splits `K=5,10` into the config key and its values.
pub fn parse_ablation(spec: &str) -> CliResult<(&'static str, Vec<Value>)> {
    let (name, values) = spec.split_once('=').ok_or_else(|| usage("--ablate expects PARAM=V1,V2,..."))?;
    let key = match name {
        "N" | "n_views" => "n_views",
        "max_dist" => "max_dist",
        "K" | "prefilter_k" => "prefilter_k",
        other => return Err(usage(format!("cannot ablate {other:?}; choose N, max_dist or K"))),
    };
    let values: Result<Vec<Value>, _> =
        values.split(',').map(|v| serde_json::from_str::<Value>(v.trim()).map_err(|_| usage(format!("bad value {v:?}")))).collect();
    let values = values?;
    if values.is_empty() || values.iter().any(|v| !v.is_number()) {
        return Err(usage("ablation values must be numbers"));
    }
    Ok((key, values))
}

pub fn batch_jobs(
    first_seed: u64,
    scenes: u64,
    tasks_per_scene: usize,
    kind: Option<TaskKind>,
    params: SceneParams,
) -> CliResult<Vec<Job>> {
    let mut jobs = Vec::new();
    for seed in first_seed..first_seed + scenes {
        let scene = Arc::new(generate_scene(seed, params).map_err(|e| usage(e.to_string()))?);
        for task in generate_tasks(&scene, seed, tasks_per_scene, kind) {
            jobs.push(Job { scene: scene.clone(), task });
        }
    }
    Ok(jobs)
}

pub fn write_report(dir: &Path, report: &Report) -> CliResult<()> {
    write_file(&dir.join("report.csv"), &report.to_csv())?;
    write_file(&dir.join("summary.json"), &report.summary_json())?;
    for (row, trace) in report.rows.iter().zip(&report.traces) {
        if let Some(t) = trace {
            write_file(&dir.join("traces").join(format!("{}.jsonl", row.task_id)), &t.to_jsonl())?;
        }
    }
    Ok(())
}

fn trace_files(path: &Path) -> CliResult<Vec<PathBuf>> {
    if !path.is_dir() {
        return Ok(vec![path.to_path_buf()]);
    }
    let mut files: Vec<PathBuf> = fs::read_dir(path)
        .map_err(|e| runtime(format!("cannot read {}: {e}", path.display())))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "jsonl"))
        .collect();
    files.sort();
    if files.is_empty() {
        return Err(usage(format!("no .jsonl traces in {}", path.display())));
    }
    Ok(files)
}

fn replay(path: &Path, verify: bool, out: &mut dyn Write) -> CliResult<()> {
    let mut failures = 0;
    for file in trace_files(path)? {
        let text = read(&file)?;
        let recorded = EpisodeTrace::from_jsonl(&text).map_err(|e| runtime(format!("{}: {e}", file.display())))?;
        let result = replay_trace(&recorded).map_err(|e| e.to_string()).and_then(|t| {
            if verify && t.to_jsonl() != text {
                Err("replayed trace is not byte-identical to the file".into())
            } else {
                Ok(t)
            }
        });
        match result {
            Ok(t) => {
                let score = score_episode(&t).map_err(|e| anyhow!(e))?;
                writeln!(out, "ok {} {}", file.display(), serde_json::to_string(&score).expect("serializes")).map_err(io)?;
            }
            Err(e) => {
                failures += 1;
                writeln!(out, "FAIL {}: {e}", file.display()).map_err(io)?;
            }
        }
    }
    if verify && failures > 0 {
        return Err(CliError::Runtime(anyhow!("{failures} trace(s) failed verification")));
    }
    Ok(())
}
