use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde_json::{json, Value};

use vidpanel::benchmark::{load_dataset, DatasetFormat, DurationBuckets, PromptTemplate, TemplateId};
use vidpanel::config::RunConfig;
use vidpanel::harness::mock::MockServer;
use vidpanel::harness::{
    compare_runs, evaluate, EndpointConfig, EvalOptions, EvalResult, HttpBackend, ItemInputs, ManifestIndex,
    PredictionStore,
};
use vidpanel::needlesim::{needle_handler, run_simulation, SimConfig, DEFAULT_NEEDLE_COLOR};
use vidpanel::panelizer::{panelize_to_dir, MANIFEST_NAME};
use vidpanel::policy::{plan_with_mode, Gamma, Grid, PlanMode, VideoMeta};
use vidpanel::{Error, FrameSource, ProbeOptions, Result};

#[derive(Parser)]
#[command(name = "vidpanel", version, about = "Panel-based frame sampling and VLM evaluation for long videos")]
struct Cli {
    /// JSON run configuration (overridden by VIDPANEL_* env vars, then flags).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Worker threads for panel composition.
    #[arg(long, global = true)]
    parallelism: Option<usize>,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Args, Default)]
struct PolicyArgs {
    /// Images the model accepts per query.
    #[arg(long, visible_alias = "context")]
    context_window: Option<u32>,
    /// Panel grid as ROWSxCOLS.
    #[arg(long)]
    grid: Option<Grid>,
    /// Paneling threshold: `<x>fps` (multiple of the frame rate) or `<x>f` (frames).
    #[arg(long)]
    gamma: Option<Gamma>,
}

impl PolicyArgs {
    fn overlay(&self) -> Value {
        json!({"policy": {
            "context_window": self.context_window,
            "alpha": self.grid.map(|g| g.cols),
            "beta": self.grid.map(|g| g.rows),
            "gamma": self.gamma.map(|g| g.to_string()),
        }})
    }
}

#[derive(Args, Default)]
struct SourceArgs {
    /// Frame rate override (image directories default to the sidecar, else 1.0).
    #[arg(long)]
    fps: Option<f64>,
    /// Decoder command template with {uri}, {width}, {height}; must write raw RGB24 to stdout.
    #[arg(long)]
    decoder_cmd: Option<String>,
    /// Probe command template with {uri}; must print ffprobe-style or flat JSON.
    #[arg(long)]
    probe_cmd: Option<String>,
}

impl SourceArgs {
    fn options(&self) -> ProbeOptions {
        ProbeOptions {
            fps_override: self.fps,
            probe_cmd: self.probe_cmd.clone(),
            decoder_cmd: self.decoder_cmd.clone(),
        }
    }
}

#[derive(Args)]
struct ModeArgs {
    /// Never panel (T = C full-size frames).
    #[arg(long, conflicts_with = "lowres_input")]
    baseline: bool,
    /// Downsample C frames to tile size instead of paneling.
    #[arg(long)]
    lowres_input: bool,
}

impl ModeArgs {
    fn mode(&self) -> PlanMode {
        if self.baseline {
            PlanMode::Baseline
        } else if self.lowres_input {
            PlanMode::LowresInput
        } else {
            PlanMode::Panels
        }
    }
}

#[derive(Subcommand)]
enum Cmd {
    /// Print video metadata as JSON.
    Probe {
        uri: String,
        #[command(flatten)]
        source: SourceArgs,
    },
    /// Show the sampling plan for a video or for given metadata.
    Plan {
        uri: Option<String>,
        /// Frame count, when no uri is given.
        #[arg(long, required_unless_present = "uri")]
        frames: Option<u64>,
        #[arg(long, default_value_t = 640)]
        width: u32,
        #[arg(long, default_value_t = 480)]
        height: u32,
        #[command(flatten)]
        policy: PolicyArgs,
        #[command(flatten)]
        mode: ModeArgs,
        #[command(flatten)]
        source: SourceArgs,
        /// Print the full plan as JSON.
        #[arg(long)]
        json: bool,
    },
    /// Sample a video, write panel PNGs and a manifest.
    Panelize {
        uri: String,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        policy: PolicyArgs,
        #[command(flatten)]
        mode: ModeArgs,
        #[command(flatten)]
        source: SourceArgs,
    },
    /// Query an endpoint for every dataset item and score the answers.
    Eval(EvalArgs),
    /// Compare two evaluation runs (deltas are b - a).
    Report {
        #[arg(long)]
        a: PathBuf,
        #[arg(long)]
        b: PathBuf,
        /// Also write the report as JSON.
        #[arg(long)]
        json: Option<PathBuf>,
    },
    /// Needle-in-a-haystack simulation against the color-presence mock model.
    Simulate {
        #[arg(long, default_value_t = 640)]
        duration_frames: u64,
        #[arg(long, default_value_t = 2.0)]
        fps: f64,
        #[arg(long, visible_alias = "context-window", default_value_t = 8)]
        context: u32,
        #[arg(long, default_value = "2x2")]
        grid: Grid,
        #[arg(long, default_value = "1fps")]
        gamma: Gamma,
        #[arg(long, default_value_t = 1)]
        needle_length: u64,
        #[arg(long, default_value_t = 1000)]
        trials: usize,
        #[arg(long, default_value_t = 7)]
        seed: u64,
        /// Use an already running mock endpoint instead of an in-process one.
        #[arg(long)]
        endpoint: Option<String>,
    },
    /// Run the color-presence mock model as a local chat-completions server.
    ServeMock {
        #[arg(long, value_parser = parse_rgb, default_value = "255,0,255")]
        needle_color: [u8; 3],
        #[arg(long, default_value_t = 8089)]
        port: u16,
        #[arg(long, default_value_t = 4)]
        threads: usize,
    },
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    dataset: Option<PathBuf>,
    /// generic | vmme | timescope
    #[arg(long)]
    format: Option<DatasetFormat>,
    #[arg(long)]
    panels_dir: Option<PathBuf>,
    /// Base url of the chat-completions API (e.g. http://host:8000/v1).
    #[arg(long)]
    endpoint: Option<String>,
    #[arg(long)]
    model: Option<String>,
    /// default | p1 | p2 | p3
    #[arg(long)]
    template: Option<TemplateId>,
    /// Custom prompt text ({r}/{c} are replaced by the grid); overrides --template.
    #[arg(long)]
    template_text: Option<String>,
    /// vmme | timescope | all | name:max,...,name
    #[arg(long)]
    buckets: Option<String>,
    #[arg(long)]
    run_dir: Option<PathBuf>,
    #[arg(long)]
    run_id: Option<String>,
    #[arg(long)]
    max_images: Option<usize>,
    #[arg(long)]
    retries: Option<u32>,
    #[arg(long)]
    timeout: Option<f64>,
    #[arg(long)]
    concurrency: Option<usize>,
    /// Environment variable holding a bearer token.
    #[arg(long)]
    auth_env: Option<String>,
    /// Print the plans and request count without contacting the endpoint.
    #[arg(long)]
    dry_run: bool,
    #[command(flatten)]
    policy: PolicyArgs,
}

fn parse_rgb(s: &str) -> std::result::Result<[u8; 3], String> {
    let parts: Vec<&str> = s.split(',').collect();
    if parts.len() != 3 {
        return Err(format!("`{s}` is not R,G,B"));
    }
    let mut out = [0u8; 3];
    for (o, p) in out.iter_mut().zip(parts) {
        *o = p.trim().parse().map_err(|_| format!("`{p}` is not 0-255"))?;
    }
    Ok(out)
}

struct Ctx<'a> {
    config: Option<&'a Path>,
    parallelism: Option<usize>,
}

impl Ctx<'_> {
    fn resolve(&self, mut overlay: Value) -> Result<RunConfig> {
        vidpanel::config::merge(&mut overlay, json!({ "parallelism": self.parallelism }));
        let cfg = RunConfig::resolve(self.config, std::env::vars(), overlay)?;
        // only fails if a pool already exists, which is harmless
        let _ = rayon::ThreadPoolBuilder::new().num_threads(cfg.parallelism).build_global();
        Ok(cfg)
    }
}

fn print_json(v: &impl serde::Serialize) -> Result<()> {
    println!("{}", serde_json::to_string_pretty(v)?);
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    let ctx = Ctx { config: cli.config.as_deref(), parallelism: cli.parallelism };
    match cli.cmd {
        Cmd::Probe { uri, source } => {
            let src = FrameSource::open(&uri, &source.options())?;
            print_json(&src.meta)
        }
        Cmd::Plan { uri, frames, width, height, policy, mode, source, json } => {
            let cfg = ctx.resolve(policy.overlay())?;
            let meta = match (&uri, frames) {
                (Some(u), _) => FrameSource::open(u, &source.options())?.meta,
                (None, Some(n)) => VideoMeta::new(n, source.fps.unwrap_or(1.0), width, height),
                (None, None) => unreachable!("clap requires --frames without a uri"),
            };
            let plan = plan_with_mode(&cfg.policy, &meta, mode.mode())?;
            if json {
                return print_json(&json!({"meta": meta, "policy": cfg.policy, "plan": plan}));
            }
            println!("panel_active={}", plan.panel_active);
            println!("T={}", plan.frames_to_sample);
            println!("panels={}", plan.panel_count);
            println!("grid={}", plan.grid());
            println!("tile={}x{}", plan.tile_width, plan.tile_height);
            println!("pad_frames={}", plan.pad_frames);
            Ok(())
        }
        Cmd::Panelize { uri, out, policy, mode, source } => {
            let mut overlay = policy.overlay();
            vidpanel::config::merge(&mut overlay, json!({"paths": {"out_dir": out}}));
            let cfg = ctx.resolve(overlay)?;
            let mut src = FrameSource::open(&uri, &source.options())?;
            let plan = plan_with_mode(&cfg.policy, &src.meta, mode.mode())?;
            let manifest = panelize_to_dir(&mut src, &uri, &plan, cfg.to_value(), &out)?;
            println!(
                "wrote {} panels ({} frames, grid {}) to {}",
                manifest.panels.len(),
                plan.frames_to_sample,
                plan.grid(),
                out.join(MANIFEST_NAME).display()
            );
            Ok(())
        }
        Cmd::Eval(args) => eval(&ctx, args),
        Cmd::Report { a, b, json } => {
            let ra = load_result(&a)?;
            let rb = load_result(&b)?;
            let report = compare_runs(&ra, &rb)?;
            print!("{}", report.render_table());
            if let Some(path) = json {
                std::fs::write(path, serde_json::to_vec_pretty(&report)?)?;
            }
            Ok(())
        }
        Cmd::Simulate {
            duration_frames,
            fps,
            context,
            grid,
            gamma,
            needle_length,
            trials,
            seed,
            endpoint,
        } => {
            let parallelism = ctx.parallelism.unwrap_or(8).max(1);
            let policy = vidpanel::SamplingPolicy::new(context, grid, gamma)?;
            let sim = SimConfig {
                haystack_frames: duration_frames,
                fps,
                needle_length,
                policy,
                trials,
                seed,
                concurrency: parallelism,
                ..SimConfig::default()
            };
            let server = match endpoint {
                Some(_) => None,
                None => Some(MockServer::start(0, parallelism, needle_handler(sim.needle_color))?),
            };
            let base_url = endpoint.unwrap_or_else(|| server.as_ref().expect("server").base_url());
            let backend = HttpBackend::new(EndpointConfig {
                base_url,
                model_name: "needle-mock".into(),
                max_retries: 2,
                backoff_initial_ms: 50,
                concurrency_limit: parallelism.max(1),
                ..EndpointConfig::default()
            })?;
            let report = run_simulation(&sim, &backend)?;
            eprintln!(
                "baseline {:.4} (expected {:.4}), panels {:.4} (expected {:.4}) over {} trials",
                report.detection_rate_baseline,
                report.baseline.analytic_expectation,
                report.detection_rate_panels,
                report.panels.analytic_expectation,
                report.trials
            );
            print_json(&report)
        }
        Cmd::ServeMock { needle_color, port, threads } => {
            let server = MockServer::start(port, threads, needle_handler(needle_color))?;
            eprintln!(
                "mock model listening on {} (needle color {:?}, default {:?})",
                server.base_url(),
                needle_color,
                DEFAULT_NEEDLE_COLOR
            );
            server.wait();
            Ok(())
        }
    }
}

fn load_result(path: &Path) -> Result<EvalResult> {
    if path.is_dir() {
        EvalResult::load(&path.join("result.json"))
    } else {
        EvalResult::load(path)
    }
}

fn eval(ctx: &Ctx, args: EvalArgs) -> Result<()> {
    let mut overlay = args.policy.overlay();
    vidpanel::config::merge(
        &mut overlay,
        json!({
            "template": args.template.map(|t| serde_json::to_value(t).expect("template")),
            "buckets": args.buckets,
            "endpoint": {
                "base_url": args.endpoint,
                "model_name": args.model,
                "max_images_per_request": args.max_images,
                "max_retries": args.retries,
                "timeout_seconds": args.timeout,
                "concurrency_limit": args.concurrency,
                "auth_env": args.auth_env,
            },
            "paths": {
                "dataset": args.dataset,
                "dataset_format": args.format,
                "panels_dir": args.panels_dir,
                "run_dir": args.run_dir,
            },
        }),
    );
    if let Some(text) = &args.template_text {
        vidpanel::config::merge(&mut overlay, json!({"template": {"custom": text}}));
    }
    let cfg = ctx.resolve(overlay)?;
    let dataset = cfg
        .paths
        .dataset
        .clone()
        .ok_or_else(|| Error::Config("--dataset is required".into()))?;
    let panels_dir = cfg
        .paths
        .panels_dir
        .clone()
        .ok_or_else(|| Error::Config("--panels-dir is required".into()))?;
    let items = load_dataset(&dataset, cfg.paths.dataset_format)?;
    let buckets: DurationBuckets = cfg.buckets.parse()?;
    let index = ManifestIndex::load(&panels_dir)?;
    let run_id = args.run_id.clone().unwrap_or_else(|| format!("{}-{}", cfg.template, cfg.endpoint.model_name));
    let run_dir = cfg
        .paths
        .run_dir
        .clone()
        .unwrap_or_else(|| PathBuf::from("runs").join(&run_id));

    if args.dry_run {
        let done = if run_dir.join("predictions.jsonl").exists() {
            PredictionStore::open(&run_dir.join("predictions.jsonl"))?
                .completed()
                .iter()
                .filter(|(_, p)| p.error.is_none())
                .map(|(k, _)| k.clone())
                .collect()
        } else {
            std::collections::HashSet::new()
        };
        let mut requests = 0;
        for item in &items {
            let grid = index.grid_for(item)?;
            let (_, m) = index.lookup(&item.video_uri).expect("checked above");
            let pending = !done.contains(&item.item_id);
            requests += usize::from(pending);
            println!(
                "{}\t{}\tpanel_active={}\tT={}\tgrid={}\timages={}\t{}",
                item.item_id,
                item.video_uri,
                m.plan.panel_active,
                m.plan.frames_to_sample,
                grid,
                m.panels.len(),
                if pending { "pending" } else { "done" }
            );
        }
        println!("requests={requests}");
        return Ok(());
    }

    let backend = HttpBackend::new(cfg.endpoint.clone())?;
    let store = PredictionStore::open(&run_dir.join("predictions.jsonl"))?;
    let opts = EvalOptions {
        run_id,
        template: PromptTemplate::new(cfg.template.clone()),
        buckets,
        concurrency: cfg.endpoint.concurrency_limit,
        config: cfg.to_value(),
    };
    let result = evaluate(&items, &index, &backend, Some(&store), &opts)?;
    result.save(&run_dir.join("result.json"))?;
    println!(
        "accuracy={:.4} n={} unparsable={} errors={}",
        result.accuracy_overall, result.n, result.unparsable_count, result.error_count
    );
    for (name, s) in &result.accuracy_by_bucket {
        println!("  {name}: {:.4} ({}/{})", s.accuracy, s.correct, s.n);
    }
    println!("result written to {}", run_dir.join("result.json").display());
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(e.exit_code() as u8);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}: {e}", e.class());
            ExitCode::from(1)
        }
    }
}
