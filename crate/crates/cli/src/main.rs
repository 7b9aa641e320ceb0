use std::collections::BTreeMap;
use std::fs;
use std::net::{IpAddr, SocketAddr};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use chrono::{DateTime, Utc};
use clap::{Args, Parser, Subcommand};
use serde::de::DeserializeOwned;
use serde::Serialize;

use vknow_core::analytics::{self, AccuracyMatrix, Deletion, ReportFormat};
use vknow_core::coldstart::{self, ColdStartConfig};
use vknow_core::corpus::{self, load_manifest, save_manifest, write_atomic, Manifest, TaskDimension};
use vknow_core::debias::{run_pipeline, DebiasConfig};
use vknow_core::evalkit::{self, EvalConfig, EvalRun, PromptMode};
use vknow_core::gateway::{CacheMode, EndpointConfig, FrameEncoder, Gateway, HttpTransport};
use vknow_core::media::{AssetCatalog, AssetResolver, MediaToolkit, ProbingResolver};
use vknow_core::par::Execution;
use vknow_core::review::server::{ReviewServerConfig, ReviewState};
use vknow_core::review::{self, DecisionLog};
use vknow_core::rewards::server::{RewardService, ScoreRequest};
use vknow_core::rewards::{CompletionInput, RewardScorer, RewardWeights, TrainerMetadata, VerifierConfig};
use vknow_core::service::serve_blocking;

#[derive(Parser)]
#[command(name = "vknow", version, about = "Video QA benchmark curation, reward scoring and evaluation")]
struct Cli {
    /// Run every batch kernel on one thread.
    #[arg(long, global = true)]
    sequential: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the debiasing stages and option shuffle over a manifest.
    Filter(FilterArgs),
    /// Human review service and decision application.
    #[command(subcommand)]
    Review(ReviewCmd),
    /// Score completions or serve the reward endpoint.
    #[command(subcommand)]
    Reward(RewardCmd),
    /// Build See-Think-Answer SFT data.
    Coldstart(ColdstartArgs),
    /// Evaluate a model on a manifest.
    Eval(EvalArgs),
    /// Render evaluation runs as a results table.
    Report(ReportArgs),
    /// Task correlation matrix from an accuracy table.
    Corr(CorrArgs),
    /// Per-task accuracy differences and flips between two runs.
    Compare(CompareArgs),
    /// Uniform-guess accuracy for a manifest.
    Baseline(BaselineArgs),
    /// Drop training items that overlap a held-out manifest.
    Dedup(DedupArgs),
}

#[derive(Args)]
struct GatewayOpts {
    /// Response cache directory.
    #[arg(long)]
    cache: Option<PathBuf>,
    /// off, record or replay. Defaults to record when --cache is given.
    #[arg(long)]
    mode: Option<CacheMode>,
    /// Where extracted frames are written before upload.
    #[arg(long)]
    frame_dir: Option<PathBuf>,
    /// Prefix for relative video paths.
    #[arg(long)]
    media_root: Option<PathBuf>,
}

impl GatewayOpts {
    fn toolkit(&self) -> MediaToolkit {
        MediaToolkit {
            media_root: self.media_root.clone(),
            ..MediaToolkit::default()
        }
    }

    fn mode(&self) -> CacheMode {
        self.mode.unwrap_or(if self.cache.is_some() { CacheMode::Record } else { CacheMode::Off })
    }

    fn gateway(&self) -> Result<Gateway> {
        let frame_dir = self
            .frame_dir
            .clone()
            .or_else(|| self.cache.as_ref().map(|c| c.join("frames")))
            .unwrap_or_else(|| std::env::temp_dir().join("vknow-frames"));
        let transport = HttpTransport::new()?.with_frames(FrameEncoder {
            toolkit: self.toolkit(),
            frame_dir,
        });
        let transport = Arc::new(transport);
        Ok(match (self.mode(), &self.cache) {
            (CacheMode::Off, _) => Gateway::uncached(transport),
            (mode, Some(dir)) => Gateway::with_cache(transport, dir, mode),
            (mode, None) => bail!("--mode {mode:?} needs --cache"),
        })
    }

    /// Stage-record timestamp: explicit, else pinned under replay, else now.
    fn now(&self, explicit: Option<DateTime<Utc>>) -> DateTime<Utc> {
        explicit.unwrap_or_else(|| match self.mode() {
            CacheMode::Replay => DateTime::UNIX_EPOCH,
            _ => Utc::now(),
        })
    }
}

#[derive(Args)]
struct FilterArgs {
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Debiasing configuration (TOML); defaults apply to omitted keys.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    report: Option<PathBuf>,
    /// Review queue output.
    #[arg(long)]
    queue: Option<PathBuf>,
    /// Timestamp for stage records (RFC 3339).
    #[arg(long)]
    now: Option<DateTime<Utc>>,
    #[command(flatten)]
    gw: GatewayOpts,
}

#[derive(Subcommand)]
enum ReviewCmd {
    Serve(ReviewServeArgs),
    Apply(ReviewApplyArgs),
}

#[derive(Args)]
struct ReviewServeArgs {
    #[arg(long)]
    queue: PathBuf,
    /// Append-only decision log; replayed on start.
    #[arg(long, default_value = "decisions.log")]
    log: PathBuf,
    #[arg(long, default_value_t = 8080)]
    port: u16,
    #[arg(long, default_value = "127.0.0.1")]
    host: IpAddr,
    /// Shared token required in the x-review-token header.
    #[arg(long, env = "VKNOW_REVIEW_TOKEN")]
    token: Option<String>,
    #[arg(long)]
    media_root: Option<PathBuf>,
    /// Static UI bundle served under /ui/.
    #[arg(long)]
    ui_dir: Option<PathBuf>,
}

#[derive(Args)]
struct ReviewApplyArgs {
    #[arg(long)]
    decisions: PathBuf,
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Undecided items are written here.
    #[arg(long)]
    pending: Option<PathBuf>,
}

#[derive(Subcommand)]
enum RewardCmd {
    Score(RewardScoreArgs),
    Serve(RewardServeArgs),
}

#[derive(Args)]
struct RewardOpts {
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long, default_value_t = 0.1)]
    lambda: f64,
    /// Verifier configuration (TOML).
    #[arg(long)]
    verifier: Option<PathBuf>,
    #[command(flatten)]
    gw: GatewayOpts,
}

impl RewardOpts {
    fn scorer(&self, exec: Execution) -> Result<RewardScorer> {
        let verifier = match &self.verifier {
            Some(p) => read_toml::<VerifierConfig>(p)?,
            None => VerifierConfig::default(),
        };
        verifier.validate()?;
        Ok(RewardScorer::new(RewardWeights::new(self.lambda)?, verifier).with_execution(exec))
    }
}

#[derive(Args)]
struct RewardScoreArgs {
    /// Completions, one JSON object per line.
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    opts: RewardOpts,
}

#[derive(Args)]
struct RewardServeArgs {
    #[arg(long, default_value_t = 8090)]
    port: u16,
    #[arg(long, default_value = "127.0.0.1")]
    host: IpAddr,
    #[command(flatten)]
    opts: RewardOpts,
}

#[derive(Args)]
struct AssetOpts {
    /// Probed video metadata (JSONL); otherwise ffprobe runs per video.
    #[arg(long)]
    assets: Option<PathBuf>,
}

impl AssetOpts {
    fn resolver(&self, toolkit: MediaToolkit) -> Result<Box<dyn AssetResolver>> {
        Ok(match &self.assets {
            Some(p) => Box::new(AssetCatalog::load(p)?),
            None => Box::new(ProbingResolver::new(toolkit)),
        })
    }
}

#[derive(Args)]
struct ColdstartArgs {
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Generator endpoint (TOML).
    #[arg(long)]
    generator: PathBuf,
    /// Verifier configuration (TOML).
    #[arg(long)]
    verifier: Option<PathBuf>,
    #[arg(long, default_value_t = 1)]
    k: u32,
    #[arg(long, default_value_t = 32)]
    frames: usize,
    #[command(flatten)]
    assets: AssetOpts,
    #[command(flatten)]
    gw: GatewayOpts,
}

#[derive(Args)]
#[command(args_conflicts_with_subcommands = true)]
struct EvalArgs {
    #[command(subcommand)]
    sweep: Option<EvalCmd>,
    #[command(flatten)]
    opts: Option<EvalOpts>,
    #[arg(long, default_value_t = 32)]
    frames: usize,
}

#[derive(Subcommand)]
enum EvalCmd {
    /// One run per frame count.
    Sweep(SweepArgs),
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    opts: EvalOpts,
    #[arg(long, value_delimiter = ',', default_values_t = evalkit::SWEEP_FRAMES)]
    frames: Vec<usize>,
    /// Markdown accuracy-vs-frames table.
    #[arg(long)]
    table: Option<PathBuf>,
}

#[derive(Args)]
struct EvalOpts {
    #[arg(long)]
    manifest: PathBuf,
    /// Model endpoint (TOML).
    #[arg(long)]
    model: PathBuf,
    #[arg(long, default_value = "vanilla")]
    prompt: PromptMode,
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    assets: AssetOpts,
    #[command(flatten)]
    gw: GatewayOpts,
}

impl EvalOpts {
    fn config(&self, exec: Execution) -> Result<EvalConfig> {
        let mut cfg = EvalConfig::new(read_toml::<EndpointConfig>(&self.model)?);
        cfg.prompt_mode = self.prompt;
        cfg.exec = exec;
        Ok(cfg)
    }
}

#[derive(Args)]
struct ReportArgs {
    #[arg(long, num_args = 1.., required = true)]
    runs: Vec<PathBuf>,
    #[arg(long, default_value = "markdown")]
    format: ReportFormat,
    /// Append a random-guess row computed from this manifest.
    #[arg(long)]
    random_baseline: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct CorrArgs {
    /// CSV with a model column and task-code columns.
    #[arg(long, num_args = 1.., required = true)]
    matrix: Vec<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Drop models with any missing cell instead of pairwise deletion.
    #[arg(long)]
    listwise: bool,
    #[arg(long, default_value = "csv")]
    format: ReportFormat,
}

#[derive(Args)]
struct CompareArgs {
    a: PathBuf,
    b: PathBuf,
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct BaselineArgs {
    #[arg(long)]
    manifest: PathBuf,
    /// Also run a Monte-Carlo guesser for this many passes.
    #[arg(long)]
    simulate: Option<u64>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct DedupArgs {
    #[arg(long)]
    train: PathBuf,
    #[arg(long)]
    holdout: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    now: Option<DateTime<Utc>>,
}

fn read_toml<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut bytes = serde_json::to_vec_pretty(value)?;
    bytes.push(b'\n');
    write_atomic(path, &bytes).with_context(|| format!("writing {}", path.display()))
}

fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| serde_json::from_str(l).with_context(|| format!("{}:{}", path.display(), i + 1)))
        .collect()
}

fn emit(out: Option<&Path>, text: &str) -> Result<()> {
    match out {
        Some(p) => write_atomic(p, text.as_bytes()).with_context(|| format!("writing {}", p.display())),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn run_name(path: &Path) -> String {
    path.file_stem().map_or_else(|| path.display().to_string(), |s| s.to_string_lossy().into_owned())
}

fn filter(a: FilterArgs, exec: Execution) -> Result<()> {
    let manifest = load_manifest(&a.input)?;
    let mut cfg = match &a.config {
        Some(p) => read_toml::<DebiasConfig>(p)?,
        None => DebiasConfig::default(),
    };
    cfg.exec = exec;
    let gw = a.gw.gateway()?;
    let at = a.gw.now(a.now);
    let out = match run_pipeline(&manifest, &cfg, &gw, a.seed, at) {
        Ok(o) => o,
        Err(e) => {
            if let Some(p) = &a.report {
                write_json(p, &e.report)?;
            }
            return Err(e.into());
        }
    };
    save_manifest(&out.manifest, &a.out)?;
    if let Some(p) = &a.report {
        write_json(p, &out.report)?;
    }
    if let Some(p) = &a.queue {
        review::save_queue(&out.queue, p)?;
    }
    let flow: Vec<String> = out.report.flow().iter().map(ToString::to_string).collect();
    log::info!("items per stage: {}; gateway {:?}", flow.join(" -> "), gw.stats());
    Ok(())
}

fn review_cmd(cmd: ReviewCmd) -> Result<()> {
    match cmd {
        ReviewCmd::Serve(a) => {
            let queue = review::load_queue(&a.queue)?;
            let config = ReviewServerConfig {
                token: a.token,
                media_root: a.media_root,
                ui_dir: a.ui_dir,
            };
            let state = Arc::new(ReviewState::open(queue, DecisionLog::new(a.log), config)?);
            log::info!("review progress {:?}", state.progress());
            serve_blocking(review::server::router(state), SocketAddr::new(a.host, a.port))?;
        }
        ReviewCmd::Apply(a) => {
            let manifest = load_manifest(&a.input)?;
            let decisions = DecisionLog::new(a.decisions).load()?;
            let outcome = review::apply_decisions(&manifest, &decisions)?;
            for c in &outcome.conflicts {
                log::warn!("{}: {} earlier decision(s) superseded", c.item_id, c.superseded.len());
            }
            save_manifest(&outcome.manifest, &a.out)?;
            if let Some(p) = &a.pending {
                save_manifest(&manifest.with_items(outcome.pending.clone()), p)?;
            }
            log::info!("{} items kept, {} pending", outcome.manifest.len(), outcome.pending.len());
        }
    }
    Ok(())
}

fn reward_cmd(cmd: RewardCmd, exec: Execution) -> Result<()> {
    match cmd {
        RewardCmd::Score(a) => {
            let manifest = load_manifest(&a.opts.manifest)?;
            let completions: Vec<CompletionInput> = read_jsonl(&a.input)?;
            let gw = a.opts.gw.gateway()?;
            let groups = a.opts.scorer(exec)?.score_batch(&completions, &manifest, &gw)?;
            let mut out = String::new();
            for g in &groups {
                out.push_str(&serde_json::to_string(g)?);
                out.push('\n');
            }
            emit(Some(&a.out), &out)?;
            log::info!("scored {} completions in {} groups", completions.len(), groups.len());
        }
        RewardCmd::Serve(a) => {
            let service = RewardService {
                manifest: load_manifest(&a.opts.manifest)?,
                scorer: a.opts.scorer(exec)?,
                gateway: Arc::new(a.opts.gw.gateway()?),
                trainer: TrainerMetadata::default(),
            };
            // Fail on a malformed manifest before binding.
            service.score(&ScoreRequest { completions: Vec::new() })?;
            serve_blocking(vknow_core::rewards::server::router(Arc::new(service)), SocketAddr::new(a.host, a.port))?;
        }
    }
    Ok(())
}

fn coldstart_cmd(a: ColdstartArgs, exec: Execution) -> Result<()> {
    let manifest = load_manifest(&a.input)?;
    let mut cfg = ColdStartConfig::new(read_toml::<EndpointConfig>(&a.generator)?);
    cfg.k = a.k;
    cfg.n_frames = a.frames;
    cfg.exec = exec;
    let vcfg = match &a.verifier {
        Some(p) => read_toml::<VerifierConfig>(p)?,
        None => VerifierConfig::default(),
    };
    let gw = a.gw.gateway()?;
    let assets = a.assets.resolver(a.gw.toolkit())?;
    let (records, report) = coldstart::build(&manifest, &cfg, &vcfg, assets.as_ref(), &gw)?;
    coldstart::emit_dataset(&records, &manifest, &a.out)?;
    log::info!(
        "{} candidates, {} correct and formatted, {} confirmed",
        report.generated,
        report.correct_and_formatted,
        report.confirmed
    );
    Ok(())
}

fn eval_cmd(a: EvalArgs, exec: Execution) -> Result<()> {
    match (a.sweep, a.opts) {
        (Some(EvalCmd::Sweep(s)), _) => {
            let manifest = load_manifest(&s.opts.manifest)?;
            let cfg = s.opts.config(exec)?;
            let gw = s.opts.gw.gateway()?;
            let assets = s.opts.assets.resolver(s.opts.gw.toolkit())?;
            let runs = evalkit::frames_sweep(&manifest, &cfg, &s.frames, assets.as_ref(), &gw)?;
            write_json(&s.opts.out, &runs)?;
            let table = evalkit::sweep_table(&runs);
            match &s.table {
                Some(p) => emit(Some(p), &table)?,
                None => print!("{table}"),
            }
        }
        (None, Some(o)) => {
            let manifest = load_manifest(&o.manifest)?;
            let mut cfg = o.config(exec)?;
            cfg.n_frames = a.frames;
            let gw = o.gw.gateway()?;
            let assets = o.assets.resolver(o.gw.toolkit())?;
            let run = evalkit::run_eval(&manifest, &cfg, assets.as_ref(), &gw)?;
            write_json(&o.out, &run)?;
            print!("{}", analytics::render_report(&[(run_name(&o.out), run.aggregates.clone())], ReportFormat::Markdown));
        }
        (None, None) => bail!("eval needs --manifest, --model and --out, or the sweep subcommand"),
    }
    Ok(())
}

fn report_cmd(a: ReportArgs) -> Result<()> {
    let mut rows = Vec::new();
    for p in &a.runs {
        let run: EvalRun = read_json(p)?;
        rows.push((run_name(p), run.aggregates));
    }
    if let Some(p) = &a.random_baseline {
        rows.push(("Random Guess".to_string(), evalkit::random_baseline(&load_manifest(p)?)));
    }
    emit(a.out.as_deref(), &analytics::render_report(&rows, a.format))
}

fn corr_cmd(a: CorrArgs) -> Result<()> {
    let mut m = AccuracyMatrix::default();
    for p in &a.matrix {
        let text = fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
        m.extend(AccuracyMatrix::from_csv(&text).with_context(|| p.display().to_string())?);
    }
    let deletion = if a.listwise { Deletion::Listwise } else { Deletion::Pairwise };
    let c = analytics::correlation_matrix(&m, deletion)?;
    let s = c.cluster_summary();
    eprintln!(
        "{} models; mean within-group r {:.4} (WC {:.4}, HC {:.4}); mean cross-group r {:.4}",
        m.len(),
        s.within_mean,
        s.wc_mean,
        s.hc_mean,
        s.cross_mean
    );
    let text = match a.format {
        ReportFormat::Csv => c.to_csv(),
        ReportFormat::Markdown => c.to_markdown(),
        ReportFormat::Json => serde_json::to_string_pretty(&serde_json::json!({"matrix": c, "clusters": s}))? + "\n",
    };
    emit(a.out.as_deref(), &text)
}

fn compare_cmd(a: CompareArgs) -> Result<()> {
    let (ra, rb): (EvalRun, EvalRun) = (read_json(&a.a)?, read_json(&a.b)?);
    let manifest: Manifest = load_manifest(&a.manifest)?;
    let dims: BTreeMap<String, TaskDimension> = manifest.items.iter().map(|i| (i.id.clone(), i.dimension)).collect();
    let cmp = analytics::compare_runs(&ra, &rb, &dims)?;
    let text = serde_json::to_string_pretty(&cmp)? + "\n";
    emit(a.out.as_deref(), &text)
}

fn baseline_cmd(a: BaselineArgs, exec: Execution) -> Result<()> {
    let m = load_manifest(&a.manifest)?;
    let mut rows = vec![("Random Guess".to_string(), evalkit::random_baseline(&m))];
    if let Some(trials) = a.simulate {
        rows.push((format!("Simulated ({trials})"), evalkit::simulate_random_guesser(&m, trials, a.seed, exec)));
    }
    print!("{}", analytics::render_report(&rows, ReportFormat::Markdown));
    Ok(())
}

fn dedup_cmd(a: DedupArgs) -> Result<()> {
    let train = load_manifest(&a.train)?;
    let holdout = load_manifest(&a.holdout)?;
    let out = corpus::dedup_items(&train, &holdout, a.now.unwrap_or_else(Utc::now));
    save_manifest(&out.kept, &a.out)?;
    log::info!("removed {} overlapping items", out.removed.len());
    Ok(())
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let exec = if cli.sequential { Execution::Sequential } else { Execution::default() };
    match cli.command {
        Command::Filter(a) => filter(a, exec),
        Command::Review(c) => review_cmd(c),
        Command::Reward(c) => reward_cmd(c, exec),
        Command::Coldstart(a) => coldstart_cmd(a, exec),
        Command::Eval(a) => eval_cmd(a, exec),
        Command::Report(a) => report_cmd(a),
        Command::Corr(a) => corr_cmd(a),
        Command::Compare(a) => compare_cmd(a),
        Command::Baseline(a) => baseline_cmd(a, exec),
        Command::Dedup(a) => dedup_cmd(a),
    }
}
