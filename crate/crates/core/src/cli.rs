//! Command-line front end. `run` parses argv, executes one subcommand and
//! returns the process exit code.

use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::data::{
    generate_synthetic, read_boxes, DatasetManifest, Image, LabeledImages, Split, SplitRule,
    SyntheticSpec,
};
use crate::error::{Error, Result};
use crate::evaluation::{
    export_heatmaps, extract_features, mean_box_attention, probe_report, projection_variance,
    retrieval_eval, FeatureMatrix, FrozenModel, Similarity,
};
use crate::experiment::SyntheticData;
use crate::training::{
    load_checkpoint, save_checkpoint, train, MetricsWriter, ModelState, TrainConfig,
};
use crate::variants::VariantMode;

pub const RUN_MANIFEST: &str = "run.json";
pub const CHECKPOINT: &str = "checkpoint.fmck";
pub const METRICS: &str = "metrics.csv";
pub const CONFIG: &str = "config.json";

/// Default K values of `sweep-k`.
pub const SWEEP_K_DEFAULT: &str = "1,2,4,8,16,32,64,128,256";

#[derive(Debug, Parser)]
#[command(name = "fitmask", version, about = "Contrastive pretraining with a GradCAM fitting branch")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write the synthetic glyph dataset as an image folder with boxes.
    GenData(GenDataArgs),
    /// Train a variant and write checkpoint, metrics and summary.
    Pretrain(PretrainArgs),
    /// Linear probe on frozen features at several label fractions.
    EvalLinear(EvalLinearArgs),
    /// Leave-one-out retrieval on the test split.
    EvalRetrieval(EvalRetrievalArgs),
    /// Rank branch projections by response variance and score subsets.
    AnalyzeProjections(AnalyzeArgs),
    /// Render attention masks over test images.
    ExportHeatmaps(HeatmapArgs),
    /// Train one model per K and tabulate retrieval rank-1.
    SweepK(SweepKArgs),
    /// Re-run a recorded run manifest and compare its metrics.
    Replay(ReplayArgs),
}

#[derive(Debug, Clone, Args)]
pub struct DataArgs {
    /// Image folder (a `gen-data` output or `root/<class>/<image>`); the
    /// synthetic dataset is rendered in memory when absent.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Synthetic spec: `default` or a JSON file.
    #[arg(long, default_value = "default")]
    pub spec: String,
    /// Train images per class for folders without a manifest.
    #[arg(long, default_value_t = 100)]
    pub train_per_class: usize,
}

#[derive(Debug, Clone, Args)]
pub struct TrainArgs {
    /// Config JSON; the desk preset when absent.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub variant: Option<String>,
    #[arg(long)]
    pub lr: Option<f64>,
    /// Fixed number of optimizer steps (replaces the epoch budget).
    #[arg(long)]
    pub steps: Option<u64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    /// Branch projections K.
    #[arg(long)]
    pub k: Option<usize>,
    /// Fitting loss weight.
    #[arg(long)]
    pub nu: Option<f64>,
    #[arg(long)]
    pub queue_size: Option<usize>,
}

#[derive(Debug, Clone, Args)]
pub struct GenDataArgs {
    #[arg(long, default_value = "default")]
    pub spec: String,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct PretrainArgs {
    #[command(flatten)]
    pub train: TrainArgs,
    #[command(flatten)]
    pub data: DataArgs,
    /// Continue from `<out>/checkpoint.fmck`.
    #[arg(long)]
    pub resume: bool,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct EvalLinearArgs {
    #[arg(long)]
    pub ckpt: PathBuf,
    #[command(flatten)]
    pub data: DataArgs,
    /// Comma-separated label fractions.
    #[arg(long, default_value = "1,0.5,0.2")]
    pub fractions: String,
    /// Probe the GAP feature instead of the variant's pooled feature.
    #[arg(long)]
    pub gap: bool,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct EvalRetrievalArgs {
    #[arg(long)]
    pub ckpt: PathBuf,
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long, value_enum, default_value = "cosine")]
    pub metric: MetricArg,
    #[arg(long)]
    pub gap: bool,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, clap::ValueEnum)]
pub enum MetricArg {
    Cosine,
    L2,
}

impl From<MetricArg> for Similarity {
    fn from(m: MetricArg) -> Self {
        match m {
            MetricArg::Cosine => Similarity::Cosine,
            MetricArg::L2 => Similarity::L2,
        }
    }
}

#[derive(Debug, Clone, Args)]
pub struct AnalyzeArgs {
    #[arg(long)]
    pub ckpt: PathBuf,
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long, default_value_t = crate::evaluation::HIGH_VARIANCE_TOP)]
    pub top: usize,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct HeatmapArgs {
    #[arg(long)]
    pub ckpt: PathBuf,
    #[command(flatten)]
    pub data: DataArgs,
    /// Number of test images to render.
    #[arg(long, default_value_t = 16)]
    pub limit: usize,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct SweepKArgs {
    #[command(flatten)]
    pub train: TrainArgs,
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long, default_value = SWEEP_K_DEFAULT)]
    pub values: String,
    /// Comma-separated seeds; each K is averaged over them.
    #[arg(long, default_value = "0")]
    pub seeds: String,
    /// Run trials on separate threads.
    #[arg(long)]
    pub parallel: bool,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct ReplayArgs {
    /// A `run.json` written by an earlier command.
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RunStatus {
    Running,
    Finished,
    Failed,
}

/// Record of one command invocation, enough to replay it.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RunManifest {
    /// Full argv after the program name.
    pub command: Vec<String>,
    pub subcommand: String,
    /// Resolved training config, for commands that train.
    pub config: Option<TrainConfig>,
    pub config_hash: Option<String>,
    pub seed: Option<u64>,
    pub build: String,
    pub started_unix: f64,
    pub wall_seconds: Option<f64>,
    pub status: RunStatus,
    pub error: Option<String>,
    /// Files written, relative to the output directory.
    pub outputs: Vec<PathBuf>,
}

impl RunManifest {
    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }
}

pub fn build_id() -> String {
    format!(
        "fitmask {} ({})",
        env!("CARGO_PKG_VERSION"),
        option_env!("FITMASK_BUILD_ID").unwrap_or("unversioned")
    )
}

fn now_unix() -> f64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map_or(0.0, |d| d.as_secs_f64())
}

/// Writes `contents` to `path` through a sibling temp file and a rename.
pub fn write_atomic(path: &Path, contents: &[u8]) -> Result<()> {
    let tmp = path.with_extension("tmp");
    std::fs::write(&tmp, contents).map_err(|e| Error::io(&tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

fn write_json<T: Serialize>(out: &Path, name: &str, value: &T, run: &mut Run) -> Result<()> {
    write_atomic(&out.join(name), serde_json::to_string_pretty(value)?.as_bytes())?;
    run.output(name);
    Ok(())
}

struct Run {
    dir: PathBuf,
    manifest: RunManifest,
    clock: Instant,
}

impl Run {
    fn start(dir: &Path, argv: &[String], subcommand: &str) -> Result<Self> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let run = Run {
            dir: dir.to_path_buf(),
            manifest: RunManifest {
                command: argv.to_vec(),
                subcommand: subcommand.to_string(),
                config: None,
                config_hash: None,
                seed: None,
                build: build_id(),
                started_unix: now_unix(),
                wall_seconds: None,
                status: RunStatus::Running,
                error: None,
                outputs: Vec::new(),
            },
            clock: Instant::now(),
        };
        run.save()?;
        Ok(run)
    }

    fn with_config(&mut self, config: &TrainConfig) -> Result<()> {
        self.manifest.config = Some(config.clone());
        self.manifest.config_hash = Some(config.hash());
        self.manifest.seed = Some(config.seed);
        self.save()
    }

    fn output(&mut self, name: &str) {
        let p = PathBuf::from(name);
        if !self.manifest.outputs.contains(&p) {
            self.manifest.outputs.push(p);
        }
    }

    fn save(&self) -> Result<()> {
        write_atomic(
            &self.dir.join(RUN_MANIFEST),
            serde_json::to_string_pretty(&self.manifest)?.as_bytes(),
        )
    }

    fn finish(mut self, outcome: &Result<()>) -> Result<()> {
        self.manifest.wall_seconds = Some(self.clock.elapsed().as_secs_f64());
        match outcome {
            Ok(()) => self.manifest.status = RunStatus::Finished,
            Err(e) => {
                self.manifest.status = RunStatus::Failed;
                self.manifest.error = Some(e.to_string());
            }
        }
        self.save()
    }
}

/// Parses `argv` (without the program name) and runs it. Returns the exit code:
/// 0 success, 1 runtime failure, 2 usage error.
pub fn run<I, S>(argv: I) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<String>,
{
    let argv: Vec<String> = argv.into_iter().map(Into::into).collect();
    let cli = match Cli::try_parse_from(std::iter::once("fitmask".to_string()).chain(argv.iter().cloned())) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match dispatch(&cli.command, &argv) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                Error::Usage(_) => 2,
                _ => 1,
            }
        }
    }
}

fn subcommand_name(cmd: &Command) -> &'static str {
    match cmd {
        Command::GenData(_) => "gen-data",
        Command::Pretrain(_) => "pretrain",
        Command::EvalLinear(_) => "eval-linear",
        Command::EvalRetrieval(_) => "eval-retrieval",
        Command::AnalyzeProjections(_) => "analyze-projections",
        Command::ExportHeatmaps(_) => "export-heatmaps",
        Command::SweepK(_) => "sweep-k",
        Command::Replay(_) => "replay",
    }
}

fn out_dir(cmd: &Command) -> &Path {
    match cmd {
        Command::GenData(a) => &a.out,
        Command::Pretrain(a) => &a.out,
        Command::EvalLinear(a) => &a.out,
        Command::EvalRetrieval(a) => &a.out,
        Command::AnalyzeProjections(a) => &a.out,
        Command::ExportHeatmaps(a) => &a.out,
        Command::SweepK(a) => &a.out,
        Command::Replay(a) => &a.out,
    }
}

pub fn dispatch(cmd: &Command, argv: &[String]) -> Result<()> {
    if let Command::Replay(a) = cmd {
        return replay(a);
    }
    let mut run = Run::start(out_dir(cmd), argv, subcommand_name(cmd))?;
    let outcome = match cmd {
        Command::GenData(a) => gen_data(a, &mut run),
        Command::Pretrain(a) => pretrain(a, &mut run),
        Command::EvalLinear(a) => eval_linear(a, &mut run),
        Command::EvalRetrieval(a) => eval_retrieval(a, &mut run),
        Command::AnalyzeProjections(a) => analyze_projections(a, &mut run),
        Command::ExportHeatmaps(a) => heatmaps(a, &mut run),
        Command::SweepK(a) => sweep_k(a, &mut run),
        Command::Replay(_) => unreachable!(),
    };
    run.finish(&outcome)?;
    outcome
}

fn load_spec(spec: &str) -> Result<SyntheticSpec> {
    let s = if spec == "default" {
        SyntheticSpec::default()
    } else {
        let path = Path::new(spec);
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text)?
    };
    s.validate()?;
    Ok(s)
}

/// Resolves the config file (or desk preset) and applies flag overrides.
pub fn resolve_config(args: &TrainArgs) -> Result<TrainConfig> {
    let mut c = match &args.config {
        Some(p) => TrainConfig::load(p)?,
        None => TrainConfig::desk(),
    };
    if let Some(v) = &args.variant {
        c.variant.mode = v.parse::<VariantMode>()?;
    }
    if let Some(v) = args.lr {
        c.lr = v;
    }
    if let Some(v) = args.steps {
        c.max_steps = Some(v);
    }
    if let Some(v) = args.epochs {
        c.epochs = v;
    }
    if let Some(v) = args.seed {
        c.seed = v;
    }
    if let Some(v) = args.batch_size {
        c.batch_size = v;
    }
    if let Some(v) = args.k {
        c.variant.projections = v;
    }
    if let Some(v) = args.nu {
        c.loss_weights.fitting = v;
    }
    if let Some(v) = args.queue_size {
        c.queue_size = v;
    }
    c.validate()?;
    Ok(c)
}

/// Dataset splits as used by the commands. Boxes are present for synthetic data.
pub struct LoadedData {
    pub train: LabeledImages,
    pub test: LabeledImages,
    pub test_boxes: Option<Vec<[usize; 4]>>,
    pub image_size: Option<usize>,
}

impl From<SyntheticData> for LoadedData {
    fn from(d: SyntheticData) -> Self {
        LoadedData {
            train: LabeledImages {
                files: Vec::new(),
                images: d.train_images,
                labels: d.train_labels,
            },
            test: LabeledImages {
                files: Vec::new(),
                images: d.test_images,
                labels: d.test_labels,
            },
            test_boxes: Some(d.test_boxes),
            image_size: Some(d.spec.image_size),
        }
    }
}

pub fn load_data(args: &DataArgs) -> Result<LoadedData> {
    let Some(root) = &args.data else {
        return Ok(SyntheticData::render(&load_spec(&args.spec)?)?.into());
    };
    let manifest_path = root.join("manifest.json");
    let manifest = if manifest_path.exists() {
        let mut m = DatasetManifest::read(&manifest_path)?;
        m.root = root.clone();
        m
    } else {
        let rule = SplitRule {
            train_per_class: args.train_per_class,
            test_per_class: None,
            seed: 0,
        };
        let (m, skipped) = crate::data::load_image_folder(root, rule)?;
        for (p, why) in &skipped.skipped {
            log::warn!("skipped {}: {why}", p.display());
        }
        m
    };
    let train = manifest.load(Split::Train)?;
    let test = manifest.load(Split::Test)?;
    let boxes_path = root.join("boxes.json");
    let test_boxes = if boxes_path.exists() {
        let boxes = read_boxes(&boxes_path)?;
        test.files
            .iter()
            .map(|f| boxes.get(&f.to_string_lossy().replace('\\', "/")).copied())
            .collect::<Option<Vec<_>>>()
    } else {
        None
    };
    let image_size = test.images.first().map(Image::width);
    Ok(LoadedData {
        train,
        test,
        test_boxes,
        image_size,
    })
}

fn gen_data(a: &GenDataArgs, run: &mut Run) -> Result<()> {
    let mut spec = load_spec(&a.spec)?;
    if let Some(s) = a.seed {
        spec.seed = s;
    }
    let manifest = generate_synthetic(&spec, &a.out.join("data"))?;
    run.manifest.seed = Some(spec.seed);
    run.output("data/manifest.json");
    run.output("data/boxes.json");
    run.output("data/synthetic_spec.json");
    println!(
        "wrote {} train / {} test images to {}",
        manifest.train.len(),
        manifest.test.len(),
        a.out.join("data").display()
    );
    Ok(())
}

fn pretrain(a: &PretrainArgs, run: &mut Run) -> Result<()> {
    let config = resolve_config(&a.train)?;
    run.with_config(&config)?;
    write_json(&a.out, CONFIG, &config, run)?;
    let data = load_data(&a.data)?;
    let ckpt = a.out.join(CHECKPOINT);
    let metrics_path = a.out.join(METRICS);
    let mut state = if a.resume {
        let (saved, state) = load_checkpoint(&ckpt)?;
        if saved.hash() != config.hash() {
            return Err(Error::Config(
                "resolved config differs from the checkpoint being resumed".into(),
            ));
        }
        state
    } else {
        if metrics_path.exists() {
            std::fs::remove_file(&metrics_path).map_err(|e| Error::io(&metrics_path, e))?;
        }
        ModelState::init(&config)?
    };
    let mut writer = MetricsWriter::open(&metrics_path)?;
    run.output(METRICS);
    let (_, summary) = train(&config, &mut state, &data.train.images, Some(&mut writer), None)?;
    writer.flush()?;
    save_checkpoint(&ckpt, &config, &state)?;
    run.output(CHECKPOINT);
    write_json(&a.out, "summary.json", &summary, run)?;
    println!(
        "trained {} for {} steps; last total loss {}",
        config.variant.mode,
        state.step,
        summary.last.map_or(f64::NAN, |r| r.total)
    );
    Ok(())
}

fn frozen(ckpt: &Path, gap: bool, run: &mut Run) -> Result<FrozenModel> {
    let (config, state) = load_checkpoint(ckpt)?;
    run.with_config(&config)?;
    let mut model = FrozenModel::from_state(&config, &state)?;
    model.eval.force_gap |= gap;
    Ok(model)
}

fn parse_list<T: std::str::FromStr>(text: &str, what: &str) -> Result<Vec<T>> {
    let items = text
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| {
            s.parse::<T>()
                .map_err(|_| Error::Usage(format!("bad {what} value `{s}`")))
        })
        .collect::<Result<Vec<T>>>()?;
    if items.is_empty() {
        return Err(Error::Usage(format!("empty {what} list")));
    }
    Ok(items)
}

fn eval_linear(a: &EvalLinearArgs, run: &mut Run) -> Result<()> {
    let fractions: Vec<f64> = parse_list(&a.fractions, "fraction")?;
    let model = frozen(&a.ckpt, a.gap, run)?;
    let data = load_data(&a.data)?;
    let train = extract_features(&model, &data.train.images)?;
    let test = extract_features(&model, &data.test.images)?;
    let report = probe_report(&train, &data.train.labels, &test, &data.test.labels, &fractions, a.seed)?;
    write_json(&a.out, "linear_probe.json", &report, run)?;
    for r in &report.rows {
        println!("fraction {:>4}: top-1 {:.2} top-5 {:.2}", r.fraction, r.top1, r.top5);
    }
    Ok(())
}

fn eval_retrieval(a: &EvalRetrievalArgs, run: &mut Run) -> Result<()> {
    let model = frozen(&a.ckpt, a.gap, run)?;
    let data = load_data(&a.data)?;
    let features = extract_features(&model, &data.test.images)?;
    let report = retrieval_eval(&features, &data.test.labels, a.metric.into())?;
    write_json(&a.out, "retrieval.json", &report, run)?;
    println!(
        "rank-1 {:.2} rank-5 {:.2} mAP {:.2} over {} queries",
        report.rank1, report.rank5, report.map, report.queries
    );
    Ok(())
}

#[derive(Serialize)]
struct ProjectionAnalysis {
    variance: crate::evaluation::ProjectionVarianceReport,
    top: Vec<usize>,
    rank1_all: f64,
    rank1_top: f64,
    rank1_rest: Option<f64>,
}

fn analyze_projections(a: &AnalyzeArgs, run: &mut Run) -> Result<()> {
    let model = frozen(&a.ckpt, false, run)?;
    let branch = model
        .branch
        .as_ref()
        .and_then(|b| b.as_max_out())
        .ok_or_else(|| Error::Config("projection analysis needs a max-out branch".into()))?;
    if a.top == 0 {
        return Err(Error::Usage("--top must be positive".into()));
    }
    let data = load_data(&a.data)?;
    let prepared: Vec<Image> = data.test.images.iter().map(|i| model.preprocess(i)).collect();
    let maps = model.feature_maps(&prepared)?;
    let variance = projection_variance(branch, &maps)?;
    let top = variance.top(a.top);
    let rest: Vec<usize> = variance.ranking.iter().skip(a.top).copied().collect();
    let score = |subset: &[usize]| -> Result<f64> {
        let rows = maps
            .iter()
            .map(|m| model.pool_map_subset(m, subset))
            .collect::<Result<Vec<_>>>()?;
        Ok(retrieval_eval(&FeatureMatrix::from_rows(rows)?, &data.test.labels, Similarity::Cosine)?.rank1)
    };
    let all: Vec<usize> = (0..branch.projections()).collect();
    let analysis = ProjectionAnalysis {
        rank1_all: score(&all)?,
        rank1_top: score(&top)?,
        rank1_rest: if rest.is_empty() { None } else { Some(score(&rest)?) },
        top,
        variance,
    };
    write_json(&a.out, "projections.json", &analysis, run)?;
    println!(
        "top-{} projections {:?}: rank-1 {:.2} (all {:.2})",
        a.top, analysis.top, analysis.rank1_top, analysis.rank1_all
    );
    Ok(())
}

fn heatmaps(a: &HeatmapArgs, run: &mut Run) -> Result<()> {
    let model = frozen(&a.ckpt, false, run)?;
    if model.branch.is_none() {
        return Err(Error::Config(format!("{} has no attention branch", model.variant.mode)));
    }
    let data = load_data(&a.data)?;
    let n = a.limit.min(data.test.images.len());
    let prepared: Vec<Image> = data.test.images[..n].iter().map(|i| model.preprocess(i)).collect();
    let maps = model.feature_maps(&prepared)?;
    let masks = maps
        .iter()
        .map(|m| model.attention(m))
        .collect::<Result<Vec<_>>>()?;
    let files = export_heatmaps(&prepared, &masks, &a.out.join("heatmaps"))?;
    for f in &files {
        if let Ok(rel) = f.strip_prefix(&a.out) {
            run.output(&rel.to_string_lossy());
        }
    }
    if let (Some(boxes), Some(size)) = (&data.test_boxes, data.image_size) {
        let (mass, share) = mean_box_attention(&model, &maps, &boxes[..n], size)?;
        write_json(
            &a.out,
            "attention_mass.json",
            &serde_json::json!({ "mean_mass": mass, "uniform_share": share, "images": n }),
            run,
        )?;
    }
    println!("wrote {} heatmaps to {}", files.len(), a.out.join("heatmaps").display());
    Ok(())
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SweepRow {
    pub k: usize,
    pub seed: u64,
    pub rank1: f64,
    pub rank5: f64,
    pub map: f64,
}

fn sweep_trial(base: &TrainConfig, data: &LoadedData, k: usize, seed: u64) -> Result<SweepRow> {
    let mut config = base.clone();
    config.variant.projections = k;
    config.seed = seed;
    config.validate()?;
    let mut state = ModelState::init(&config)?;
    train(&config, &mut state, &data.train.images, None, None)?;
    let model = FrozenModel::from_state(&config, &state)?;
    let features = extract_features(&model, &data.test.images)?;
    let r = retrieval_eval(&features, &data.test.labels, Similarity::Cosine)?;
    Ok(SweepRow {
        k,
        seed,
        rank1: r.rank1,
        rank5: r.rank5,
        map: r.map,
    })
}

fn sweep_k(a: &SweepKArgs, run: &mut Run) -> Result<()> {
    let values: Vec<usize> = parse_list(&a.values, "K")?;
    let seeds: Vec<u64> = parse_list(&a.seeds, "seed")?;
    let base = resolve_config(&a.train)?;
    run.with_config(&base)?;
    let data = load_data(&a.data)?;
    let trials: Vec<(usize, u64)> = values
        .iter()
        .flat_map(|&k| seeds.iter().map(move |&s| (k, s)))
        .collect();
    let rows: Vec<SweepRow> = if a.parallel {
        std::thread::scope(|scope| {
            let handles: Vec<_> = trials
                .iter()
                .map(|&(k, s)| {
                    let (base, data) = (&base, &data);
                    scope.spawn(move || sweep_trial(base, data, k, s))
                })
                .collect();
            handles
                .into_iter()
                .map(|h| h.join().unwrap_or_else(|_| Err(Error::State("sweep trial panicked".into()))))
                .collect::<Result<Vec<_>>>()
        })?
    } else {
        trials
            .iter()
            .map(|&(k, s)| {
                log::info!("sweep-k: K={k} seed={s}");
                sweep_trial(&base, &data, k, s)
            })
            .collect::<Result<Vec<_>>>()?
    };
    let mut csv = String::from("k,seeds,rank1,rank5,map\n");
    for &k in &values {
        let sel: Vec<&SweepRow> = rows.iter().filter(|r| r.k == k).collect();
        let n = sel.len() as f64;
        let mean = |f: fn(&SweepRow) -> f64| sel.iter().map(|r| f(r)).sum::<f64>() / n;
        let (r1, r5, map) = (mean(|r| r.rank1), mean(|r| r.rank5), mean(|r| r.map));
        csv.push_str(&format!("{k},{},{r1},{r5},{map}\n", sel.len()));
        println!("K={k:>4}: rank-1 {r1:.2}");
    }
    write_atomic(&a.out.join("sweep_k.csv"), csv.as_bytes())?;
    run.output("sweep_k.csv");
    write_json(&a.out, "sweep_k.json", &rows, run)
}

/// Replaces the value of `--out` (either `--out X` or `--out=X`) in `argv`.
fn redirect_out(argv: &[String], out: &Path) -> Vec<String> {
    let mut v = Vec::with_capacity(argv.len());
    let mut it = argv.iter();
    while let Some(a) = it.next() {
        if a == "--out" {
            it.next();
            v.push("--out".into());
            v.push(out.to_string_lossy().into_owned());
        } else if a.starts_with("--out=") {
            v.push(format!("--out={}", out.to_string_lossy()));
        } else {
            v.push(a.clone());
        }
    }
    v
}

fn replay(a: &ReplayArgs) -> Result<()> {
    let recorded = RunManifest::read(&a.manifest)?;
    if recorded.subcommand == "replay" {
        return Err(Error::Usage("cannot replay a replay".into()));
    }
    let argv = redirect_out(&recorded.command, &a.out);
    let cli = Cli::try_parse_from(std::iter::once("fitmask".to_string()).chain(argv.iter().cloned()))
        .map_err(|e| Error::Usage(format!("recorded command no longer parses: {e}")))?;
    dispatch(&cli.command, &argv)?;
    let replayed = RunManifest::read(&a.out.join(RUN_MANIFEST))?;
    if recorded.config_hash != replayed.config_hash {
        return Err(Error::State("replayed config differs from the recorded one".into()));
    }
    let original_dir = a.manifest.parent().unwrap_or(Path::new("."));
    let original = original_dir.join(METRICS);
    if recorded.outputs.iter().any(|p| p == Path::new(METRICS)) && original.exists() {
        let before = std::fs::read(&original).map_err(|e| Error::io(&original, e))?;
        let after_path = a.out.join(METRICS);
        let after = std::fs::read(&after_path).map_err(|e| Error::io(&after_path, e))?;
        if before != after {
            return Err(Error::State(format!(
                "replayed metrics differ from {}",
                original.display()
            )));
        }
        println!("replayed metrics identical to {}", original.display());
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn out_flag_is_redirected_in_both_spellings() {
        let argv: Vec<String> = ["pretrain", "--out", "a", "--lr", "0", "--out=b"]
            .iter()
            .map(|s| s.to_string())
            .collect();
        let v = redirect_out(&argv, Path::new("z"));
        assert_eq!(v, ["pretrain", "--out", "z", "--lr", "0", "--out=z"]);
    }

    #[test]
    fn flags_override_the_preset() {
        let args = TrainArgs {
            config: None,
            variant: Some("moco-baseline".into()),
            lr: Some(0.5),
            steps: Some(3),
            epochs: None,
            seed: Some(9),
            batch_size: None,
            k: Some(4),
            nu: None,
            queue_size: None,
        };
        let c = resolve_config(&args).unwrap();
        assert_eq!(c.variant.mode, VariantMode::MocoBaseline);
        assert_eq!((c.lr, c.max_steps, c.seed, c.variant.projections), (0.5, Some(3), 9, 4));
    }

    #[test]
    fn bad_list_is_a_usage_error() {
        assert!(matches!(parse_list::<usize>("1,x", "K"), Err(Error::Usage(_))));
        assert!(matches!(parse_list::<usize>("", "K"), Err(Error::Usage(_))));
    }
}
