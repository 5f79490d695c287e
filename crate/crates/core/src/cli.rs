//! Command-line front end: config-driven data generation, training,
//! evaluation and reporting.
//!
//! Output layout under `--out`:
//!
//! ```text
//! manifest.json
//! data/{train,val,test,balanced,balanced_val}.csv
//! {erm,tfs,fdr}/{init,best,final}.json, records.jsonl
//! {tfs,fdr}/theta0.json           interpolation start point
//! eval/<phase>_<tag>.json
//! interpolation/{tfs,fdr}.csv
//! roc/{baseline,fdr,tfs}.csv
//! report.json, report.txt
//! ```

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use clap::{Args, CommandFactory, FromArgMatches, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use crate::analysis::{
    emit_report, interpolate_loss, roc_csv, roc_export, uniform_grid, Endpoint,
    InterpolationOptions, Provenance,
};
use crate::config::{streams, RunConfig};
use crate::datasets::{
    balanced_subsample, load_csv, save_csv, split, split_named, synth_biased, CellCounts,
    TripletDataset,
};
use crate::error::{Error, Result};
use crate::fairloss::FairnessConstraint;
use crate::fairmetrics::{evaluate, MetricsReport};
use crate::network::{Network, TrainableSelector};
use crate::pipeline::{
    load_checkpoint, objective_value, save_checkpoint, train_erm, train_fdr, train_tfs,
    write_records, CheckpointMeta, ObjectiveValue, Phase, StitchPlacement, TrainOutcome,
    TrainSettings,
};

pub const DATA_SPLITS: [&str; 5] = ["train", "val", "test", "balanced", "balanced_val"];
pub const REPORT_SPLITS: [&str; 3] = ["train", "balanced", "test"];
pub const DEFAULT_OUT: &str = "fairstitch-out";

#[derive(Debug, Parser)]
#[command(
    name = "fairstitch",
    version,
    about = "Fairness-constrained stitching-layer experiments"
)]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args)]
pub struct GlobalArgs {
    /// TOML run configuration; every key is optional (defaults below).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Output directory (overrides `out_dir` in the config).
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Worker threads for independent runs and evaluations.
    #[arg(long, global = true, default_value_t = 1)]
    pub jobs: usize,
    /// Override a seed: init=N, data=N, train=N or all=N. Repeatable.
    #[arg(long = "seed-override", global = true, value_name = "KEY=VALUE")]
    pub seed_override: Vec<String>,
    /// Store per-epoch wall time in run records (records are then no longer
    /// byte-reproducible).
    #[arg(long, global = true)]
    pub record_wall_time: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Method {
    Tfs,
    Fdr,
}

impl Method {
    fn phase(self) -> Phase {
        match self {
            Method::Tfs => Phase::Tfs,
            Method::Fdr => Phase::Fdr,
        }
    }
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate or load data, split it and draw the balanced set.
    GenData,
    /// ERM pretraining on the train split.
    Pretrain,
    /// Train a stitching layer on the balanced set.
    Tfs,
    /// Fine-tune the last block on the balanced set.
    Fdr,
    /// Metrics and objective values of checkpoints on every split.
    Evaluate {
        /// Checkpoint files; defaults to the best checkpoints of every
        /// finished phase.
        #[arg(long = "checkpoint")]
        checkpoints: Vec<PathBuf>,
    },
    /// Objective along the line from the initial to the trained state.
    Interpolate {
        /// Methods to interpolate; defaults to both.
        #[arg(long = "method", value_enum)]
        methods: Vec<Method>,
    },
    /// Baseline / FDR / TFS comparison on train, balanced and test.
    Report,
    /// Every step above in order.
    Run,
    /// Print the default configuration.
    DefaultConfig,
}

/// Files produced under the output directory.
#[derive(Clone, Debug)]
pub struct Layout {
    pub root: PathBuf,
}

impl Layout {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }
    /// `path` relative to the root when it lies inside it, so artifacts do
    /// not depend on where the output directory lives.
    pub fn display(&self, path: &Path) -> String {
        path.strip_prefix(&self.root)
            .unwrap_or(path)
            .display()
            .to_string()
    }
    pub fn manifest(&self) -> PathBuf {
        self.root.join("manifest.json")
    }
    pub fn data(&self, split: &str) -> PathBuf {
        self.root.join("data").join(format!("{split}.csv"))
    }
    pub fn checkpoint(&self, phase: Phase, tag: &str) -> PathBuf {
        self.root.join(phase.as_str()).join(format!("{tag}.json"))
    }
    pub fn records(&self, phase: Phase) -> PathBuf {
        self.root.join(phase.as_str()).join("records.jsonl")
    }
    pub fn eval(&self, name: &str) -> PathBuf {
        self.root.join("eval").join(format!("{name}.json"))
    }
    pub fn interpolation(&self, method: Method) -> PathBuf {
        self.root
            .join("interpolation")
            .join(format!("{}.csv", method.phase().as_str()))
    }
    pub fn roc(&self, method: &str) -> PathBuf {
        self.root.join("roc").join(format!("{method}.csv"))
    }
    pub fn report_json(&self) -> PathBuf {
        self.root.join("report.json")
    }
    pub fn report_text(&self) -> PathBuf {
        self.root.join("report.txt")
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ManifestMetadata {
    pub created_unix_s: u64,
    pub version: String,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ManifestFile {
    pub split: String,
    pub path: String,
    pub rows: usize,
    pub cells: CellCounts,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Manifest {
    /// The only non-reproducible part of any output.
    pub metadata: ManifestMetadata,
    pub provenance: Provenance,
    pub source: String,
    pub total_rows: usize,
    pub source_cells: CellCounts,
    /// Smallest `(y, a)` cell of train + val, i.e. the balanced per-cell size.
    pub pooled_min_cell: usize,
    /// Split used for ERM pretraining.
    pub erm_training_split: String,
    pub files: Vec<ManifestFile>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SplitEvaluation {
    pub split: String,
    pub metrics: MetricsReport,
    pub objective: ObjectiveValue,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EvaluationOutput {
    pub provenance: Provenance,
    pub checkpoint: String,
    pub phase: Phase,
    pub epoch: usize,
    pub constraint: FairnessConstraint,
    pub splits: Vec<SplitEvaluation>,
}

impl EvaluationOutput {
    pub fn split(&self, name: &str) -> Option<&SplitEvaluation> {
        self.splits.iter().find(|s| s.split == name)
    }
}

/// Validated configuration plus resolved output location.
#[derive(Clone, Debug)]
pub struct Context {
    pub cfg: RunConfig,
    pub layout: Layout,
    pub provenance: Provenance,
    pub record_wall_time: bool,
}

impl Context {
    pub fn new(cfg: RunConfig, out: PathBuf) -> Result<Self> {
        cfg.validate()?;
        let provenance = Provenance {
            config_hash: cfg.hash(),
            seeds: cfg.seeds(),
        };
        Ok(Self {
            cfg,
            layout: Layout::new(out),
            provenance,
            record_wall_time: false,
        })
    }

    pub fn from_args(global: &GlobalArgs) -> Result<Self> {
        let mut cfg = match &global.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::default(),
        };
        for o in &global.seed_override {
            cfg.apply_seed_override(o)?;
        }
        let out = global
            .out
            .clone()
            .or_else(|| cfg.out_dir.clone())
            .unwrap_or_else(|| PathBuf::from(DEFAULT_OUT));
        let mut ctx = Self::new(cfg, out)?;
        ctx.record_wall_time = global.record_wall_time;
        Ok(ctx)
    }

    fn meta(&self, phase: Phase, epoch: usize) -> CheckpointMeta {
        CheckpointMeta {
            phase,
            epoch,
            optimizer: self.cfg.optimizer,
            seeds: self.cfg.seeds(),
        }
    }

    fn settings(&self, epochs: usize) -> TrainSettings {
        TrainSettings {
            epochs,
            optimizer: self.cfg.optimizer,
            eval: self.cfg.eval,
            seed: self.cfg.seeds.train,
            record_wall_time: self.record_wall_time,
        }
    }

    fn constraint(&self) -> FairnessConstraint {
        self.cfg.constraint.constraint()
    }

    fn load_split(&self, name: &str) -> Result<TripletDataset> {
        let path = self.layout.data(name);
        if !path.exists() {
            return Err(Error::MissingInput {
                path,
                hint: "run `fairstitch gen-data` first".into(),
            });
        }
        let ds = load_csv(&path)?;
        let want = self.cfg.model.dims[0];
        if ds.dim() != want {
            return Err(Error::config(
                "model.dims[0]",
                format!(
                    "{} has {} features, model expects {want}",
                    path.display(),
                    ds.dim()
                ),
            ));
        }
        Ok(ds)
    }

    fn load_net(&self, phase: Phase, tag: &str, hint: &str) -> Result<Network> {
        let path = self.layout.checkpoint(phase, tag);
        if !path.exists() {
            return Err(Error::MissingInput {
                path,
                hint: hint.into(),
            });
        }
        Ok(load_checkpoint(&path)?.1)
    }

    fn pretrained(&self) -> Result<Network> {
        self.load_net(Phase::Erm, "final", "run `fairstitch pretrain` first")
    }
}

fn create_parent(path: &Path) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    Ok(())
}

fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    create_parent(path)?;
    fs::write(path, contents).map_err(|e| Error::io(path, e))
}

fn to_json_pretty<T: Serialize>(v: &T) -> Result<String> {
    let mut s = serde_json::to_string_pretty(v).map_err(|e| Error::Serde(e.to_string()))?;
    s.push('\n');
    Ok(s)
}

pub fn cmd_gen_data(ctx: &Context) -> Result<Manifest> {
    let cfg = &ctx.cfg;
    let seed = cfg.seeds.data;
    let (full, source) = match &cfg.data.csv {
        Some(p) => (load_csv(p)?, p.display().to_string()),
        None => (
            synth_biased(&cfg.data.synthetic.spec(seed.wrapping_add(streams::SYNTH)))?,
            "synthetic".to_string(),
        ),
    };
    if full.dim() != cfg.model.dims[0] {
        return Err(Error::config(
            "model.dims[0]",
            format!(
                "data has {} features, model expects {}",
                full.dim(),
                cfg.model.dims[0]
            ),
        ));
    }
    let sp = &cfg.data.split;
    let [train, val, test] = split(
        &full,
        sp.fractions,
        seed.wrapping_add(streams::SPLIT),
        sp.stratify,
    )?;
    let pooled_min_cell = train.concat(&val, "pooled")?.cell_counts().min();
    let balanced = balanced_subsample(&train, &val, seed.wrapping_add(streams::BALANCED))?;
    let f = sp.balanced_val_fraction;
    let mut parts = split_named(
        &balanced,
        &[1.0 - f, f],
        &["balanced", "balanced_val"],
        seed.wrapping_add(streams::BALANCED_SPLIT),
        true,
    )?;
    let balanced_val = parts.pop().unwrap();
    let balanced = parts.pop().unwrap();

    let mut files = Vec::new();
    for ds in [&train, &val, &test, &balanced, &balanced_val] {
        let path = ctx.layout.data(&ds.name);
        create_parent(&path)?;
        save_csv(ds, &path)?;
        files.push(ManifestFile {
            split: ds.name.clone(),
            path: format!("data/{}.csv", ds.name),
            rows: ds.len(),
            cells: ds.cell_counts(),
        });
    }
    let manifest = Manifest {
        metadata: ManifestMetadata {
            created_unix_s: SystemTime::now()
                .duration_since(UNIX_EPOCH)
                .map_or(0, |d| d.as_secs()),
            version: env!("CARGO_PKG_VERSION").into(),
        },
        provenance: ctx.provenance.clone(),
        source,
        total_rows: full.len(),
        source_cells: full.cell_counts(),
        pooled_min_cell,
        erm_training_split: "train".into(),
        files,
    };
    write_file(&ctx.layout.manifest(), to_json_pretty(&manifest)?)?;
    Ok(manifest)
}

fn save_outcome(ctx: &Context, phase: Phase, out: &TrainOutcome) -> Result<()> {
    let l = &ctx.layout;
    save_checkpoint(
        &out.initial,
        &ctx.meta(phase, 0),
        l.checkpoint(phase, "init"),
    )?;
    save_checkpoint(
        &out.best,
        &ctx.meta(phase, out.best_epoch.unwrap_or(0)),
        l.checkpoint(phase, "best"),
    )?;
    save_checkpoint(
        &out.final_net,
        &ctx.meta(phase, out.records.len()),
        l.checkpoint(phase, "final"),
    )?;
    write_records(&out.records, l.records(phase))
}

pub fn cmd_pretrain(ctx: &Context) -> Result<TrainOutcome> {
    let train = ctx.load_split("train")?;
    let val = ctx.load_split("val")?;
    let net = Network::init_mlp(&ctx.cfg.model.dims, ctx.cfg.seeds.init)?;
    let out = train_erm(&net, &train, &val, &ctx.settings(ctx.cfg.epochs.erm))?;
    save_outcome(ctx, Phase::Erm, &out)?;
    Ok(out)
}

pub fn cmd_tfs(ctx: &Context) -> Result<TrainOutcome> {
    let pre = ctx.pretrained()?;
    let bal = ctx.load_split("balanced")?;
    let val = ctx.load_split("balanced_val")?;
    let placement = StitchPlacement {
        position: ctx.cfg.model.stitch_position,
        init: ctx.cfg.stitch_init(),
    };
    let out = train_tfs(
        &pre,
        &bal,
        &val,
        &ctx.constraint(),
        &ctx.settings(ctx.cfg.epochs.tfs),
        placement,
    )?;
    save_outcome(ctx, Phase::Tfs, &out)?;
    save_checkpoint(
        &out.initial,
        &ctx.meta(Phase::Tfs, 0),
        ctx.layout.checkpoint(Phase::Tfs, "theta0"),
    )?;
    Ok(out)
}

/// Pretrained network whose last block is reset to its ERM initialization.
fn fdr_theta0(pretrained: &Network, erm_init: &Network) -> Result<Network> {
    let mut net = pretrained.clone();
    net.set_trainable(TrainableSelector::LastBlockOnly)?;
    let mut flat = net.params(false);
    let init = erm_init.params(false);
    if init.len() != flat.len() {
        return Err(Error::Checkpoint(
            "ERM init and final checkpoints differ in size".into(),
        ));
    }
    let tail = net.blocks().last().unwrap().param_count();
    let start = flat.len() - tail;
    flat[start..].copy_from_slice(&init[start..]);
    net.set_params(false, &flat)?;
    Ok(net)
}

pub fn cmd_fdr(ctx: &Context) -> Result<TrainOutcome> {
    let pre = ctx.pretrained()?;
    let erm_init = ctx.load_net(Phase::Erm, "init", "run `fairstitch pretrain` first")?;
    let bal = ctx.load_split("balanced")?;
    let val = ctx.load_split("balanced_val")?;
    let out = train_fdr(
        &pre,
        &bal,
        &val,
        &ctx.constraint(),
        &ctx.settings(ctx.cfg.epochs.fdr),
    )?;
    save_outcome(ctx, Phase::Fdr, &out)?;
    let theta0 = fdr_theta0(&pre, &erm_init)?;
    save_checkpoint(
        &theta0,
        &ctx.meta(Phase::Fdr, 0),
        ctx.layout.checkpoint(Phase::Fdr, "theta0"),
    )?;
    Ok(out)
}

/// Metrics and objective of one checkpoint on every data split.
pub fn evaluate_checkpoint(ctx: &Context, path: &Path) -> Result<EvaluationOutput> {
    if !path.exists() {
        return Err(Error::MissingInput {
            path: path.to_path_buf(),
            hint: "train the corresponding phase first".into(),
        });
    }
    let (ckpt, net) = load_checkpoint(path)?;
    let constraint = ctx.constraint();
    let splits = DATA_SPLITS
        .iter()
        .map(|name| {
            let ds = ctx.load_split(name)?;
            let p = net.predict_proba(&ds.x)?;
            let metrics = evaluate(&p, &ds.y, &ds.a, name, constraint.kind, &ctx.cfg.eval)
                .map_err(|e| e.context(name))?;
            let objective = objective_value(&net, &ds, &constraint).map_err(|e| e.context(name))?;
            Ok(SplitEvaluation {
                split: name.to_string(),
                metrics,
                objective,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(EvaluationOutput {
        provenance: ctx.provenance.clone(),
        checkpoint: ctx.layout.display(path),
        phase: ckpt.phase,
        epoch: ckpt.epoch,
        constraint,
        splits,
    })
}

fn eval_name(path: &Path) -> String {
    let stem = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    match path.parent().and_then(Path::file_name) {
        Some(dir) => format!("{}_{stem}", dir.to_string_lossy()),
        None => stem,
    }
}

pub fn cmd_evaluate(ctx: &Context, checkpoints: &[PathBuf]) -> Result<Vec<PathBuf>> {
    let targets: Vec<PathBuf> = if checkpoints.is_empty() {
        let found: Vec<PathBuf> = [Phase::Erm, Phase::Tfs, Phase::Fdr]
            .iter()
            .flat_map(|&p| ["best", "theta0"].map(|t| ctx.layout.checkpoint(p, t)))
            .filter(|p| p.exists())
            .collect();
        if found.is_empty() {
            return Err(Error::MissingInput {
                path: ctx.layout.checkpoint(Phase::Erm, "best"),
                hint: "run `fairstitch pretrain` first or pass --checkpoint".into(),
            });
        }
        found
    } else {
        checkpoints.to_vec()
    };
    use rayon::prelude::*;
    let outputs = targets
        .par_iter()
        .map(|p| evaluate_checkpoint(ctx, p))
        .collect::<Result<Vec<_>>>()?;
    let mut written = Vec::new();
    for (path, out) in targets.iter().zip(&outputs) {
        let dest = ctx.layout.eval(&eval_name(path));
        write_file(&dest, to_json_pretty(out)?)?;
        written.push(dest);
    }
    Ok(written)
}

pub fn cmd_interpolate(ctx: &Context, methods: &[Method]) -> Result<Vec<PathBuf>> {
    let methods: Vec<Method> = if methods.is_empty() {
        vec![Method::Tfs, Method::Fdr]
    } else {
        methods.to_vec()
    };
    let datasets = REPORT_SPLITS
        .iter()
        .map(|s| ctx.load_split(s))
        .collect::<Result<Vec<_>>>()?;
    let refs: Vec<&TripletDataset> = datasets.iter().collect();
    let icfg = ctx.cfg.interpolation;
    let options = InterpolationOptions {
        interpolate_frozen: icfg.interpolate_frozen,
        ce_only: icfg.ce_only,
        allow_extrapolation: false,
    };
    let grid = uniform_grid(icfg.points);
    let mut written = Vec::new();
    for m in methods {
        let phase = m.phase();
        let hint = format!("run `fairstitch {}` first", phase.as_str());
        let start = ctx.load_net(phase, "theta0", &hint)?;
        let end = ctx.load_net(phase, "best", &hint)?;
        let (p0, p1) = (
            ctx.layout.checkpoint(phase, "theta0"),
            ctx.layout.checkpoint(phase, "best"),
        );
        let (id0, id1) = (ctx.layout.display(&p0), ctx.layout.display(&p1));
        let curve = interpolate_loss(
            Endpoint {
                id: &id0,
                net: &start,
            },
            Endpoint {
                id: &id1,
                net: &end,
            },
            &refs,
            &ctx.constraint(),
            &grid,
            options,
        )?;
        let dest = ctx.layout.interpolation(m);
        write_file(&dest, curve.to_csv(&ctx.provenance)?)?;
        written.push(dest);
    }
    Ok(written)
}

pub fn cmd_report(ctx: &Context) -> Result<crate::analysis::ComparisonReport> {
    let baseline = ctx.pretrained()?;
    let fdr = ctx.load_net(Phase::Fdr, "best", "run `fairstitch fdr` first")?;
    let tfs = ctx.load_net(Phase::Tfs, "best", "run `fairstitch tfs` first")?;
    let datasets = REPORT_SPLITS
        .iter()
        .map(|s| ctx.load_split(s))
        .collect::<Result<Vec<_>>>()?;
    let refs: Vec<&TripletDataset> = datasets.iter().collect();
    let methods = [("baseline", &baseline), ("fdr", &fdr), ("tfs", &tfs)];
    let report = emit_report(
        &methods,
        &refs,
        &ctx.constraint(),
        &ctx.cfg.eval,
        ctx.provenance.clone(),
    )?;
    let l = &ctx.layout;
    create_parent(&l.report_json())?;
    report.write(l.report_json(), l.report_text())?;
    let test = datasets.last().unwrap();
    for (name, net) in methods {
        let p = net.predict_proba(&test.x)?;
        let curves = roc_export(&p, &test.y, &test.a).map_err(|e| e.context(name))?;
        write_file(&l.roc(name), roc_csv(&curves, &ctx.provenance)?)?;
    }
    Ok(report)
}

/// The full pipeline; TFS and FDR run concurrently when `--jobs` > 1.
pub fn cmd_run(ctx: &Context) -> Result<()> {
    cmd_gen_data(ctx)?;
    cmd_pretrain(ctx)?;
    let (tfs, fdr) = rayon::join(|| cmd_tfs(ctx), || cmd_fdr(ctx));
    tfs?;
    fdr?;
    cmd_evaluate(ctx, &[])?;
    cmd_interpolate(ctx, &[])?;
    cmd_report(ctx)?;
    Ok(())
}

fn dispatch(cli: &Cli) -> Result<String> {
    if let Command::DefaultConfig = cli.command {
        return Ok(RunConfig::default_toml());
    }
    let ctx = Context::from_args(&cli.global)?;
    let msg = match &cli.command {
        Command::GenData => {
            let m = cmd_gen_data(&ctx)?;
            format!(
                "wrote {} split files ({} rows) to {}",
                m.files.len(),
                m.total_rows,
                ctx.layout.root.join("data").display()
            )
        }
        Command::Pretrain => summarize("erm", &cmd_pretrain(&ctx)?),
        Command::Tfs => summarize("tfs", &cmd_tfs(&ctx)?),
        Command::Fdr => summarize("fdr", &cmd_fdr(&ctx)?),
        Command::Evaluate { checkpoints } => list("evaluation", &cmd_evaluate(&ctx, checkpoints)?),
        Command::Interpolate { methods } => list("interpolation", &cmd_interpolate(&ctx, methods)?),
        Command::Report => cmd_report(&ctx)?.to_text(),
        Command::Run => {
            cmd_run(&ctx)?;
            fs::read_to_string(ctx.layout.report_text())
                .map_err(|e| Error::io(ctx.layout.report_text(), e))?
        }
        Command::DefaultConfig => unreachable!(),
    };
    Ok(msg)
}

fn summarize(phase: &str, out: &TrainOutcome) -> String {
    let last = out.records.last().map_or(f64::NAN, |r| r.objective);
    match out.best_epoch {
        Some(e) => format!(
            "{phase}: {} epochs, final objective {last:.6}, best epoch {e}",
            out.records.len()
        ),
        None => format!("{phase}: 0 epochs"),
    }
}

fn list(what: &str, paths: &[PathBuf]) -> String {
    let mut s = format!("wrote {} {what} file(s):", paths.len());
    for p in paths {
        s.push_str(&format!("\n  {}", p.display()));
    }
    s
}

fn command() -> clap::Command {
    let help = format!(
        "Default configuration (every key optional):\n\n{}",
        RunConfig::default_toml()
    );
    Cli::command().after_long_help(help)
}

/// Parses `args` and runs the command. Returns the process exit code.
pub fn run_from<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let matches = match command().try_get_matches_from(args) {
        Ok(m) => m,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    let cli = match Cli::from_arg_matches(&matches) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return 2;
        }
    };
    let jobs = cli.global.jobs.max(1);
    let pool = match rayon::ThreadPoolBuilder::new().num_threads(jobs).build() {
        Ok(p) => p,
        Err(e) => {
            eprintln!("error: cannot start {jobs} worker threads: {e}");
            return 5;
        }
    };
    match pool.install(|| dispatch(&cli)) {
        Ok(msg) => {
            println!("{}", msg.trim_end());
            0
        }
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
