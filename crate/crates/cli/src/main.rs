//! `mefem` command-line driver.
//!
//! Exit codes: 0 success, 1 invalid input or configuration, 2 runtime failure.

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use mefem::checkpoint::Checkpoint;
use mefem::dataset::{worker_pool, Dataset, ImageFolder, SynthDataset};
use mefem::export::{atomic_write, write_grid};
use mefem::features::{extract, FrozenEncoder};
use mefem::lossweights::{WeightConfig, WeightMatrix, WeightScheme};
use mefem::maskgen::coverage_map;
use mefem::preprocess::{parse_manifest, run_manifest, CropParams};
use mefem::probe::{fit_probe, FeatureMode, HeadKind, ProbeConfig, Task};
use mefem::rng::{stream, Purpose};
use mefem::synthdata::{read_attributes, write_dataset, FaceAttributes, SynthConfig};
use mefem::trainer::{resume, train_loop, DirSink, TrainConfig, Trainer};
use mefem::GridSpec;
use ndarray::Array2;
use std::fmt;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

#[derive(Parser, Debug)]
#[command(name = "mefem", version, about = "Face-centric JEPA pretraining toolkit")]
struct Cli {
    /// Seed for every stochastic stage. Falls back to MEFEM_SEED.
    #[arg(long, global = true)]
    seed: Option<u64>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Crop faces listed in a `path,x,y,w,h` manifest.
    Preprocess(PreprocessArgs),
    /// Render a synthetic face dataset with attribute labels.
    Synth(SynthArgs),
    /// Pretrain an encoder.
    Train(TrainArgs),
    /// Fit a probe on frozen encoder features.
    Probe(ProbeArgs),
    /// Draw sample masks as text and PGM files.
    MaskViz(MaskVizArgs),
    /// Export the per-patch loss-weight matrix.
    WeightsViz(WeightsVizArgs),
    /// Estimate how often each patch lands in the source set.
    Coverage(CoverageArgs),
}

#[derive(Args, Debug)]
struct PreprocessArgs {
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Smallest accepted crop side before resizing.
    #[arg(long, default_value_t = 224)]
    min_side: usize,
    /// Side of the written crops.
    #[arg(long, default_value_t = 224)]
    image_size: usize,
    #[arg(long, default_value_t = 1)]
    workers: usize,
}

#[derive(Args, Debug)]
struct SynthArgs {
    #[arg(long)]
    count: usize,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 224)]
    image_size: usize,
    #[arg(long, default_value_t = 16)]
    patch_size: usize,
}

/// Grid and masking keys shared by the visualisation commands.
#[derive(Args, Debug)]
struct MaskArgs {
    /// stripe, quadrant or multiblock.
    #[arg(long, default_value = "stripe")]
    strategy: String,
    #[arg(long, default_value_t = 224)]
    image_size: usize,
    #[arg(long, default_value_t = 16)]
    patch_size: usize,
    /// Extra configuration `key=value` pairs, e.g. `stripe_width=3`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

#[derive(Args, Debug)]
struct TrainArgs {
    /// Key-value config file; explicit flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory for checkpoints and metrics.
    #[arg(long)]
    out: PathBuf,
    /// Continue from a checkpoint; its stored config is used.
    #[arg(long)]
    resume: Option<PathBuf>,
    /// Directory of PNG images; synthetic faces are used otherwise.
    #[arg(long)]
    data: Option<PathBuf>,
    /// Number of synthetic images (default 2000, or the checkpoint's count).
    #[arg(long)]
    synth: Option<usize>,
    /// Seed of the synthetic images; defaults to the training seed.
    #[arg(long)]
    synth_seed: Option<u64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    /// micro, tiny or small.
    #[arg(long)]
    model: Option<String>,
    /// stripe, quadrant or multiblock.
    #[arg(long)]
    masking: Option<String>,
    #[arg(long)]
    cls_p_source: Option<f64>,
    /// circular or uniform.
    #[arg(long)]
    weight_scheme: Option<String>,
    #[arg(long)]
    weight_radius: Option<f64>,
    #[arg(long)]
    weight_steepness: Option<f64>,
    #[arg(long)]
    workers: Option<usize>,
    /// Any config key as `key=value`; applied last.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

#[derive(Args, Debug)]
struct ProbeArgs {
    /// patches, cls or patches_plus_cls.
    #[arg(long)]
    features: String,
    /// attentive_pooler or mlp; defaults to the pairing for the features.
    #[arg(long)]
    head: Option<String>,
    /// Encoder checkpoint; the EMA teacher is probed.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Probe the checkpoint's initial weights instead of the trained ones.
    #[arg(long)]
    random_init: bool,
    /// Attribute to predict.
    #[arg(long, default_value = "face_scale")]
    attribute: String,
    /// Bin the attribute into this many equal-width classes.
    #[arg(long)]
    classes: Option<usize>,
    /// Directory written by `synth`; generated on the fly otherwise.
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long, default_value_t = 500)]
    synth: usize,
    /// Seed of the synthetic images (default: seed + 1000).
    #[arg(long)]
    synth_seed: Option<u64>,
    /// Number of probe seeds, starting at --seed.
    #[arg(long, default_value_t = 1)]
    seeds: u64,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    hidden_dim: Option<usize>,
    /// Results CSV to append to.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, default_value_t = 1)]
    workers: usize,
}

#[derive(Args, Debug)]
struct MaskVizArgs {
    #[command(flatten)]
    mask: MaskArgs,
    #[arg(long, default_value_t = 4)]
    count: usize,
    /// Directory for `mask_NNN.pgm` files.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct WeightsVizArgs {
    /// circular or uniform.
    #[arg(long, default_value = "circular")]
    scheme: String,
    /// Falloff radius r0 in patch units.
    #[arg(long, default_value_t = 5.0)]
    radius: f64,
    /// Sigmoid steepness in inverse patch units.
    #[arg(long, default_value_t = 1.5)]
    steepness: f64,
    #[arg(long, default_value_t = 224)]
    image_size: usize,
    #[arg(long, default_value_t = 16)]
    patch_size: usize,
    /// `.csv` or `.pgm`.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct CoverageArgs {
    #[command(flatten)]
    mask: MaskArgs,
    #[arg(long, default_value_t = 50_000)]
    samples: usize,
    /// `.csv` or `.pgm`.
    #[arg(long)]
    out: PathBuf,
}

/// Bad input from the user; maps to exit code 1.
#[derive(Debug)]
struct Invalid(String);

impl fmt::Display for Invalid {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Invalid {}

fn invalid(msg: impl Into<String>) -> anyhow::Error {
    Invalid(msg.into()).into()
}

fn exit_code(err: &anyhow::Error) -> u8 {
    if err.downcast_ref::<Invalid>().is_some() {
        return 1;
    }
    match err.downcast_ref::<mefem::Error>() {
        Some(
            mefem::Error::Config(_)
            | mefem::Error::InvalidArgument(_)
            | mefem::Error::Parse { .. },
        ) => 1,
        _ => 2,
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn resolve_seed(flag: Option<u64>) -> Result<Option<u64>> {
    if flag.is_some() {
        return Ok(flag);
    }
    match std::env::var("MEFEM_SEED") {
        Ok(v) => v
            .trim()
            .parse()
            .map(Some)
            .map_err(|_| invalid(format!("MEFEM_SEED must be an unsigned integer, got `{v}`"))),
        Err(_) => Ok(None),
    }
}

fn header(command: &str, seed: u64) {
    println!("# mefem {command} seed={seed}");
}

fn run(cli: Cli) -> Result<()> {
    let seed = resolve_seed(cli.seed)?;
    match cli.command {
        Command::Preprocess(a) => preprocess(a, seed.unwrap_or(0)),
        Command::Synth(a) => synth(a, seed.unwrap_or(0)),
        Command::Train(a) => train(a, seed),
        Command::Probe(a) => probe(a, seed.unwrap_or(0)),
        Command::MaskViz(a) => mask_viz(a, seed.unwrap_or(0)),
        Command::WeightsViz(a) => weights_viz(a, seed.unwrap_or(0)),
        Command::Coverage(a) => coverage(a, seed.unwrap_or(0)),
    }
}

fn parse_set(items: &[String]) -> Result<Vec<(String, String)>> {
    items
        .iter()
        .map(|s| {
            let (k, v) = s
                .split_once('=')
                .ok_or_else(|| invalid(format!("--set expects KEY=VALUE, got `{s}`")))?;
            Ok((k.trim().to_string(), v.trim().to_string()))
        })
        .collect()
}

fn preprocess(a: PreprocessArgs, seed: u64) -> Result<()> {
    header("preprocess", seed);
    let text = std::fs::read_to_string(&a.manifest)
        .map_err(|e| invalid(format!("cannot read manifest {}: {e}", a.manifest.display())))?;
    let base = a.manifest.parent().unwrap_or(Path::new("."));
    let records = parse_manifest(&text, base)?;
    let params = CropParams {
        min_side: a.min_side,
        output_size: a.image_size,
    };
    let summary = run_manifest(&records, &a.out, &params, a.workers)?;
    print!("{}", summary.to_text());
    Ok(())
}

fn synth(a: SynthArgs, seed: u64) -> Result<()> {
    header("synth", seed);
    let grid = GridSpec::from_image_size(a.image_size, a.patch_size)?;
    write_dataset(&SynthConfig::new(seed, grid), a.count, &a.out)?;
    println!("wrote {} images to {}", a.count, a.out.display());
    Ok(())
}

fn train_pairs(a: &TrainArgs, seed: Option<u64>) -> Result<Vec<(String, String)>> {
    let mut pairs = Vec::new();
    if let Some(path) = &a.config {
        let text = std::fs::read_to_string(path)
            .map_err(|e| invalid(format!("cannot read config file {}: {e}", path.display())))?;
        pairs.extend(mefem::kv::parse(&text).with_context(|| format!("in {}", path.display()))?);
    }
    if let Some(s) = seed {
        pairs.push(("seed".into(), s.to_string()));
    }
    let mut flag = |k: &str, v: Option<String>| {
        if let Some(v) = v {
            pairs.push((k.to_string(), v));
        }
    };
    flag("epochs", a.epochs.map(|v| v.to_string()));
    flag("batch_size", a.batch_size.map(|v| v.to_string()));
    flag("lr", a.lr.map(|v| v.to_string()));
    flag("model", a.model.clone());
    flag("masking", a.masking.clone());
    flag("cls_p_source", a.cls_p_source.map(|v| v.to_string()));
    flag("weight_scheme", a.weight_scheme.clone());
    flag("weight_radius", a.weight_radius.map(|v| v.to_string()));
    flag("weight_steepness", a.weight_steepness.map(|v| v.to_string()));
    flag("workers", a.workers.map(|v| v.to_string()));
    pairs.extend(parse_set(&a.set)?);
    Ok(pairs)
}

fn open_dataset(data: Option<&Path>, synth: usize, synth_seed: u64, grid: GridSpec) -> Result<Box<dyn Dataset>> {
    Ok(match data {
        Some(dir) => Box::new(ImageFolder::open(dir, grid)?),
        None => Box::new(SynthDataset::new(SynthConfig::new(synth_seed, grid), synth)),
    })
}

fn train(a: TrainArgs, seed: Option<u64>) -> Result<()> {
    let mut sink = DirSink::new(&a.out)?;
    let outcome = if let Some(path) = &a.resume {
        if a.config.is_some() || !a.set.is_empty() {
            return Err(invalid("--resume takes its configuration from the checkpoint"));
        }
        let ckpt = Checkpoint::load(path)?;
        let (trainer, _) = Trainer::restore::<f32>(&ckpt)?;
        let config = trainer.config().clone();
        header("train", config.seed);
        println!("# resuming from {} at step {}", path.display(), ckpt.step);
        print!("{}", config.to_kv());
        let n = a.synth.unwrap_or(trainer.dataset_len());
        let ds = open_dataset(a.data.as_deref(), n, a.synth_seed.unwrap_or(config.seed), config.grid())?;
        resume::<f32>(&ckpt, ds.as_ref(), &mut sink)?
    } else {
        let config = TrainConfig::from_pairs(&train_pairs(&a, seed)?)?;
        header("train", config.seed);
        print!("{}", config.to_kv());
        atomic_write(&a.out.join("config.txt"), config.to_kv().as_bytes())?;
        let n = a.synth.unwrap_or(2000);
        let ds = open_dataset(a.data.as_deref(), n, a.synth_seed.unwrap_or(config.seed), config.grid())?;
        train_loop::<f32>(config, ds.as_ref(), &mut sink)?
    };
    for e in &outcome.epochs {
        println!(
            "epoch {} mean_loss {:.6} steps {} collapse_indicator {:.6}",
            e.epoch, e.mean_loss, e.steps, e.collapse_indicator
        );
    }
    println!("checkpoint {}", sink.latest().display());
    Ok(())
}

/// Labels for the probe, plus the dataset they belong to.
fn probe_data(a: &ProbeArgs, grid: GridSpec, seed: u64) -> Result<(Box<dyn Dataset>, Vec<f64>)> {
    let pick = |attrs: &FaceAttributes| {
        attrs.get(&a.attribute).ok_or_else(|| {
            invalid(format!(
                "unknown attribute `{}`; expected one of {}",
                a.attribute,
                FaceAttributes::NAMES.join(", ")
            ))
        })
    };
    match &a.data {
        Some(dir) => {
            let folder = ImageFolder::open(dir, grid)?;
            let rows = read_attributes(&dir.join("attributes.csv"))?;
            let mut labels = Vec::with_capacity(folder.len());
            for p in folder.paths() {
                let name = p.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
                let (_, attrs) = rows
                    .iter()
                    .find(|(f, _)| *f == name)
                    .ok_or_else(|| invalid(format!("{name} has no row in attributes.csv")))?;
                labels.push(pick(attrs)?);
            }
            Ok((Box::new(folder), labels))
        }
        None => {
            let ds = SynthDataset::new(SynthConfig::new(seed, grid), a.synth);
            let labels = (0..a.synth).map(|i| pick(&ds.attributes(i))).collect::<Result<_>>()?;
            Ok((Box::new(ds), labels))
        }
    }
}

/// Equal-width bins over the observed range.
fn bin_labels(values: &[f64], classes: usize) -> Vec<f64> {
    let lo = values.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let width = (hi - lo) / classes as f64;
    values
        .iter()
        .map(|&v| {
            if width > 0.0 {
                (((v - lo) / width) as usize).min(classes - 1) as f64
            } else {
                0.0
            }
        })
        .collect()
}

fn probe(a: ProbeArgs, seed: u64) -> Result<()> {
    let mode = FeatureMode::parse(&a.features)?;
    let task = match a.classes {
        Some(k) => Task::Classification { classes: k },
        None => Task::Regression,
    };
    let mut base = ProbeConfig::new(mode, task, seed);
    if let Some(h) = &a.head {
        base.head = HeadKind::parse(h)?;
    }
    if let Some(e) = a.epochs {
        base.epochs = e;
    }
    if let Some(h) = a.hidden_dim {
        base.hidden_dim = h;
    }
    base.validate()?;
    if a.seeds == 0 {
        return Err(invalid("--seeds must be at least 1"));
    }
    let Some(path) = &a.checkpoint else {
        return Err(invalid("probe needs --checkpoint"));
    };
    header("probe", seed);

    let ckpt = Checkpoint::load(path)?;
    let (trainer, trained) = Trainer::restore::<f32>(&ckpt)?;
    let state = if a.random_init {
        trainer.init_state::<f32>()?
    } else {
        trained
    };
    let grid = trainer.config().grid();
    let (ds, raw) = probe_data(&a, grid, a.synth_seed.unwrap_or(seed + 1000))?;
    let labels = match task {
        Task::Classification { classes } if classes > 0 => bin_labels(&raw, classes),
        _ => raw,
    };
    let source = FrozenEncoder {
        encoder: trainer.encoder(),
        store: &state.teacher,
    };
    let pool = worker_pool(a.workers)?;
    let ids: Vec<usize> = (0..ds.len()).collect();
    let feats = extract(&source, ds.as_ref(), &ids, pool.as_ref())?;
    let which = if a.random_init { "random_init" } else { "trained" };
    base.label = format!("{}:{which}:{}", path.display(), a.attribute);

    for s in seed..seed + a.seeds {
        let cfg = ProbeConfig { seed: s, ..base.clone() };
        let fitted = fit_probe(&feats, &labels, &cfg)?;
        let report = fitted.report();
        println!("# probe seed={s} encoder={which} attribute={}", a.attribute);
        print!("{}", report.to_text());
        if let Some(out) = &a.out {
            report.append_to_csv(out)?;
        }
    }
    Ok(())
}

fn mask_config(m: &MaskArgs, seed: u64) -> Result<TrainConfig> {
    let mut pairs = vec![
        ("seed".to_string(), seed.to_string()),
        ("masking".to_string(), m.strategy.clone()),
        ("image_size".to_string(), m.image_size.to_string()),
        ("patch_size".to_string(), m.patch_size.to_string()),
    ];
    pairs.extend(parse_set(&m.set)?);
    Ok(TrainConfig::from_pairs(&pairs)?)
}

fn mask_viz(a: MaskVizArgs, seed: u64) -> Result<()> {
    header("mask-viz", seed);
    let cfg = mask_config(&a.mask, seed)?;
    let grid = cfg.grid();
    let strategy = cfg.mask_strategy();
    if let Some(dir) = &a.out {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    let mut rng = stream(seed, Purpose::Coverage, 1);
    let l = grid.side();
    for i in 0..a.count {
        let m = strategy.sample(&grid, &mut rng)?;
        let mut g = Array2::<f64>::zeros((l, l));
        for &p in m.source() {
            let (r, c) = grid.row_col(p);
            g[[r, c]] = 1.0;
        }
        println!("mask {i}: {} source, {} target", m.source().len(), m.target().len());
        for row in g.rows() {
            let line: String = row.iter().map(|&v| if v > 0.0 { '#' } else { '.' }).collect();
            println!("{line}");
        }
        if let Some(dir) = &a.out {
            write_grid(&dir.join(format!("mask_{i:03}.pgm")), &g)?;
        }
    }
    Ok(())
}

fn weights_viz(a: WeightsVizArgs, seed: u64) -> Result<()> {
    header("weights-viz", seed);
    let scheme = match a.scheme.as_str() {
        "circular" => WeightScheme::Circular,
        "uniform" => WeightScheme::Uniform,
        other => bail!(invalid(format!("unknown weight scheme `{other}`"))),
    };
    let config = WeightConfig {
        falloff_radius: a.radius,
        steepness: a.steepness,
        scheme,
    };
    let grid = GridSpec::from_image_size(a.image_size, a.patch_size)?;
    let w = WeightMatrix::build(&grid, &config)?;
    write_grid(&a.out, w.weights())?;
    let l = w.side();
    println!(
        "center {:.6} corner {:.6} -> {}",
        w.weights()[[l / 2, l / 2]],
        w.weights()[[0, 0]],
        a.out.display()
    );
    Ok(())
}

fn coverage(a: CoverageArgs, seed: u64) -> Result<()> {
    header("coverage", seed);
    let cfg = mask_config(&a.mask, seed)?;
    let mut rng = stream(seed, Purpose::Coverage, 0);
    let map = coverage_map(&cfg.mask_strategy(), &cfg.grid(), a.samples, &mut rng)?;
    write_grid(&a.out, &map.probs)?;
    println!(
        "strategy {} samples {} corner {:.4} center {:.4} -> {}",
        a.mask.strategy,
        a.samples,
        map.corner_mean(),
        map.center_mean(),
        a.out.display()
    );
    Ok(())
}
