//! Command-line surface over the library: dataset generation, training,
//! evaluation, attention export, and bank-size sweeps.
//!
//! Configuration is layered: an explicit flag beats the config file given
//! with `--config`, which beats the built-in default. Every effective value
//! is echoed to the log (`SAM_ATTN_LOG=info`, the default) so a run's full
//! configuration is always recoverable from its output.
//!
//! Exit codes: 0 on success, 2 for flag or config problems caught before
//! any real work starts, 1 for failures after that (unreadable files,
//! incompatible checkpoints, diverging runs).

use std::collections::BTreeSet;
use std::fmt::Display;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use clap::{Args, Parser, Subcommand};

use crate::attention::{cam, grad_cam_from_graph};
use crate::backbone::BackboneConfig;
use crate::bilinear::union_max;
use crate::checkpoint::{load_model, save_model};
use crate::config::ConfigMap;
use crate::data::{
    export_image_folder, generate_synthetic, load_image_folder, netpbm, subsample, Dataset,
    SplitSpec, SyntheticSpec,
};
use crate::error::Error;
use crate::heatmap::{write_heatmap, write_overlay};
use crate::logging;
use crate::sam::{predict_attention, TargetKind};
use crate::tensor::Tape;
use crate::trainer::{self, evaluate, train, Mode, Model, Seeds, TrainConfig};

// ── Exit codes ──────────────────────────────────────────────────────────────

/// Problems assembling the configuration exit 2; failures while running the
/// resolved job exit 1.
#[derive(Debug)]
enum Failure {
    Usage(String),
    Runtime(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Failure {
        Failure::Runtime(e)
    }
}

fn usage(message: impl Into<String>) -> Failure {
    Failure::Usage(message.into())
}

type CmdResult = std::result::Result<(), Failure>;

/// Entry point for the `sam-attn` binary; returns the process exit code.
pub fn run() -> u8 {
    if let Err(e) = logging::init_from_env() {
        eprintln!("error: {e}");
        return 2;
    }
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // clap renders help and version itself (exit 0) and usage
            // errors with exit 2.
            let _ = e.print();
            return e.exit_code().clamp(0, 255) as u8;
        }
    };
    let result = match cli.command {
        Command::GenData(args) => cmd_gen_data(args),
        Command::Train(args) => cmd_train(args),
        Command::Eval(args) => cmd_eval(args),
        Command::Attention(args) => cmd_attention(args),
        Command::SweepK(args) => cmd_sweep_k(args),
    };
    match result {
        Ok(()) => 0,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            2
        }
        Err(Failure::Runtime(e)) => {
            eprintln!("error: {e}");
            1
        }
    }
}

// ── Argument declarations ───────────────────────────────────────────────────

#[derive(Parser)]
#[command(
    name = "sam-attn",
    version,
    about = "Self-boosting attention training on a synthetic spurious-cue benchmark"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Render the synthetic benchmark to train/ and test/ image folders
    GenData(GenDataArgs),
    /// Train a model; writes model.ckpt and per-epoch metrics.csv
    Train(TrainArgs),
    /// Report a checkpoint's accuracy on a dataset
    Eval(EvalArgs),
    /// Export attention heatmaps for one image under a trained model
    Attention(AttentionArgs),
    /// Train the bilinear model across several bank sizes and seeds
    SweepK(SweepKArgs),
}

#[derive(Args)]
struct GenDataArgs {
    /// Directory to create with train/, test/, and manifest.txt
    #[arg(long)]
    out: PathBuf,
    /// Number of classes
    #[arg(long)]
    categories: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Flat `key = value` file; explicit flags override its entries
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Args)]
struct TrainArgs {
    /// Dataset root holding train/ and test/ image folders
    #[arg(long)]
    data: PathBuf,
    /// baseline, sam, fbp, or sam_bilinear
    #[arg(long)]
    mode: Option<String>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    momentum: Option<f64>,
    #[arg(long)]
    weight_decay: Option<f64>,
    /// Weight of the attention-fitting loss
    #[arg(long)]
    lambda: Option<f64>,
    /// Softmax temperature for attention normalization
    #[arg(long)]
    tau: Option<f64>,
    /// Attention filters in the bilinear bank
    #[arg(long)]
    k: Option<usize>,
    /// Fraction of training images kept per class
    #[arg(long)]
    label_proportion: Option<f64>,
    /// Keep only this many classes (seeded choice, applied to both splits)
    #[arg(long)]
    categories: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory for model.ckpt and metrics.csv
    #[arg(long)]
    out: Option<PathBuf>,
    /// Flat `key = value` file; explicit flags override its entries
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Args)]
struct EvalArgs {
    /// Checkpoint to evaluate
    checkpoint: PathBuf,
    /// Dataset root; its test/ split is used when present
    #[arg(long)]
    data: PathBuf,
    /// Class subset size the checkpoint was trained on
    #[arg(long)]
    categories: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Flat `key = value` file; explicit flags override its entries
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Args)]
struct AttentionArgs {
    /// Checkpoint to explain
    checkpoint: PathBuf,
    /// Image to explain (binary P5/P6 netpbm)
    image: PathBuf,
    /// Class index, or "pred" for the model's own prediction
    #[arg(default_value = "pred")]
    class: String,
    /// cam, gradcam, sam-pred, or union
    #[arg(long)]
    kind: String,
    /// Output directory for the map and overlay files
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct SweepKArgs {
    /// Dataset root holding train/ and test/ image folders
    #[arg(long)]
    data: PathBuf,
    /// Comma-separated bank sizes to sweep
    #[arg(long)]
    k: Option<String>,
    /// Training runs per bank size, at consecutive seeds
    #[arg(long)]
    repeats: Option<usize>,
    /// Run sweep rows on threads; row order in the CSV is unchanged
    #[arg(long)]
    parallel: bool,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    momentum: Option<f64>,
    #[arg(long)]
    weight_decay: Option<f64>,
    /// Weight of the attention-fitting loss
    #[arg(long)]
    lambda: Option<f64>,
    /// Softmax temperature for attention normalization
    #[arg(long)]
    tau: Option<f64>,
    /// Fraction of training images kept per class
    #[arg(long)]
    label_proportion: Option<f64>,
    /// Keep only this many classes (seeded choice, applied to both splits)
    #[arg(long)]
    categories: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory for sweep.csv
    #[arg(long)]
    out: Option<PathBuf>,
    /// Flat `key = value` file; explicit flags override its entries
    #[arg(long)]
    config: Option<PathBuf>,
}

// ── Flag/config resolution ──────────────────────────────────────────────────

/// Layered lookup shared by the subcommands. Tracks which config keys were
/// consulted so leftovers (typos, keys for a different command) are
/// rejected instead of silently ignored.
struct Settings {
    map: ConfigMap,
    used: BTreeSet<String>,
}

impl Settings {
    fn load(path: Option<&Path>) -> Result<Settings, Failure> {
        let map = match path {
            Some(p) => ConfigMap::load(p).map_err(|e| usage(e.to_string()))?,
            None => ConfigMap::new(),
        };
        Ok(Settings {
            map,
            used: BTreeSet::new(),
        })
    }

    fn lookup<T: FromStr>(&mut self, key: &str) -> Result<Option<T>, Failure> {
        self.used.insert(key.to_string());
        self.map.get_parsed(key).map_err(|e| usage(e.to_string()))
    }

    /// Flag, else config entry, else default; echoes the winner. A flag
    /// still claims its key, so overriding a config entry is not an error.
    fn resolve<T: FromStr + Display>(
        &mut self,
        flag: Option<T>,
        key: &str,
        default: T,
    ) -> Result<T, Failure> {
        self.used.insert(key.to_string());
        let value = match flag {
            Some(v) => v,
            None => self.lookup(key)?.unwrap_or(default),
        };
        log::info!("config {key} = {value}");
        Ok(value)
    }

    /// Like `resolve` without a default. Callers echo the effective value
    /// themselves once it is known (e.g. categories after the dataset loads).
    fn resolve_opt<T: FromStr>(&mut self, flag: Option<T>, key: &str) -> Result<Option<T>, Failure> {
        self.used.insert(key.to_string());
        match flag {
            Some(v) => Ok(Some(v)),
            None => self.lookup(key),
        }
    }

    fn finish(self) -> Result<(), Failure> {
        for key in self.map.keys() {
            if !self.used.contains(key) {
                return Err(usage(format!(
                    "config key '{key}' is not used by this command"
                )));
            }
        }
        Ok(())
    }
}

fn target_name(kind: TargetKind) -> &'static str {
    match kind {
        TargetKind::Cam => "cam",
        TargetKind::GradCam => "gradcam",
    }
}

fn parse_target(name: &str) -> Result<TargetKind, Failure> {
    match name {
        "cam" => Ok(TargetKind::Cam),
        "gradcam" => Ok(TargetKind::GradCam),
        other => Err(usage(format!(
            "unknown attention target '{other}' (expected cam or gradcam)"
        ))),
    }
}

/// Fills the optimizer and loss fields shared by `train` and `sweep-k`.
/// Returns the base seed, label proportion, and requested class count.
fn resolve_training(
    s: &mut Settings,
    cfg: &mut TrainConfig,
    epochs: Option<usize>,
    batch_size: Option<usize>,
    lr: Option<f64>,
    momentum: Option<f64>,
    weight_decay: Option<f64>,
    lambda: Option<f64>,
    tau: Option<f64>,
    label_proportion: Option<f64>,
    categories: Option<usize>,
    seed: Option<u64>,
) -> Result<(u64, f64, Option<usize>), Failure> {
    cfg.epochs = s.resolve(epochs, "epochs", cfg.epochs)?;
    cfg.batch_size = s.resolve(batch_size, "batch_size", cfg.batch_size)?;
    cfg.lr = s.resolve(lr, "lr", cfg.lr)?;
    cfg.momentum = s.resolve(momentum, "momentum", cfg.momentum)?;
    cfg.weight_decay = s.resolve(weight_decay, "weight_decay", cfg.weight_decay)?;
    cfg.sam.lambda = s.resolve(lambda, "lambda", cfg.sam.lambda)?;
    cfg.sam.tau = s.resolve(tau, "tau", cfg.sam.tau)?;
    let target = s.resolve(None, "target", target_name(cfg.sam.target_kind).to_string())?;
    cfg.sam.target_kind = parse_target(&target)?;
    let seed = s.resolve(seed, "seed", 0u64)?;
    cfg.seeds = Seeds::all(seed);
    let proportion = s.resolve(label_proportion, "label_proportion", 1.0)?;
    if !(proportion > 0.0 && proportion <= 1.0) {
        return Err(usage(format!(
            "label proportion must be in (0, 1], got {proportion}"
        )));
    }
    let categories = s.resolve_opt(categories, "categories")?;
    Ok((seed, proportion, categories))
}

/// Loads `root/train` and `root/test`, applies the same seeded class subset
/// to both, and thins only the train split to the label proportion.
fn load_splits(
    root: &Path,
    proportion: f64,
    categories: Option<usize>,
    seed: u64,
) -> Result<(Dataset, Dataset), Failure> {
    let train_dir = root.join("train");
    let test_dir = root.join("test");
    if !train_dir.is_dir() || !test_dir.is_dir() {
        return Err(Failure::Runtime(Error::contract(format!(
            "dataset root {} must hold train/ and test/ image folders",
            root.display()
        ))));
    }
    let train_raw = load_image_folder(&train_dir)?;
    let test_raw = load_image_folder(&test_dir)?;
    if train_raw.num_classes != test_raw.num_classes {
        return Err(Failure::Runtime(Error::contract(format!(
            "train split has {} classes but test split has {}",
            train_raw.num_classes, test_raw.num_classes
        ))));
    }
    let categories = categories.unwrap_or(train_raw.num_classes);
    log::info!("config categories = {categories}");
    let train_set = subsample(
        &train_raw,
        &SplitSpec {
            label_proportion: proportion,
            category_count: categories,
            seed,
        },
    )?;
    // The same seed picks the same classes and the same dense relabeling on
    // both splits; the test split always keeps every image.
    let test_set = subsample(
        &test_raw,
        &SplitSpec {
            label_proportion: 1.0,
            category_count: categories,
            seed,
        },
    )?;
    Ok((train_set, test_set))
}

fn create_dir(path: &Path) -> Result<(), Failure> {
    std::fs::create_dir_all(path).map_err(|e| Failure::Runtime(Error::io(path, e)))
}

fn write_text(path: &Path, text: &str) -> Result<(), Failure> {
    std::fs::write(path, text).map_err(|e| Failure::Runtime(Error::io(path, e)))
}

// ── gen-data ────────────────────────────────────────────────────────────────

fn cmd_gen_data(args: GenDataArgs) -> CmdResult {
    let mut s = Settings::load(args.config.as_deref())?;
    let seed = s.resolve(args.seed, "seed", 0u64)?;
    let desk = SyntheticSpec::desk(seed);
    let spec = SyntheticSpec {
        num_classes: s.resolve(args.categories, "categories", desk.num_classes)?,
        images_per_class: s.resolve(None, "images_per_class", desk.images_per_class)?,
        image_size: s.resolve(None, "image_size", desk.image_size)?,
        patch_size: s.resolve(None, "patch_size", desk.patch_size)?,
        spurious_correlation: s.resolve(None, "spurious_correlation", desk.spurious_correlation)?,
        noise_level: s.resolve(None, "noise_level", desk.noise_level)?,
        seed,
    };
    s.finish()?;
    spec.validate().map_err(|e| usage(e.to_string()))?;
    log::info!("config out = {}", args.out.display());

    let (train, test) = generate_synthetic(&spec)?;
    create_dir(&args.out)?;
    export_image_folder(&args.out.join("train"), &train)?;
    export_image_folder(&args.out.join("test"), &test)?;

    // The manifest is itself a valid config file: pointing a later
    // `gen-data --config` at it reproduces the dataset byte for byte.
    let mut manifest = ConfigMap::new();
    manifest.set("categories", spec.num_classes);
    manifest.set("images_per_class", spec.images_per_class);
    manifest.set("image_size", spec.image_size);
    manifest.set("patch_size", spec.patch_size);
    manifest.set("spurious_correlation", spec.spurious_correlation);
    manifest.set("noise_level", spec.noise_level);
    manifest.set("seed", spec.seed);
    manifest.save(&args.out.join("manifest.txt"))?;

    println!(
        "generated {} train + {} test images in {}",
        train.len(),
        test.len(),
        args.out.display()
    );
    Ok(())
}

// ── train ───────────────────────────────────────────────────────────────────

fn cmd_train(args: TrainArgs) -> CmdResult {
    let mut s = Settings::load(args.config.as_deref())?;
    let mode_name = s.resolve(args.mode, "mode", "baseline".to_string())?;
    let mode = Mode::from_str(&mode_name).map_err(|e| usage(e.to_string()))?;
    let mut cfg = TrainConfig::new(mode);
    cfg.k = s.resolve(args.k, "k", cfg.k)?;
    let (seed, proportion, categories) = resolve_training(
        &mut s,
        &mut cfg,
        args.epochs,
        args.batch_size,
        args.lr,
        args.momentum,
        args.weight_decay,
        args.lambda,
        args.tau,
        args.label_proportion,
        args.categories,
        args.seed,
    )?;
    s.finish()?;
    cfg.validate().map_err(|e| usage(e.to_string()))?;
    let out = args.out.unwrap_or_else(|| PathBuf::from("."));
    log::info!("config data = {}", args.data.display());
    log::info!("config out = {}", out.display());

    let (train_set, test_set) = load_splits(&args.data, proportion, categories, seed)?;
    log::info!(
        "training on {} images over {} classes, evaluating on {}",
        train_set.len(),
        train_set.num_classes,
        test_set.len()
    );

    let mut model = Model::new(&cfg, BackboneConfig::desk(train_set.num_classes, seed))?;
    let metrics = train(&mut model, &train_set, &test_set, &cfg)?;

    create_dir(&out)?;
    save_model(&out.join("model.ckpt"), &model)?;
    write_text(&out.join("metrics.csv"), &metrics.to_csv())?;
    log::info!("wrote {} and {}", out.join("model.ckpt").display(), out.join("metrics.csv").display());
    if let Some(acc) = metrics.final_test_acc() {
        println!("final test_accuracy = {acc:.6}");
    }
    Ok(())
}

// ── eval ────────────────────────────────────────────────────────────────────

fn cmd_eval(args: EvalArgs) -> CmdResult {
    let mut s = Settings::load(args.config.as_deref())?;
    let seed = s.resolve(args.seed, "seed", 0u64)?;
    let categories = s.resolve_opt(args.categories, "categories")?;
    s.finish()?;

    let model = load_model(&args.checkpoint)?;
    // A dataset root from gen-data holds train/ and test/; score the held
    // out split. A bare image folder is used as is.
    let test_dir = args.data.join("test");
    let dir = if test_dir.is_dir() { test_dir } else { args.data.clone() };
    log::info!("config data = {}", dir.display());
    let raw = load_image_folder(&dir)?;
    let categories = categories.unwrap_or(raw.num_classes);
    log::info!("config categories = {categories}");
    let dataset = subsample(
        &raw,
        &SplitSpec {
            label_proportion: 1.0,
            category_count: categories,
            seed,
        },
    )?;
    if dataset.num_classes != model.num_classes() {
        return Err(Failure::Runtime(Error::contract(format!(
            "checkpoint classifies {} classes but the dataset has {}",
            model.num_classes(),
            dataset.num_classes
        ))));
    }
    let acc = evaluate(&model, &dataset)?;
    log::info!("evaluated {} images", dataset.len());
    println!("test_accuracy = {acc:.6}");
    Ok(())
}

// ── attention ───────────────────────────────────────────────────────────────

enum ClassChoice {
    Predicted,
    Index(usize),
}

fn cmd_attention(args: AttentionArgs) -> CmdResult {
    let kind = args.kind.as_str();
    if !matches!(kind, "cam" | "gradcam" | "sam-pred" | "union") {
        return Err(usage(format!(
            "unknown map kind '{kind}' (expected cam, gradcam, sam-pred, or union)"
        )));
    }
    let class = if args.class == "pred" {
        ClassChoice::Predicted
    } else {
        ClassChoice::Index(args.class.parse().map_err(|_| {
            usage(format!(
                "class must be an index or 'pred', got '{}'",
                args.class
            ))
        })?)
    };
    log::info!("config kind = {kind}");
    log::info!("config class = {}", args.class);
    log::info!("config out = {}", args.out.display());

    let model = load_model(&args.checkpoint)?;
    let raw = netpbm::read(&args.image)?;
    let input = model.backbone.config.input_size;
    if raw.channels != input.2 {
        return Err(Failure::Runtime(Error::contract(format!(
            "model expects {} channels, image {} has {}",
            input.2,
            args.image.display(),
            raw.channels
        ))));
    }
    if raw.height < input.0 || raw.width < input.1 {
        return Err(Failure::Runtime(Error::contract(format!(
            "image {} is {}x{}, smaller than the {}x{} model input",
            args.image.display(),
            raw.height,
            raw.width,
            input.0,
            input.1
        ))));
    }
    let pixels: Vec<f64> = raw.data.iter().map(|&b| b as f64 / 255.0).collect();
    let cropped =
        trainer::center_crop_window(&pixels, (raw.height, raw.width, raw.channels), input);

    let mut tape = Tape::new();
    // Staged trainable so the gradient-based map has something to pull on.
    let staged = model.stage(&mut tape, true)?;
    let image = tape.constant(cropped.clone(), [input.0, input.1, input.2])?;
    let fwd = staged.forward(&mut tape, image)?;
    let y = match class {
        ClassChoice::Predicted => trainer::argmax(tape.values(fwd.logits)),
        ClassChoice::Index(i) => {
            if i >= model.num_classes() {
                return Err(Failure::Runtime(Error::param(format!(
                    "class {i} out of range for {} classes",
                    model.num_classes()
                ))));
            }
            i
        }
    };
    log::info!("explaining class {y}");

    let map = match kind {
        "cam" => cam(&mut tape, fwd.features, &model.head, y)?,
        "gradcam" => grad_cam_from_graph(&mut tape, fwd.features, fwd.logits, y)?,
        "sam-pred" => {
            let proj = staged.proj.ok_or_else(|| {
                Error::contract("checkpoint has no attention projection; train with mode sam")
            })?;
            predict_attention(&mut tape, fwd.features, proj)?
        }
        _ => {
            let maps = fwd.maps.ok_or_else(|| {
                Error::contract("checkpoint has no projection bank; train with a bilinear mode")
            })?;
            union_max(&mut tape, maps)?
        }
    };

    create_dir(&args.out)?;
    let dims = tape.shape(map.grid).dims();
    let grid = (dims[0], dims[1]);
    let values = tape.values(map.grid).to_vec();
    let map_path = args.out.join(format!("{kind}.pgm"));
    write_heatmap(&map_path, &values, grid)?;
    let overlay_path = args.out.join(format!("{kind}_overlay.ppm"));
    write_overlay(&overlay_path, &cropped, input, &values, grid)?;
    let mut count = 2;

    // The union map is a max over bank filters; also export each filter so
    // their division of labor is visible.
    if kind == "union" {
        let maps = fwd.maps.expect("union kind checked above");
        let k = tape.shape(maps).dims()[2];
        for filter in 0..k {
            let slice = tape.channel_slice(maps, filter)?;
            let vals = tape.values(slice).to_vec();
            write_heatmap(&args.out.join(format!("union_part_{filter:02}.pgm")), &vals, grid)?;
            count += 1;
        }
    }
    println!("wrote {count} files to {}", args.out.display());
    Ok(())
}

// ── sweep-k ─────────────────────────────────────────────────────────────────

fn parse_k_list(text: &str) -> Result<Vec<usize>, Failure> {
    let mut out = Vec::new();
    for part in text.split(',') {
        let part = part.trim();
        let k: usize = part
            .parse()
            .map_err(|_| usage(format!("bank size '{part}' is not a positive integer")))?;
        if k == 0 {
            return Err(usage("bank sizes must be at least 1"));
        }
        if out.contains(&k) {
            return Err(usage(format!("bank size {k} is listed twice")));
        }
        out.push(k);
    }
    Ok(out)
}

fn cmd_sweep_k(args: SweepKArgs) -> CmdResult {
    let mut s = Settings::load(args.config.as_deref())?;
    let list_text = s.resolve(args.k, "k", "1,4,8,16,32".to_string())?;
    let k_values = parse_k_list(&list_text)?;
    let repeats = s.resolve(args.repeats, "repeats", 3usize)?;
    if repeats == 0 {
        return Err(usage("repeats must be at least 1"));
    }
    let mut cfg = TrainConfig::new(Mode::SamBilinear);
    let (seed, proportion, categories) = resolve_training(
        &mut s,
        &mut cfg,
        args.epochs,
        args.batch_size,
        args.lr,
        args.momentum,
        args.weight_decay,
        args.lambda,
        args.tau,
        args.label_proportion,
        args.categories,
        args.seed,
    )?;
    s.finish()?;
    cfg.validate().map_err(|e| usage(e.to_string()))?;
    let out = args.out.unwrap_or_else(|| PathBuf::from("."));
    log::info!("config parallel = {}", args.parallel);
    log::info!("config data = {}", args.data.display());
    log::info!("config out = {}", out.display());

    let (train_set, test_set) = load_splits(&args.data, proportion, categories, seed)?;
    let num_classes = train_set.num_classes;

    let rows: Vec<(usize, u64)> = k_values
        .iter()
        .flat_map(|&k| (0..repeats as u64).map(move |r| (k, seed + r)))
        .collect();

    let run_row = |k: usize, row_seed: u64| -> crate::error::Result<f64> {
        let mut row_cfg = cfg.clone();
        row_cfg.k = k;
        row_cfg.seeds = Seeds::all(row_seed);
        let mut model = Model::new(&row_cfg, BackboneConfig::desk(num_classes, row_seed))?;
        let metrics = train(&mut model, &train_set, &test_set, &row_cfg)?;
        Ok(metrics.final_test_acc().unwrap_or(0.0))
    };

    // Rows are fully independent (each owns its model and tape; the datasets
    // are shared read-only), so threading cannot change any result.
    let accs: Vec<crate::error::Result<f64>> = if args.parallel {
        std::thread::scope(|scope| {
            let run_row = &run_row;
            let handles: Vec<_> = rows
                .iter()
                .map(|&(k, rs)| scope.spawn(move || run_row(k, rs)))
                .collect();
            handles
                .into_iter()
                .map(|h| {
                    h.join()
                        .unwrap_or_else(|_| Err(Error::contract("a sweep thread panicked")))
                })
                .collect()
        })
    } else {
        rows.iter().map(|&(k, rs)| run_row(k, rs)).collect()
    };

    let mut csv = String::from("k,seed,test_acc\n");
    for (&(k, rs), acc) in rows.iter().zip(accs) {
        let acc = acc?;
        log::info!("k = {k} seed = {rs} test_acc = {acc:.6}");
        csv.push_str(&format!("{k},{rs},{acc:.6}\n"));
    }
    create_dir(&out)?;
    let path = out.join("sweep.csv");
    write_text(&path, &csv)?;
    println!("wrote {}", path.display());
    Ok(())
}

// ── Tests ───────────────────────────────────────────────────────────────────
