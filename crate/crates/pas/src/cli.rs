//! The `pas` command line: thin orchestration over the library modules.
//!
//! Subcommands: `synth`, `train`, `search`, `attack`, `eval`, `attribute`.
//! Every run writes a JSON manifest (resolved configuration, seeds, SHA-256
//! hashes of inputs) next to its outputs, and refuses to overwrite existing
//! artifacts unless `--force` is given.
//!
//! Exit codes: 0 success, 2 configuration or format errors, 3 numerical
//! failure (NaN detected mid-pass).

use crate::attack::{attack_success_rate, ifgsm, load_batch, save_batch, AttackConfig};
use crate::data::{export_dir, ingest_dir, split_dataset, synthetic_dataset, DatasetSplits, SyntheticConfig};
use crate::eval::{export_heatmap, integrated_gradients, AttributionConfig};
use crate::model::{
    build_model, load_checkpoint, save_checkpoint, train, ArchName, ArchitectureSpec,
    TrainConfig,
};
use crate::reparam::PathConfig;
use crate::search::{
    run_search, save_search_artifacts, HyperbandSettings, SamplerKind, SearchConfig, TpeParams,
};
use crate::{Error, Result};
use clap::{Parser, Subcommand};
use serde_json::json;
use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

#[derive(Debug, Parser)]
#[command(name = "pas", version, about = "Backpropagation path search for transferable adversarial attacks")]
pub struct Cli {
    /// Optional key = value config file; flags override file values.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Global seed driving splits, initialization, and samplers.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads for attack crafting and trial evaluation.
    #[arg(long, global = true)]
    pub workers: Option<usize>,
    /// Overwrite existing output artifacts.
    #[arg(long, global = true)]
    pub force: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate the synthetic pattern dataset as an IDX pair.
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        examples: Option<usize>,
        #[arg(long)]
        image_size: Option<usize>,
        #[arg(long)]
        noise: Option<f64>,
    },
    /// Train a desk model on an IDX dataset directory.
    Train {
        #[arg(long)]
        arch: String,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Comma-separated stage widths, e.g. 16,32,64.
        #[arg(long)]
        widths: Option<String>,
        #[arg(long)]
        blocks: Option<usize>,
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
        /// Model name recorded in reports; defaults to the output file stem.
        #[arg(long)]
        name: Option<String>,
    },
    /// Search for a transferable backpropagation path.
    Search {
        #[arg(long)]
        surrogate: PathBuf,
        #[arg(long)]
        validation: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        trials: Option<usize>,
        #[arg(long)]
        eval_n: Option<usize>,
        #[arg(long)]
        eps: Option<f64>,
        /// tpe or random.
        #[arg(long)]
        sampler: Option<String>,
        #[arg(long)]
        hyperband_eta: Option<usize>,
        #[arg(long)]
        hyperband_min_resource: Option<usize>,
        #[arg(long)]
        no_hyperband: bool,
    },
    /// Craft an adversarial batch against a surrogate through a path.
    Attack {
        #[arg(long)]
        surrogate: PathBuf,
        /// Path file; omitted means the identity path.
        #[arg(long)]
        path: Option<PathBuf>,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        eps: Option<f64>,
        #[arg(long)]
        steps: Option<usize>,
        #[arg(long)]
        step_size: Option<f64>,
        /// Momentum decay μ; enables momentum accumulation.
        #[arg(long)]
        mi: Option<f64>,
        /// Diverse-input probability p; enables the resize-pad transform.
        #[arg(long)]
        di: Option<f64>,
        #[arg(long)]
        di_min_scale: Option<f64>,
        /// Number of test examples to attack (prefix of the test split).
        #[arg(long)]
        limit: Option<usize>,
    },
    /// Score a persisted batch against victim checkpoints.
    Eval {
        #[arg(long)]
        batch: PathBuf,
        #[arg(long, num_args = 1.., required = true)]
        victims: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Integrated-gradients attribution heatmap for one test image.
    Attribute {
        #[arg(long)]
        model: PathBuf,
        /// Path file; omitted means the identity path.
        #[arg(long)]
        path: Option<PathBuf>,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        index: usize,
        #[arg(long)]
        out: PathBuf,
        /// Attribution target class; defaults to the example's label.
        #[arg(long)]
        target: Option<usize>,
        #[arg(long)]
        ig_steps: Option<usize>,
    },
}

/// Values from the optional `key = value` config file.
#[derive(Debug, Default, Clone)]
pub struct FileConfig(BTreeMap<String, String>);

impl FileConfig {
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let Some(path) = path else {
            return Ok(FileConfig::default());
        };
        let text = std::fs::read_to_string(path)?;
        let mut map = BTreeMap::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(Error::Configuration(format!(
                    "config line {} is not `key = value`: {line}",
                    lineno + 1
                )));
            };
            map.insert(key.trim().to_string(), value.trim().to_string());
        }
        Ok(FileConfig(map))
    }

    /// flag > file > default
    pub fn resolve<T: std::str::FromStr + Clone>(
        &self,
        flag: Option<T>,
        key: &str,
        default: T,
    ) -> Result<T> {
        if let Some(v) = flag {
            return Ok(v);
        }
        match self.0.get(key) {
            Some(raw) => raw.parse::<T>().map_err(|_| {
                Error::Configuration(format!("config key `{key}` has unparsable value `{raw}`"))
            }),
            None => Ok(default),
        }
    }
}

fn sha256_file(path: &Path) -> Result<String> {
    use sha2::{Digest, Sha256};
    let bytes = std::fs::read(path)?;
    Ok(Sha256::digest(&bytes)
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect())
}

fn ensure_output(path: &Path, force: bool) -> Result<()> {
    if path.exists() && !force {
        return Err(Error::Configuration(format!(
            "output `{}` exists; pass --force to overwrite",
            path.display()
        )));
    }
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent)?;
        }
    }
    Ok(())
}

fn write_manifest(
    out: &Path,
    subcommand: &str,
    seed: u64,
    config: serde_json::Value,
    inputs: &[(&str, &Path)],
    outputs: &[&Path],
) -> Result<()> {
    let mut hashed = serde_json::Map::new();
    for (label, path) in inputs {
        hashed.insert(
            format!("{label}:{}", path.display()),
            json!(sha256_file(path)?),
        );
    }
    let manifest = json!({
        "subcommand": subcommand,
        "seed": seed,
        "config": config,
        "inputs": hashed,
        "outputs": outputs.iter().map(|p| p.display().to_string()).collect::<Vec<_>>(),
    });
    std::fs::write(out, serde_json::to_string_pretty(&manifest).unwrap() + "\n")?;
    Ok(())
}

fn dataset_inputs(dir: &Path) -> Vec<(&'static str, PathBuf)> {
    vec![
        ("data", dir.join(crate::data::IDX_IMAGE_FILE)),
        ("data", dir.join(crate::data::IDX_LABEL_FILE)),
    ]
}

fn load_splits(dir: &Path, seed: u64) -> Result<DatasetSplits> {
    let data = ingest_dir(dir)?;
    split_dataset(&data, 0.8, 0.1, seed)
}

fn parse_widths(raw: &str) -> Result<Vec<usize>> {
    raw.split(',')
        .map(|p| {
            p.trim()
                .parse::<usize>()
                .map_err(|_| Error::Configuration(format!("bad width `{p}` in `{raw}`")))
        })
        .collect()
}

/// Parses argv-style arguments and runs them; library-level entry used by
/// both the binary and the tests.
pub fn run_from<I, T>(args: I) -> Result<()>
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = Cli::try_parse_from(args)
        .map_err(|e| Error::Configuration(e.to_string()))?;
    run(cli)
}

/// Binary entry point: returns the process exit code.
pub fn main_entry() -> i32 {
    let cli = match Cli::try_parse_from(std::env::args_os()) {
        Ok(cli) => cli,
        Err(e) => {
            // clap renders its own help/version output
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match run(cli) {
        Ok(()) => 0,
        Err(err) => {
            eprintln!("error: {err}");
            match err {
                Error::Numerical(_) => 3,
                _ => 2,
            }
        }
    }
}

pub fn run(cli: Cli) -> Result<()> {
    let file = FileConfig::load(cli.config.as_deref())?;
    let seed = file.resolve(cli.seed, "seed", 42u64)?;
    let workers = file.resolve(cli.workers, "workers", 1usize)?.max(1);
    let force = cli.force;

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| Error::Configuration(format!("could not build worker pool: {e}")))?;
    pool.install(|| dispatch(cli.command, &file, seed, force))
}

fn dispatch(command: Command, file: &FileConfig, seed: u64, force: bool) -> Result<()> {
    match command {
        Command::Synth {
            out,
            examples,
            image_size,
            noise,
        } => cmd_synth(file, seed, force, &out, examples, image_size, noise),
        Command::Train {
            arch,
            data,
            out,
            widths,
            blocks,
            epochs,
            batch_size,
            lr,
            momentum,
            weight_decay,
            name,
        } => cmd_train(
            file, seed, force, &arch, &data, &out, widths, blocks, epochs, batch_size, lr,
            momentum, weight_decay, name,
        ),
        Command::Search {
            surrogate,
            validation,
            data,
            out,
            trials,
            eval_n,
            eps,
            sampler,
            hyperband_eta,
            hyperband_min_resource,
            no_hyperband,
        } => cmd_search(
            file,
            seed,
            force,
            &surrogate,
            &validation,
            &data,
            &out,
            trials,
            eval_n,
            eps,
            sampler,
            hyperband_eta,
            hyperband_min_resource,
            no_hyperband,
        ),
        Command::Attack {
            surrogate,
            path,
            data,
            out,
            eps,
            steps,
            step_size,
            mi,
            di,
            di_min_scale,
            limit,
        } => cmd_attack(
            file,
            seed,
            force,
            &surrogate,
            path.as_deref(),
            &data,
            &out,
            eps,
            steps,
            step_size,
            mi,
            di,
            di_min_scale,
            limit,
        ),
        Command::Eval { batch, victims, out } => cmd_eval(seed, force, &batch, &victims, &out),
        Command::Attribute {
            model,
            path,
            data,
            index,
            out,
            target,
            ig_steps,
        } => cmd_attribute(
            file,
            seed,
            force,
            &model,
            path.as_deref(),
            &data,
            index,
            &out,
            target,
            ig_steps,
        ),
    }
}

fn cmd_synth(
    file: &FileConfig,
    seed: u64,
    force: bool,
    out: &Path,
    examples: Option<usize>,
    image_size: Option<usize>,
    noise: Option<f64>,
) -> Result<()> {
    let defaults = SyntheticConfig::default();
    let cfg = SyntheticConfig {
        examples: file.resolve(examples, "examples", defaults.examples)?,
        image_size: file.resolve(image_size, "image_size", defaults.image_size)?,
        noise_sigma: file.resolve(noise, "noise", defaults.noise_sigma)?,
        ..defaults
    };
    let images_file = out.join(crate::data::IDX_IMAGE_FILE);
    ensure_output(&images_file, force)?;
    let data = synthetic_dataset(&cfg)?;
    export_dir(&data, out)?;
    write_manifest(
        &out.join("manifest.json"),
        "synth",
        seed,
        json!({
            "examples": cfg.examples,
            "image_size": cfg.image_size,
            "noise_sigma": cfg.noise_sigma,
        }),
        &[],
        &[&images_file, &out.join(crate::data::IDX_LABEL_FILE)],
    )?;
    println!(
        "synth: wrote {} examples of {}x{} to {}",
        cfg.examples,
        cfg.image_size,
        cfg.image_size,
        out.display()
    );
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn cmd_train(
    file: &FileConfig,
    seed: u64,
    force: bool,
    arch: &str,
    data_dir: &Path,
    out: &Path,
    widths: Option<String>,
    blocks: Option<usize>,
    epochs: Option<usize>,
    batch_size: Option<usize>,
    lr: Option<f64>,
    momentum: Option<f64>,
    weight_decay: Option<f64>,
    name: Option<String>,
) -> Result<()> {
    ensure_output(out, force)?;
    let arch_name = ArchName::parse(arch)?;
    let widths = parse_widths(&file.resolve(widths, "widths", "16,32".to_string())?)?;
    let blocks = file.resolve(blocks, "blocks", 1usize)?;
    let splits = load_splits(data_dir, seed)?;
    let shape = splits.train.example_shape();
    let spec = match arch_name {
        ArchName::PlainCnn => ArchitectureSpec::plain_cnn(
            (shape[0], shape[1], shape[2]),
            splits.train.class_count,
            &widths,
        ),
        ArchName::MiniResnet => ArchitectureSpec::mini_resnet(
            (shape[0], shape[1], shape[2]),
            splits.train.class_count,
            &widths,
            blocks,
        ),
    };
    let train_cfg = TrainConfig {
        epochs: file.resolve(epochs, "epochs", 4)?,
        batch_size: file.resolve(batch_size, "batch_size", 64)?,
        learning_rate: file.resolve(lr, "lr", 0.05)?,
        momentum: file.resolve(momentum, "momentum", 0.9)?,
        weight_decay: file.resolve(weight_decay, "weight_decay", 1e-4)?,
        seed,
    };
    let mut model = build_model(&spec, seed)?;
    model.name = name.unwrap_or_else(|| {
        out.file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| arch.to_string())
    });
    let report = train(&mut model, &splits.train, &splits.validation, &train_cfg)?;
    for m in &report.epochs {
        println!(
            "train[{}] epoch {} loss {:.4} heldout acc {:.4}",
            model.name, m.epoch, m.train_loss, m.heldout_accuracy
        );
    }
    let test_acc = crate::model::evaluate_accuracy(&model, &splits.test)?;
    println!("train[{}] test accuracy {:.4}", model.name, test_acc);
    save_checkpoint(&model, out)?;
    let inputs = dataset_inputs(data_dir);
    let input_refs: Vec<(&str, &Path)> = inputs.iter().map(|(l, p)| (*l, p.as_path())).collect();
    write_manifest(
        &out.with_extension("manifest.json"),
        "train",
        seed,
        json!({
            "arch": spec,
            "train": train_cfg,
            "final_heldout_accuracy": report.final_accuracy,
            "test_accuracy": test_acc,
        }),
        &input_refs,
        &[out],
    )?;
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn cmd_search(
    file: &FileConfig,
    seed: u64,
    force: bool,
    surrogate_path: &Path,
    validation_path: &Path,
    data_dir: &Path,
    out: &Path,
    trials: Option<usize>,
    eval_n: Option<usize>,
    eps: Option<f64>,
    sampler: Option<String>,
    hyperband_eta: Option<usize>,
    hyperband_min_resource: Option<usize>,
    no_hyperband: bool,
) -> Result<()> {
    ensure_output(&out.join("best.path"), force)?;
    let surrogate = load_checkpoint(surrogate_path)?;
    let validation = load_checkpoint(validation_path)?;
    if surrogate.arch().input_shape != validation.arch().input_shape
        || surrogate.arch().class_count != validation.arch().class_count
    {
        return Err(Error::Configuration(format!(
            "surrogate {:?}/{} and validation {:?}/{} disagree on input shape or classes",
            surrogate.arch().input_shape,
            surrogate.arch().class_count,
            validation.arch().input_shape,
            validation.arch().class_count,
        )));
    }
    let splits = load_splits(data_dir, seed)?;
    let cfg = SearchConfig {
        trials: file.resolve(trials, "trials", 2000)?,
        eval_n: file.resolve(eval_n, "eval_n", 256)?,
        surrogate: surrogate.name.clone(),
        validation: validation.name.clone(),
        epsilon: file.resolve(eps, "eps", 0.1)?,
        seed,
        sampler: SamplerKind::parse(&file.resolve(sampler, "sampler", "tpe".to_string())?)?,
        hyperband: HyperbandSettings {
            enabled: !no_hyperband,
            eta: file.resolve(hyperband_eta, "hyperband_eta", 4)?,
            min_resource: file.resolve(hyperband_min_resource, "hyperband_min_resource", 16)?,
        },
        tpe: TpeParams::default(),
        significance_level: 0.95,
    };
    let outcome = run_search(&cfg, &surrogate, &validation, &splits.validation)?;
    std::fs::create_dir_all(out)?;
    save_search_artifacts(&outcome, surrogate.sites(), out)?;
    println!(
        "search: best trial {} score {:.4} ({} completed, {} pruned, window {})",
        outcome.best_trial,
        outcome.best_score,
        outcome.history.completed().count(),
        outcome.history.trials.len() - outcome.history.completed().count(),
        outcome.history.window.members.len(),
    );
    let mut inputs = vec![
        ("surrogate", surrogate_path.to_path_buf()),
        ("validation", validation_path.to_path_buf()),
    ];
    inputs.extend(dataset_inputs(data_dir));
    let input_refs: Vec<(&str, &Path)> = inputs.iter().map(|(l, p)| (*l, p.as_path())).collect();
    write_manifest(
        &out.join("manifest.json"),
        "search",
        seed,
        json!({
            "search": cfg,
            "best_trial": outcome.best_trial,
            "best_score": outcome.best_score,
        }),
        &input_refs,
        &[&out.join("best.path"), &out.join("history.csv")],
    )?;
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn cmd_attack(
    file: &FileConfig,
    seed: u64,
    force: bool,
    surrogate_path: &Path,
    path_file: Option<&Path>,
    data_dir: &Path,
    out: &Path,
    eps: Option<f64>,
    steps: Option<usize>,
    step_size: Option<f64>,
    mi: Option<f64>,
    di: Option<f64>,
    di_min_scale: Option<f64>,
    limit: Option<usize>,
) -> Result<()> {
    ensure_output(out, force)?;
    let surrogate = load_checkpoint(surrogate_path)?;
    let path = match path_file {
        Some(p) => {
            let path = PathConfig::read_from_file(p)?;
            path.validate_for(surrogate.sites())?;
            path
        }
        None => surrogate.identity_path(),
    };
    let splits = load_splits(data_dir, seed)?;
    let limit = file
        .resolve(limit, "limit", splits.test.len())?
        .min(splits.test.len());
    let subset = splits.test.take(limit)?;
    let cfg = AttackConfig {
        epsilon: file.resolve(eps, "eps", 0.1)?,
        step_size: step_size
            .map(Some)
            .unwrap_or_else(|| file.resolve(None, "step_size", -1.0).ok().filter(|v| *v > 0.0)),
        steps: file.resolve(steps, "steps", 10)?,
        momentum_decay: file.resolve(mi, "mi", 0.0)?,
        di_probability: file.resolve(di, "di", 0.0)?,
        di_min_scale: file.resolve(di_min_scale, "di_min_scale", 0.875)?,
        bounds: (0.0, 1.0),
        seed,
    };
    let batch = ifgsm(&surrogate, &path, &subset.images, &subset.labels, &cfg)?;
    let whitebox = batch.success.iter().filter(|&&s| s).count() as f64 / batch.len() as f64;
    println!(
        "attack: {} examples, white-box ASR {:.4}, constraint violations {}",
        batch.len(),
        whitebox,
        batch.constraint_violations
    );
    let path_hash = path.content_hash(surrogate.sites())?;
    save_batch(&batch, &cfg, &path_hash, &surrogate.name, out)?;
    let mut inputs = vec![("surrogate", surrogate_path.to_path_buf())];
    if let Some(p) = path_file {
        inputs.push(("path", p.to_path_buf()));
    }
    inputs.extend(dataset_inputs(data_dir));
    let input_refs: Vec<(&str, &Path)> = inputs.iter().map(|(l, p)| (*l, p.as_path())).collect();
    write_manifest(
        &out.with_extension("manifest.json"),
        "attack",
        seed,
        json!({
            "attack": cfg,
            "path_sha256": path_hash,
            "examples": batch.len(),
            "whitebox_asr": whitebox,
        }),
        &input_refs,
        &[out],
    )?;
    Ok(())
}

fn cmd_eval(seed: u64, force: bool, batch_path: &Path, victims: &[PathBuf], out: &Path) -> Result<()> {
    ensure_output(out, force)?;
    let (batch, header) = load_batch(batch_path)?;
    let mut csv = format!(
        "# eps={} steps={} surrogate={} path={}\n",
        header.attack.epsilon, header.attack.steps, header.surrogate, header.path_sha256
    );
    let mut names = Vec::new();
    let mut cells = Vec::new();
    for victim_path in victims {
        let victim = load_checkpoint(victim_path)?;
        let asr = attack_success_rate(&victim, &batch)?;
        println!("eval: victim {} ASR {:.4}", victim.name, asr);
        names.push(victim.name.clone());
        cells.push(asr);
    }
    csv.push_str("attack");
    for n in &names {
        csv.push(',');
        csv.push_str(n);
    }
    csv.push('\n');
    csv.push_str(&header.surrogate);
    for c in &cells {
        csv.push_str(&format!(",{c}"));
    }
    csv.push('\n');
    std::fs::write(out, csv)?;
    let mut inputs = vec![("batch", batch_path.to_path_buf())];
    for v in victims {
        inputs.push(("victim", v.clone()));
    }
    let input_refs: Vec<(&str, &Path)> = inputs.iter().map(|(l, p)| (*l, p.as_path())).collect();
    write_manifest(
        &out.with_extension("manifest.json"),
        "eval",
        seed,
        json!({ "victims": names, "asr": cells }),
        &input_refs,
        &[out],
    )?;
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn cmd_attribute(
    file: &FileConfig,
    seed: u64,
    force: bool,
    model_path: &Path,
    path_file: Option<&Path>,
    data_dir: &Path,
    index: usize,
    out: &Path,
    target: Option<usize>,
    ig_steps: Option<usize>,
) -> Result<()> {
    ensure_output(out, force)?;
    let model = load_checkpoint(model_path)?;
    let path = match path_file {
        Some(p) => {
            let path = PathConfig::read_from_file(p)?;
            path.validate_for(model.sites())?;
            path
        }
        None => model.identity_path(),
    };
    let splits = load_splits(data_dir, seed)?;
    if index >= splits.test.len() {
        return Err(Error::Configuration(format!(
            "index {index} out of range for test split of {}",
            splits.test.len()
        )));
    }
    let example = splits.test.gather(&[index])?;
    let target = target.unwrap_or(example.labels[0]);
    let cfg = AttributionConfig {
        steps: file.resolve(ig_steps, "ig_steps", 64)?,
    };
    let attribution = integrated_gradients(&model, &path, &example.images, target, &cfg)?;
    export_heatmap(&attribution, out)?;
    println!(
        "attribute: wrote {} (target class {target}, {} steps)",
        out.display(),
        cfg.steps
    );
    let mut inputs = vec![("model", model_path.to_path_buf())];
    if let Some(p) = path_file {
        inputs.push(("path", p.to_path_buf()));
    }
    inputs.extend(dataset_inputs(data_dir));
    let input_refs: Vec<(&str, &Path)> = inputs.iter().map(|(l, p)| (*l, p.as_path())).collect();
    write_manifest(
        &out.with_extension("manifest.json"),
        "attribute",
        seed,
        json!({ "index": index, "target": target, "ig_steps": cfg.steps }),
        &input_refs,
        &[out],
    )?;
    Ok(())
}
