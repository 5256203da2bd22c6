//! Command-line driver: dataset generation, zoo training, attack runs,
//! ablation, the frequency sweep, and visual dumps — one subcommand each.
//!
//! Settings resolve in precedence order: explicit flag, then the matching
//! section of `--config` (a TOML file with one section per subcommand),
//! then the built-in default. The dataset root additionally falls back to
//! the `FEATHERSTORM_DATA` environment variable. Exit codes: 0 success,
//! 2 usage or configuration error, 3 runtime or numeric error.

use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use clap::{Args, Parser, Subcommand};
use serde::Deserialize;

use crate::attack::{AttackConfig, Variant};
use crate::data::{load_image_dir, save_image_dir, DatasetHandle};
use crate::error::{Error, Result};
use crate::eval::{
    ablation_study, attack_all, dump_adversarial, frequency_study, to_csv, transfer_matrix,
    write_report, EvalReport,
};
use crate::frequency::{band_reconstruct, self_mix, Band};
use crate::model::{
    accuracy, build, load_checkpoint, save_checkpoint, train, zoo, ModelCheckpoint,
};
use crate::rng::RandomStream;
use crate::synth;
use crate::transforms::{block_mix, mixed_probe};

pub const DATA_ENV: &str = "FEATHERSTORM_DATA";

/// Entry point; returns the process exit code.
pub fn run() -> i32 {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = e.exit_code();
            let _ = e.print();
            return code;
        }
    };
    match dispatch(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

#[derive(Parser)]
#[command(
    name = "featherstorm",
    version,
    about = "Feature-space transfer attacks on compact CNN classifiers"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the synthetic glyph dataset (train and eval PNG trees).
    GenData(GenDataArgs),
    /// Train the model zoo and write one checkpoint per architecture.
    Train(TrainArgs),
    /// Attack with one variant and write a transfer-matrix CSV report.
    Attack(AttackArgs),
    /// Run the four-way transform ablation.
    Ablate(AblateArgs),
    /// Sweep the spectrum corner size and report per-τ success rates.
    Freqstudy(FreqArgs),
    /// Export probe transforms and band reconstructions as PNGs.
    Dump(DumpArgs),
}

#[derive(Args)]
struct CommonArgs {
    /// TOML config file with one section per subcommand.
    #[arg(long, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Dataset root directory (default: $FEATHERSTORM_DATA).
    #[arg(long, value_name = "DIR")]
    data: Option<PathBuf>,
    /// Master seed for all randomness.
    #[arg(long, value_name = "N")]
    seed: Option<u64>,
    /// Image-level parallelism; 1 and K>1 produce identical reports.
    #[arg(long, value_name = "K")]
    workers: Option<usize>,
}

#[derive(Args)]
struct GenDataArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Training images per class.
    #[arg(long, value_name = "N")]
    per_class: Option<usize>,
    /// Evaluation images per class.
    #[arg(long, value_name = "N")]
    eval_per_class: Option<usize>,
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Checkpoint directory (default: <data>/checkpoints).
    #[arg(long, value_name = "DIR")]
    checkpoints: Option<PathBuf>,
    /// Passes over the training set.
    #[arg(long, value_name = "N")]
    epochs: Option<usize>,
    /// SGD learning rate.
    #[arg(long, value_name = "F")]
    lr: Option<f64>,
}

#[derive(Args)]
struct AttackArgs {
    #[command(flatten)]
    common: CommonArgs,
    #[arg(long, value_name = "DIR")]
    checkpoints: Option<PathBuf>,
    /// Attack variant name (e.g. SAFER, MIM_CE, FIA).
    #[arg(long, value_name = "NAME")]
    variant: Option<String>,
    /// Surrogate model name.
    #[arg(long, value_name = "NAME")]
    surrogate: Option<String>,
    /// Comma-separated target model names.
    #[arg(long, value_name = "CSV")]
    targets: Option<String>,
    /// Perturbation budget in [0, 1] pixel units.
    #[arg(long, value_name = "F")]
    epsilon: Option<f64>,
    /// Update iterations.
    #[arg(long, value_name = "N")]
    steps: Option<usize>,
    /// Step size (default: budget-matched 1.6/255).
    #[arg(long, value_name = "F")]
    alpha: Option<f64>,
    /// Probe copies aggregated into the weight matrix.
    #[arg(long, value_name = "N")]
    ensemble_n: Option<usize>,
    /// Feature tap name on the surrogate.
    #[arg(long, value_name = "NAME")]
    tap: Option<String>,
    /// Evaluation images (drawn evenly per class).
    #[arg(long, value_name = "N")]
    eval_images: Option<usize>,
    /// Report output path.
    #[arg(long, value_name = "PATH")]
    report: Option<PathBuf>,
    /// Also write adversarial PNGs into this directory.
    #[arg(long, value_name = "DIR")]
    dump_adv: Option<PathBuf>,
    /// Include measured wallclock in the CSV (breaks byte determinism).
    #[arg(long)]
    timing: bool,
}

#[derive(Args)]
struct AblateArgs {
    #[command(flatten)]
    common: CommonArgs,
    #[arg(long, value_name = "DIR")]
    checkpoints: Option<PathBuf>,
    #[arg(long, value_name = "NAME")]
    surrogate: Option<String>,
    #[arg(long, value_name = "CSV")]
    targets: Option<String>,
    #[arg(long, value_name = "F")]
    epsilon: Option<f64>,
    #[arg(long, value_name = "N")]
    steps: Option<usize>,
    #[arg(long, value_name = "N")]
    ensemble_n: Option<usize>,
    #[arg(long, value_name = "NAME")]
    tap: Option<String>,
    #[arg(long, value_name = "N")]
    eval_images: Option<usize>,
    #[arg(long, value_name = "PATH")]
    report: Option<PathBuf>,
    #[arg(long)]
    timing: bool,
}

#[derive(Args)]
struct FreqArgs {
    #[command(flatten)]
    common: CommonArgs,
    #[arg(long, value_name = "DIR")]
    checkpoints: Option<PathBuf>,
    #[arg(long, value_name = "NAME")]
    surrogate: Option<String>,
    #[arg(long, value_name = "CSV")]
    targets: Option<String>,
    /// Comma-separated corner sizes.
    #[arg(long, value_name = "CSV")]
    taus: Option<String>,
    #[arg(long, value_name = "F")]
    epsilon: Option<f64>,
    #[arg(long, value_name = "N")]
    steps: Option<usize>,
    #[arg(long, value_name = "N")]
    ensemble_n: Option<usize>,
    #[arg(long, value_name = "NAME")]
    tap: Option<String>,
    #[arg(long, value_name = "N")]
    eval_images: Option<usize>,
    #[arg(long, value_name = "PATH")]
    report: Option<PathBuf>,
    #[arg(long)]
    timing: bool,
}

#[derive(Args)]
struct DumpArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Output directory for the PNGs.
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Dataset id of the image to dump (default: first image).
    #[arg(long, value_name = "ID")]
    image_id: Option<usize>,
    /// Corner size for the band reconstructions.
    #[arg(long, value_name = "N")]
    tau: Option<usize>,
}

/// One subcommand's section in the config file. Every key is optional;
/// unknown keys are hard errors.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct FileSection {
    data: Option<PathBuf>,
    seed: Option<u64>,
    workers: Option<usize>,
    checkpoints: Option<PathBuf>,
    report: Option<PathBuf>,
    variant: Option<String>,
    surrogate: Option<String>,
    targets: Option<String>,
    epsilon: Option<f64>,
    steps: Option<usize>,
    alpha: Option<f64>,
    ensemble_n: Option<usize>,
    tap: Option<String>,
    eval_images: Option<usize>,
    taus: Option<String>,
    dump_adv: Option<PathBuf>,
    timing: Option<bool>,
    per_class: Option<usize>,
    eval_per_class: Option<usize>,
    epochs: Option<usize>,
    lr: Option<f64>,
    out: Option<PathBuf>,
    image_id: Option<usize>,
    tau: Option<usize>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct FileConfig {
    #[serde(default, rename = "gen-data")]
    gen_data: FileSection,
    #[serde(default)]
    train: FileSection,
    #[serde(default)]
    attack: FileSection,
    #[serde(default)]
    ablate: FileSection,
    #[serde(default)]
    freqstudy: FileSection,
    #[serde(default)]
    dump: FileSection,
}

fn read_config(path: Option<&Path>) -> Result<FileConfig> {
    let Some(path) = path else {
        return Ok(FileConfig::default());
    };
    let text = fs::read_to_string(path).map_err(|e| {
        Error::Config(format!("cannot read config {}: {e}", path.display()))
    })?;
    toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
}

/// Flag beats file beats default.
fn pick<T: Clone>(flag: &Option<T>, file: &Option<T>, default: T) -> T {
    flag.clone().or_else(|| file.clone()).unwrap_or(default)
}

fn pick_opt<T: Clone>(flag: &Option<T>, file: &Option<T>) -> Option<T> {
    flag.clone().or_else(|| file.clone())
}

fn data_root(common: &CommonArgs, section: &FileSection) -> Result<PathBuf> {
    if let Some(root) = pick_opt(&common.data, &section.data) {
        return Ok(root);
    }
    if let Some(env) = std::env::var_os(DATA_ENV) {
        return Ok(PathBuf::from(env));
    }
    Err(Error::Config(format!(
        "no dataset root: pass --data, set it in the config file, or export {DATA_ENV}"
    )))
}

fn parse_names(csv: &str) -> Result<Vec<String>> {
    let names: Vec<String> = csv
        .split(',')
        .map(|s| s.trim().to_string())
        .filter(|s| !s.is_empty())
        .collect();
    if names.is_empty() {
        return Err(Error::Config(format!("empty name list '{csv}'")));
    }
    Ok(names)
}

fn parse_taus(csv: &str) -> Result<Vec<usize>> {
    csv.split(',')
        .map(|s| s.trim())
        .filter(|s| !s.is_empty())
        .map(|s| {
            s.parse::<usize>()
                .map_err(|_| Error::Config(format!("bad corner size '{s}'")))
        })
        .collect()
}

fn load_eval_subset(root: &Path, eval_images: usize) -> Result<DatasetHandle> {
    let eval = load_image_dir(&root.join("eval"))?;
    if eval_images == 0 || eval_images % eval.num_classes() != 0 {
        return Err(Error::Config(format!(
            "eval_images {eval_images} must be a positive multiple of the {} classes",
            eval.num_classes()
        )));
    }
    eval.subset_per_class(eval_images / eval.num_classes())
}

fn load_model(dir: &Path, name: &str) -> Result<ModelCheckpoint> {
    let path = dir.join(format!("{name}.fstm"));
    if !path.exists() {
        return Err(Error::UnknownModel(format!(
            "{name} (no checkpoint at {})",
            path.display()
        )));
    }
    load_checkpoint(&path)
}

fn report_timing(report: &EvalReport) {
    let mut seen = Vec::new();
    for row in &report.rows {
        if !seen.contains(&row.variant) {
            eprintln!("timing {}: {:.2}s", row.variant, row.seconds);
            seen.push(row.variant.clone());
        }
    }
}

fn dispatch(cli: Cli) -> Result<()> {
    match cli.command {
        Command::GenData(args) => cmd_gen_data(args),
        Command::Train(args) => cmd_train(args),
        Command::Attack(args) => cmd_attack(args),
        Command::Ablate(args) => cmd_ablate(args),
        Command::Freqstudy(args) => cmd_freqstudy(args),
        Command::Dump(args) => cmd_dump(args),
    }
}

fn cmd_gen_data(args: GenDataArgs) -> Result<()> {
    let file = read_config(args.common.config.as_deref())?;
    let section = &file.gen_data;
    let root = data_root(&args.common, section)?;
    let seed = pick(&args.common.seed, &section.seed, 0);
    let per_class = pick(&args.per_class, &section.per_class, 500);
    let eval_per_class = pick(&args.eval_per_class, &section.eval_per_class, 40);

    let train_set = synth::generate(per_class, seed);
    save_image_dir(&root.join("train"), &train_set)?;
    // Disjoint glyph parameters for the held-out pool.
    let eval_set = synth::generate(eval_per_class, seed.wrapping_add(1));
    save_image_dir(&root.join("eval"), &eval_set)?;
    println!(
        "wrote {} train and {} eval images under {}",
        train_set.len(),
        eval_set.len(),
        root.display()
    );
    Ok(())
}

fn cmd_train(args: TrainArgs) -> Result<()> {
    let file = read_config(args.common.config.as_deref())?;
    let section = &file.train;
    let root = data_root(&args.common, section)?;
    let seed = pick(&args.common.seed, &section.seed, 0);
    let epochs = pick(&args.epochs, &section.epochs, 12);
    let lr = pick(&args.lr, &section.lr, 0.01);
    let ckpt_dir = pick(&args.checkpoints, &section.checkpoints, root.join("checkpoints"));

    let train_set = load_image_dir(&root.join("train"))?;
    let eval_set = load_image_dir(&root.join("eval"))?;
    fs::create_dir_all(&ckpt_dir).map_err(|e| Error::io(ckpt_dir.display().to_string(), e))?;

    let shape = train_set.images()[0].pixels.shape();
    let input_shape = [shape[0], shape[1], shape[2]];
    for (i, spec) in zoo(input_shape, train_set.num_classes()).iter().enumerate() {
        let model_seed = seed.wrapping_add(i as u64);
        let built = build(spec, model_seed)?;
        let mut trained = train(&built, &train_set, epochs, lr, model_seed)?;
        trained.train_meta.test_accuracy = accuracy(&trained, &eval_set)?;
        let path = ckpt_dir.join(format!("{}.fstm", spec.name));
        save_checkpoint(&path, &trained)?;
        println!(
            "{} train_acc={:.6} test_acc={:.6}",
            spec.name, trained.train_meta.train_accuracy, trained.train_meta.test_accuracy
        );
    }
    Ok(())
}

/// Shared harness-run plumbing for attack/ablate/freqstudy.
struct HarnessSetup {
    surrogate: ModelCheckpoint,
    targets: Vec<ModelCheckpoint>,
    eval: DatasetHandle,
    seed: u64,
    workers: usize,
    report_path: PathBuf,
    timing: bool,
}

#[allow(clippy::too_many_arguments)]
fn harness_setup(
    common: &CommonArgs,
    section: &FileSection,
    checkpoints: &Option<PathBuf>,
    surrogate: &Option<String>,
    targets: &Option<String>,
    eval_images: &Option<usize>,
    report: &Option<PathBuf>,
    timing: bool,
) -> Result<HarnessSetup> {
    let root = data_root(common, section)?;
    let seed = pick(&common.seed, &section.seed, 0);
    let workers = pick(&common.workers, &section.workers, 1);
    let ckpt_dir = pick(checkpoints, &section.checkpoints, root.join("checkpoints"));
    let surrogate_name = pick(surrogate, &section.surrogate, "m0".to_string());
    let target_csv = pick(targets, &section.targets, "m0,m1,m2".to_string());
    let eval_images = pick(eval_images, &section.eval_images, 200);
    let report_path = pick(report, &section.report, PathBuf::from("report.csv"));
    let timing = timing || section.timing.unwrap_or(false);

    let surrogate = load_model(&ckpt_dir, &surrogate_name)?;
    let targets = parse_names(&target_csv)?
        .iter()
        .map(|name| load_model(&ckpt_dir, name))
        .collect::<Result<Vec<_>>>()?;
    let eval = load_eval_subset(&root, eval_images)?;
    Ok(HarnessSetup {
        surrogate,
        targets,
        eval,
        seed,
        workers,
        report_path,
        timing,
    })
}

fn apply_overrides(
    cfg: &mut AttackConfig,
    epsilon: &Option<f64>,
    steps: &Option<usize>,
    alpha: &Option<f64>,
    ensemble_n: &Option<usize>,
    tap: &Option<String>,
    section: &FileSection,
) {
    if let Some(v) = pick_opt(epsilon, &section.epsilon) {
        cfg.epsilon = v;
    }
    if let Some(v) = pick_opt(steps, &section.steps) {
        cfg.steps = v;
    }
    if let Some(v) = pick_opt(alpha, &section.alpha) {
        cfg.alpha = v;
    }
    if let Some(v) = pick_opt(ensemble_n, &section.ensemble_n) {
        cfg.ensemble_n = v;
    }
    if let Some(v) = pick_opt(tap, &section.tap) {
        cfg.tap = v;
    }
}

fn cmd_attack(args: AttackArgs) -> Result<()> {
    let file = read_config(args.common.config.as_deref())?;
    let section = &file.attack;
    let setup = harness_setup(
        &args.common,
        section,
        &args.checkpoints,
        &args.surrogate,
        &args.targets,
        &args.eval_images,
        &args.report,
        args.timing,
    )?;
    let variant_name = pick(&args.variant, &section.variant, "SAFER".to_string());
    let variant = Variant::from_str(&variant_name)?;
    let mut cfg = AttackConfig::default_for(variant);
    apply_overrides(
        &mut cfg,
        &args.epsilon,
        &args.steps,
        &args.alpha,
        &args.ensemble_n,
        &args.tap,
        section,
    );
    cfg.validate()?;

    let target_refs: Vec<&ModelCheckpoint> = setup.targets.iter().collect();
    let report = transfer_matrix(
        &setup.surrogate,
        &target_refs,
        &setup.eval,
        std::slice::from_ref(&cfg),
        setup.seed,
        setup.workers,
    )?;
    write_report(&setup.report_path, &report, setup.timing)?;
    report_timing(&report);
    if let Some(dir) = pick_opt(&args.dump_adv, &section.dump_adv) {
        let results = attack_all(&setup.surrogate, &setup.eval, &cfg, setup.seed, setup.workers)?;
        dump_adversarial(&dir, &results, cfg.variant.name())?;
    }
    print!("{}", to_csv(&report, setup.timing));
    eprintln!("wrote {}", setup.report_path.display());
    Ok(())
}

fn cmd_ablate(args: AblateArgs) -> Result<()> {
    let file = read_config(args.common.config.as_deref())?;
    let section = &file.ablate;
    let setup = harness_setup(
        &args.common,
        section,
        &args.checkpoints,
        &args.surrogate,
        &args.targets,
        &args.eval_images,
        &args.report,
        args.timing,
    )?;
    let mut cfg = AttackConfig::default_for(Variant::Safer);
    apply_overrides(
        &mut cfg,
        &args.epsilon,
        &args.steps,
        &None,
        &args.ensemble_n,
        &args.tap,
        section,
    );
    cfg.validate()?;
    let target_refs: Vec<&ModelCheckpoint> = setup.targets.iter().collect();
    let report = ablation_study(
        &setup.surrogate,
        &target_refs,
        &setup.eval,
        &cfg,
        setup.seed,
        setup.workers,
    )?;
    write_report(&setup.report_path, &report, setup.timing)?;
    report_timing(&report);
    print!("{}", to_csv(&report, setup.timing));
    eprintln!("wrote {}", setup.report_path.display());
    Ok(())
}

fn cmd_freqstudy(args: FreqArgs) -> Result<()> {
    let file = read_config(args.common.config.as_deref())?;
    let section = &file.freqstudy;
    let setup = harness_setup(
        &args.common,
        section,
        &args.checkpoints,
        &args.surrogate,
        &args.targets,
        &args.eval_images,
        &args.report,
        args.timing,
    )?;
    let taus = parse_taus(&pick(&args.taus, &section.taus, "8,16,24".to_string()))?;
    let mut cfg = AttackConfig::default_for(Variant::Safer);
    apply_overrides(
        &mut cfg,
        &args.epsilon,
        &args.steps,
        &None,
        &args.ensemble_n,
        &args.tap,
        section,
    );
    cfg.validate()?;
    let target_refs: Vec<&ModelCheckpoint> = setup.targets.iter().collect();
    let report = frequency_study(
        &setup.surrogate,
        &target_refs,
        &setup.eval,
        &cfg,
        &taus,
        setup.seed,
        setup.workers,
    )?;
    write_report(&setup.report_path, &report, setup.timing)?;
    report_timing(&report);
    print!("{}", to_csv(&report, setup.timing));
    eprintln!("wrote {}", setup.report_path.display());
    Ok(())
}

fn cmd_dump(args: DumpArgs) -> Result<()> {
    let file = read_config(args.common.config.as_deref())?;
    let section = &file.dump;
    let root = data_root(&args.common, section)?;
    let seed = pick(&args.common.seed, &section.seed, 0);
    let out = pick(&args.out, &section.out, PathBuf::from("dump"));
    let tau = pick(&args.tau, &section.tau, 8);

    let eval = load_image_dir(&root.join("eval"))?;
    let image = match pick_opt(&args.image_id, &section.image_id) {
        Some(id) => eval
            .images()
            .iter()
            .find(|img| img.id == id)
            .ok_or_else(|| Error::Config(format!("no image with id {id}")))?,
        None => &eval.images()[0],
    };
    let id = image.id;
    fs::create_dir_all(&out).map_err(|e| Error::io(out.display().to_string(), e))?;

    let cfg = AttackConfig::default_for(Variant::Safer);
    let mut rng = RandomStream::substream(seed, "dump", id as u64);
    let donor = eval.sample_donor(image.label, &mut rng)?.clone();
    let blocked = block_mix(image, &donor, cfg.n_b, cfg.keep_p, &mut rng)?;
    let beta = rng.uniform_in(cfg.beta_min, cfg.beta_max);
    let mixed = self_mix(&image.pixels, cfg.mix_mu, beta)?;
    let mut probe_rng = RandomStream::substream(seed, "dump-probe", id as u64);
    let probe = mixed_probe(image, &eval, &cfg, &mut probe_rng)?;

    let save = |name: String, px: &crate::tensor::Tensor| -> Result<()> {
        crate::data::save_png(&out.join(name), px)
    };
    save(format!("{id}_clean.png"), &image.pixels)?;
    save(format!("{id}_blockmix.png"), &blocked.pixels)?;
    save(format!("{id}_selfmix.png"), &mixed)?;
    save(format!("{id}_probe.png"), &probe)?;
    save(
        format!("{id}_low_tau{tau}.png"),
        &band_reconstruct(&image.pixels, tau, Band::Low)?,
    )?;
    save(
        format!("{id}_high_tau{tau}.png"),
        &band_reconstruct(&image.pixels, tau, Band::High)?,
    )?;
    println!("wrote 6 images for id {id} under {}", out.display());
    Ok(())
}
