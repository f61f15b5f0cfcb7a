mod config;
mod error;
mod run;

use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use iwmf_core::attacks::{run_attack, AttackConfig, AttackKind};
use iwmf_core::bench::{format_table, run_bench, BenchConfig, Pipeline};
use iwmf_core::diffusion::DenoiserKind;
use iwmf_core::eval::{run_sweep, sweep_csv, system_preset, AttackSpec, Condition, Protocol};
use iwmf_core::rng::{derive_seed, RngStream};
use iwmf_core::verifier::{cosine_similarity, ExtractorSpec, ToyExtractor};
use iwmf_core::{load_image, save_image};
use rayon::prelude::*;
use serde::Serialize;

use config::{DefenseArgs, RunConfig};
use error::{io_error, CliError};
use run::RunDir;

/// Iterative window mean filtering, diffusion restoration and adversarial
/// evaluation on a toy face verifier.
#[derive(Debug, Parser)]
#[command(name = "iwmf", version)]
struct Cli {
    /// TOML config with global keys and [purify], [attack], [eval], [sweep]
    /// and [bench] sections; flags override it
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory [default: runs/<command>-<config hash>]
    #[arg(long, global = true)]
    run_dir: Option<PathBuf>,
    /// Run seed for filters, diffusion and attacks [default: 0]
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads [default: physical core count]
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Log progress to stderr
    #[arg(short, long, global = true)]
    verbose: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Purify images (PNG or .iwt raw tensors)
    Purify(PurifyArgs),
    /// Craft one adversarial example against the toy verifier
    Attack(AttackArgs),
    /// Run the verification protocol and write an evaluation report
    Eval(EvalArgs),
    /// Evaluate over a grid of lambda and sigma_y values
    Sweep(SweepArgs),
    /// Time the purification pipelines
    Bench(BenchArgs),
}

#[derive(Debug, Args)]
struct PurifyArgs {
    /// Input images
    inputs: Vec<PathBuf>,
    #[command(flatten)]
    defense: DefenseArgs,
}

#[derive(Debug, Args)]
struct AttackArgs {
    /// Attack: fgsm, pgd, bim, sgadv, adaptive-sgadv [default: sgadv]
    #[arg(long)]
    attack: Option<String>,
    /// Source (attacker) image
    #[arg(long)]
    source: Option<PathBuf>,
    /// Enrollment image of the impersonated identity
    #[arg(long)]
    target: Option<PathBuf>,
    /// L-infinity budget [default: 0.03; bim 4/255]
    #[arg(long)]
    epsilon: Option<f64>,
    /// Step size [default: 0.001; fgsm uses epsilon]
    #[arg(long)]
    alpha: Option<f64>,
    /// Maximum iterations [default: fgsm 1, pgd 40, bim 20, sgadv 1000]
    #[arg(long)]
    t_max: Option<usize>,
    /// Plateau threshold on the mean loss change over 5 steps [default: 0.0001]
    #[arg(long)]
    tau_conv: Option<f64>,
    /// EOT samples per gradient of the adaptive attack [default: 1]
    #[arg(long)]
    eot_samples: Option<usize>,
    /// Start from a uniform point in the epsilon ball
    /// [default: true for pgd and sgadv, false for fgsm and bim]
    #[arg(long)]
    random_start: Option<bool>,
    /// Toy verifier seed [default: 1]
    #[arg(long)]
    model_seed: Option<u64>,
    /// Saved toy verifier weights (overrides --model-seed)
    #[arg(long)]
    weights: Option<PathBuf>,
    #[command(flatten)]
    defense: DefenseArgs,
}

#[derive(Debug, Args)]
struct ProtocolArgs {
    /// Threshold condition: imposter or an attack name
    /// [default: imposter for none, sgadv for defended systems]
    #[arg(long)]
    condition: Option<String>,
    /// Comma-separated attacks evaluated at the shared threshold [default: sgadv]
    #[arg(long, value_delimiter = ',')]
    attacks: Option<Vec<String>>,
    /// Synthetic subjects [default: 20]
    #[arg(long)]
    subjects: Option<usize>,
    /// Genuine pairs [default: 100]
    #[arg(long)]
    genuine_pairs: Option<usize>,
    /// Imposter pairs [default: 100]
    #[arg(long)]
    imposter_pairs: Option<usize>,
    /// Attack pairs [default: 100]
    #[arg(long)]
    attack_pairs: Option<usize>,
    /// Image side length [default: 32]
    #[arg(long)]
    image_size: Option<usize>,
    /// Toy verifier seed [default: 1]
    #[arg(long)]
    model_seed: Option<u64>,
    /// Synthetic identity seed [default: 2]
    #[arg(long)]
    data_seed: Option<u64>,
    #[command(flatten)]
    defense: DefenseArgs,
}

#[derive(Debug, Args)]
struct EvalArgs {
    #[command(flatten)]
    protocol: ProtocolArgs,
}

#[derive(Debug, Args)]
struct SweepArgs {
    /// Comma-separated lambda values [default: 0,0.1,0.25,0.4]
    #[arg(long, value_delimiter = ',')]
    lambdas: Option<Vec<f64>>,
    /// Comma-separated sigma_y values; 0 disables diffusion [default: 0,0.1,0.15,0.2]
    #[arg(long, value_delimiter = ',')]
    sigma_ys: Option<Vec<f64>>,
    #[command(flatten)]
    protocol: ProtocolArgs,
}

#[derive(Debug, Args)]
struct BenchArgs {
    /// Comma-separated pipelines: gaussian, iwmf, noiseless-diffusion,
    /// iwmf-diffusion, gaussian-diffusion, iwmf-gaussian-diffusion [default: all]
    #[arg(long, value_delimiter = ',')]
    pipelines: Option<Vec<String>>,
    /// Image side length [default: 112]
    #[arg(long)]
    size: Option<usize>,
    /// Batch size [default: 500]
    #[arg(long)]
    batch: Option<usize>,
    /// Repetitions per pipeline [default: 3]
    #[arg(long)]
    repeats: Option<usize>,
    /// Denoiser for the diffusion pipelines [default: identity]
    #[arg(long)]
    denoiser: Option<String>,
}

fn usage(msg: impl Into<String>) -> CliError {
    CliError::Usage(msg.into())
}

fn runtime(msg: impl std::fmt::Display) -> CliError {
    CliError::Runtime(msg.to_string())
}

fn resolve_threads(threads: usize) -> usize {
    if threads == 0 {
        num_cpus::get_physical().max(1)
    } else {
        threads
    }
}

fn apply_protocol_args(cfg: &mut RunConfig, a: &ProtocolArgs) -> Result<(), CliError> {
    let e = &mut cfg.eval;
    if let Some(v) = a.subjects {
        e.subjects = v;
    }
    if let Some(v) = a.genuine_pairs {
        e.genuine_pairs = v;
    }
    if let Some(v) = a.imposter_pairs {
        e.imposter_pairs = v;
    }
    if let Some(v) = a.attack_pairs {
        e.attack_pairs = v;
    }
    if let Some(v) = a.image_size {
        e.image_size = v;
    }
    if let Some(v) = a.model_seed {
        e.model_seed = v;
    }
    if let Some(v) = a.data_seed {
        e.data_seed = v;
    }
    if let Some(names) = &a.attacks {
        e.attacks = names
            .iter()
            .filter(|n| !n.is_empty())
            .map(|n| Ok(AttackSpec::preset(n.parse::<AttackKind>()?)))
            .collect::<Result<_, iwmf_core::Error>>()?;
    }
    if let Some(name) = &a.defense.system {
        e.condition = system_preset(name)?.1;
    }
    a.defense.apply(&mut e.defense)?;
    if let Some(c) = &a.condition {
        e.condition = c.parse::<Condition>()?;
    }
    e.defense.seed = cfg.seed;
    for spec in &mut e.attacks {
        spec.config.seed = cfg.seed;
    }
    e.validate()?;
    Ok(())
}

fn cmd_purify(mut cfg: RunConfig, a: &PurifyArgs, threads: usize) -> Result<PathBuf, CliError> {
    if !a.inputs.is_empty() {
        cfg.purify.inputs = a.inputs.clone();
    }
    a.defense.apply(&mut cfg.purify.defense)?;
    cfg.purify.defense.seed = cfg.seed;
    if cfg.purify.inputs.is_empty() {
        return Err(usage("purify needs at least one input image"));
    }
    for p in &cfg.purify.inputs {
        if !p.is_file() {
            return Err(usage(format!("input {} does not exist", p.display())));
        }
    }
    let defense = cfg.purify.defense.build()?;
    let mut run = RunDir::create("purify", &cfg, threads)?;
    run.seed("seed", cfg.seed);
    let out_dir = run.file("purified");
    fs::create_dir_all(&out_dir).map_err(|e| io_error(&out_dir, e))?;

    let mut targets = Vec::new();
    for (i, input) in cfg.purify.inputs.iter().enumerate() {
        let name = input
            .file_name()
            .ok_or_else(|| usage(format!("{} has no file name", input.display())))?;
        // prefix with the index so equal file names from different folders do not collide
        let out = out_dir.join(format!("{i:04}-{}", name.to_string_lossy()));
        targets.push((i, input.clone(), out));
    }
    let job = |(i, input, out): &(usize, PathBuf, PathBuf)| -> Result<(), CliError> {
        if defense.is_identity() {
            fs::copy(input, out).map_err(|e| io_error(out, e))?;
            return Ok(());
        }
        let img = load_image(input)?;
        let mut rng = RngStream::new(derive_seed(cfg.seed, *i as u64));
        let purified = defense.apply(&img, &mut rng)?;
        save_image(&purified, out)?;
        log::info!("purified {} -> {}", input.display(), out.display());
        Ok(())
    };
    if defense.denoiser.thread_safe() {
        targets.par_iter().try_for_each(job)?;
    } else {
        targets.iter().try_for_each(job)?;
    }
    for (_, _, out) in &targets {
        run.record(out);
    }
    println!(
        "purified {} image(s) with {}",
        targets.len(),
        defense.describe()
    );
    run.finish()
}

#[derive(Serialize)]
struct AttackRecord {
    attack: String,
    config: AttackConfig,
    iterations_used: usize,
    converged: bool,
    degenerate: bool,
    final_loss: f64,
    linf: f64,
    cosine_to_target: f64,
    cosine_to_source: f64,
}

fn cmd_attack(mut cfg: RunConfig, a: &AttackArgs, threads: usize) -> Result<PathBuf, CliError> {
    let s = &mut cfg.attack;
    if let Some(name) = &a.attack {
        let kind = name.parse::<AttackKind>()?;
        if kind != s.kind {
            s.config = None;
        }
        s.kind = kind;
    }
    let mut ac = s
        .config
        .clone()
        .unwrap_or_else(|| AttackConfig::preset(s.kind));
    if let Some(v) = a.epsilon {
        ac.epsilon = v;
    }
    if let Some(v) = a.alpha {
        ac.alpha = v;
    }
    if let Some(v) = a.t_max {
        ac.t_max = v;
    }
    if let Some(v) = a.tau_conv {
        ac.tau_conv = v;
    }
    if let Some(v) = a.eot_samples {
        ac.eot_samples = v;
    }
    if let Some(v) = a.random_start {
        ac.random_start = v;
    }
    ac.seed = cfg.seed;
    ac.validate()?;
    s.config = Some(ac.clone());
    if let Some(v) = &a.source {
        s.source = Some(v.clone());
    }
    if let Some(v) = &a.target {
        s.target = Some(v.clone());
    }
    if let Some(v) = a.model_seed {
        s.model_seed = v;
    }
    if let Some(v) = &a.weights {
        s.weights = Some(v.clone());
    }
    a.defense.apply(&mut s.defense)?;
    s.defense.seed = cfg.seed;

    let source_path = s
        .source
        .clone()
        .ok_or_else(|| usage("attack needs --source"))?;
    let target_path = s
        .target
        .clone()
        .ok_or_else(|| usage("attack needs --target"))?;
    let source = load_image(&source_path)?;
    let target = load_image(&target_path)?;
    if source.shape() != target.shape() {
        return Err(usage(format!(
            "source is {:?} but target is {:?}",
            source.shape(),
            target.shape()
        )));
    }
    let model = match &s.weights {
        Some(w) => ToyExtractor::load_weights(w)?,
        None => ToyExtractor::new(
            ExtractorSpec::with_size(source.height(), source.width()),
            s.model_seed,
        )?,
    };
    let defense = s.defense.build()?;
    let kind = s.kind;
    let mut run = RunDir::create("attack", &cfg, threads)?;
    run.seed("seed", cfg.seed);
    run.seed("model_seed", cfg.attack.model_seed);

    let result = run_attack(kind, &model, &source, &target, &ac, &defense)?;
    let e_adv = model.extract(&result.adversarial)?;
    let record = AttackRecord {
        attack: kind.name().to_string(),
        config: ac,
        iterations_used: result.iterations_used,
        converged: result.converged,
        degenerate: result.degenerate,
        final_loss: result.final_loss,
        linf: result.adversarial.max_abs_diff(&source)? as f64,
        cosine_to_target: cosine_similarity(&e_adv, &model.extract(&target)?),
        cosine_to_source: cosine_similarity(&e_adv, &model.extract(&source)?),
    };
    for name in ["adversarial.iwt", "adversarial.png"] {
        let p = run.file(name);
        save_image(&result.adversarial, &p)?;
        run.record(&p);
    }
    let text = toml::to_string(&record).map_err(runtime)?;
    run.write("result.toml", &text)?;
    println!(
        "{}: {} iterations, L-inf {:.5}, cosine to target {:.4}",
        record.attack, record.iterations_used, record.linf, record.cosine_to_target
    );
    run.finish()
}

fn protocol_seeds(run: &mut RunDir, cfg: &RunConfig) {
    run.seed("seed", cfg.seed);
    run.seed("model_seed", cfg.eval.model_seed);
    run.seed("data_seed", cfg.eval.data_seed);
}

fn cmd_eval(mut cfg: RunConfig, a: &EvalArgs, threads: usize) -> Result<PathBuf, CliError> {
    apply_protocol_args(&mut cfg, &a.protocol)?;
    let protocol = Protocol::new(cfg.eval.clone())?;
    let mut run = RunDir::create("eval", &cfg, threads)?;
    protocol_seeds(&mut run, &cfg);
    let report = protocol.run()?;
    run.write("report.toml", &report.to_toml()?)?;
    run.write("roc.csv", &report.curve_csv())?;
    print!("{}", report.summary());
    run.finish()
}

fn cmd_sweep(mut cfg: RunConfig, a: &SweepArgs, threads: usize) -> Result<PathBuf, CliError> {
    apply_protocol_args(&mut cfg, &a.protocol)?;
    if let Some(v) = &a.lambdas {
        cfg.sweep.lambdas = v.clone();
    }
    if let Some(v) = &a.sigma_ys {
        cfg.sweep.sigma_ys = v.clone();
    }
    if cfg.sweep.lambdas.is_empty() || cfg.sweep.sigma_ys.is_empty() {
        return Err(usage("sweep grid is empty"));
    }
    let protocol = Protocol::new(cfg.eval.clone())?;
    let mut run = RunDir::create("sweep", &cfg, threads)?;
    protocol_seeds(&mut run, &cfg);
    let points = run_sweep(
        &protocol,
        &cfg.eval.defense,
        &cfg.sweep.lambdas,
        &cfg.sweep.sigma_ys,
    )?;
    let csv = sweep_csv(&points);
    run.write("sweep.csv", &csv)?;
    print!("{csv}");
    run.finish()
}

#[derive(Serialize)]
struct BenchRecord {
    size: usize,
    batch: usize,
    threads: usize,
    timings: Vec<iwmf_core::bench::Timing>,
}

fn cmd_bench(mut cfg: RunConfig, a: &BenchArgs, threads: usize) -> Result<PathBuf, CliError> {
    let b = &mut cfg.bench;
    if let Some(names) = &a.pipelines {
        b.pipelines = names
            .iter()
            .filter(|n| !n.is_empty())
            .map(|n| n.parse::<Pipeline>())
            .collect::<Result<_, _>>()?;
    }
    if let Some(v) = a.size {
        b.size = v;
    }
    if let Some(v) = a.batch {
        b.batch = v;
    }
    if let Some(v) = a.repeats {
        b.repeats = v;
    }
    if let Some(v) = &a.denoiser {
        b.denoiser = v.clone();
    }
    if b.pipelines.is_empty() {
        return Err(usage("bench needs at least one pipeline"));
    }
    let denoiser = b.denoiser.parse::<DenoiserKind>()?.build()?;
    let bench = BenchConfig {
        size: b.size,
        batch: b.batch,
        repeats: b.repeats,
        threads,
        seed: cfg.seed,
    };
    let pipelines = b.pipelines.clone();
    let mut run = RunDir::create("bench", &cfg, threads)?;
    run.seed("seed", cfg.seed);
    let timings = run_bench(&bench, &pipelines, denoiser.as_ref())?;
    print!("{}", format_table(&timings, bench.batch));
    let record = BenchRecord {
        size: bench.size,
        batch: bench.batch,
        threads,
        timings,
    };
    run.write("bench.toml", &toml::to_string(&record).map_err(runtime)?)?;
    run.finish()
}

fn execute(cli: Cli) -> Result<PathBuf, CliError> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(v) = cli.seed {
        cfg.seed = v;
    }
    if let Some(v) = cli.threads {
        cfg.threads = v;
    }
    if let Some(v) = &cli.run_dir {
        cfg.run_dir = Some(v.clone());
    }
    let threads = resolve_threads(cfg.threads);
    // a second call in the same process (tests) keeps the first pool
    let _ = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build_global();
    match &cli.command {
        Command::Purify(a) => cmd_purify(cfg, a, threads),
        Command::Attack(a) => cmd_attack(cfg, a, threads),
        Command::Eval(a) => cmd_eval(cfg, a, threads),
        Command::Sweep(a) => cmd_sweep(cfg, a, threads),
        Command::Bench(a) => cmd_bench(cfg, a, threads),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    env_logger::Builder::from_default_env()
        .filter_level(if cli.verbose {
            log::LevelFilter::Info
        } else {
            log::LevelFilter::Warn
        })
        .init();
    match execute(cli) {
        Ok(dir) => {
            println!("run directory: {}", dir.display());
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("{e}");
            ExitCode::from(e.exit_code())
        }
    }
}
