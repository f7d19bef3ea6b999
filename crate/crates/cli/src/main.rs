use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use cipher_core::config::{ExperimentConfig, Mode};
use cipher_core::odeint::{read_dataset, write_dataset, Dataset, DatasetFormat};
use cipher_core::pipeline::{self, Table};
use cipher_core::Error;
use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Parser)]
#[command(name = "cipher", version, about = "Latent port-Hamiltonian identification from partial observations")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate a dataset and write it with a checksummed manifest.
    Generate(Common),
    /// Train a teacher, one-stage, supervised or (with --teacher) student model.
    Train(Common),
    /// Evaluate a trained teacher and optionally its student.
    Evaluate(Common),
    /// Run a results table over several seeds and summarise it.
    Reproduce {
        /// t1_pendulum_numeric, t1_duffing_numeric, ablation_causal or ablation_supervised.
        table: String,
        /// Comma-separated seeds.
        #[arg(long, default_value = "0,1,2", value_delimiter = ',')]
        seeds: Vec<u64>,
        #[command(flatten)]
        common: Common,
    },
}

#[derive(Args)]
struct Common {
    /// JSON config file; flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Dotted override, e.g. `teacher.steps=200`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    sets: Vec<String>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = Format::Bin)]
    format: Format,
    #[arg(long, value_enum)]
    scale: Option<ScaleArg>,
    /// Teacher run directory (student training, evaluation).
    #[arg(long)]
    teacher: Option<PathBuf>,
    /// Student run directory to evaluate alongside its teacher.
    #[arg(long)]
    student: Option<PathBuf>,
    /// Dataset directory written by `generate`; otherwise the dataset is
    /// regenerated from the config.
    #[arg(long)]
    data: Option<PathBuf>,
    /// Allow writing into a non-empty output directory.
    #[arg(long)]
    force: bool,
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Bin,
    Csv,
}

#[derive(Clone, Copy, ValueEnum)]
enum ScaleArg {
    Desk,
    Full,
}

enum Failure {
    Usage(String),
    Core(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Core(e)
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Core(Error::Io(e))
    }
}

impl Failure {
    fn exit_code(&self) -> u8 {
        match self {
            Failure::Usage(_) => 2,
            Failure::Core(e) if e.is_numerical() => 4,
            Failure::Core(Error::Config(_) | Error::InvalidInput(_)) => 2,
            Failure::Core(_) => 3,
        }
    }
}

impl std::fmt::Display for Failure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Failure::Usage(m) => write!(f, "usage error: {m}"),
            Failure::Core(e) => write!(f, "{e}"),
        }
    }
}

type CliResult<T> = Result<T, Failure>;

impl Common {
    fn overrides(&self) -> Vec<String> {
        let mut sets = Vec::new();
        if let Some(s) = self.scale {
            sets.push(format!("scale={}", if matches!(s, ScaleArg::Desk) { "desk" } else { "full" }));
        }
        sets.extend(self.sets.iter().cloned());
        if let Some(seed) = self.seed {
            sets.push(format!("seed={seed}"));
        }
        sets
    }

    fn resolve(&self) -> CliResult<ExperimentConfig> {
        Ok(ExperimentConfig::resolve(self.config.as_deref(), &self.overrides())?)
    }

    /// `self.out`, or `fallback`, checked to be empty unless `--force`.
    fn out_dir(&self, fallback: PathBuf) -> CliResult<PathBuf> {
        let out = self.out.clone().unwrap_or(fallback);
        if !self.force && out.exists() && fs::read_dir(&out)?.next().is_some() {
            return Err(Failure::Usage(format!("{} exists and is not empty (use --force)", out.display())));
        }
        fs::create_dir_all(&out)?;
        Ok(out)
    }
}

/// Dataset from `--data`, or regenerated from the config. With `--data` the
/// run config takes the manifest's spec and seed.
fn load_data(common: &Common, cfg: &mut ExperimentConfig) -> CliResult<Dataset> {
    match &common.data {
        Some(dir) => {
            let data = read_dataset(dir)?;
            if common.seed.is_some_and(|s| s != data.seed) {
                return Err(Failure::Usage(format!(
                    "--seed {} disagrees with dataset seed {}",
                    common.seed.unwrap_or(0),
                    data.seed
                )));
            }
            if data.spec.kind != cfg.dataset.kind {
                return Err(Failure::Core(Error::Data(format!(
                    "dataset holds {:?} trajectories but the config task is {}",
                    data.spec.kind,
                    cfg.task.name()
                ))));
            }
            cfg.dataset = data.spec.clone();
            cfg.seed = data.seed;
            cfg.validate()?;
            Ok(data)
        }
        None => Ok(pipeline::dataset_for(cfg)?),
    }
}

fn generate(common: &Common) -> CliResult<()> {
    let cfg = common.resolve()?;
    let out = common.out_dir(PathBuf::from(format!("data/{}_seed{}", cfg.task.name(), cfg.seed)))?;
    let data = pipeline::dataset_for(&cfg)?;
    let format = match common.format {
        Format::Bin => DatasetFormat::Bin,
        Format::Csv => DatasetFormat::Csv,
    };
    let manifest = write_dataset(&out, &data, format)?;
    cfg.write(&out.join("config.json"))?;
    println!("{}", serde_json::to_string_pretty(&manifest.counts).map_err(Error::from)?);
    Ok(())
}

fn train(common: &Common) -> CliResult<()> {
    let mut cfg = common.resolve()?;
    if cfg.mode == Mode::Student {
        let Some(tdir) = &common.teacher else {
            return Err(Failure::Usage("mode=student needs --teacher <teacher run directory>".into()));
        };
        let (tcfg, teacher) = pipeline::load_teacher(tdir)?;
        // The student inherits everything the teacher was trained with.
        let mut scfg = tcfg;
        for kv in common.sets.iter().filter(|kv| !kv.starts_with("mode=")) {
            scfg = scfg.with_override(kv)?;
        }
        let data = load_data(common, &mut scfg)?;
        let out = common.out_dir(tdir.join("student"))?;
        let s = pipeline::train_student(&scfg, &teacher, &data, Some(&out), Some(&fs::canonicalize(tdir)?))?;
        log::info!("student trained in {:.1}s, written to {}", s.wall_seconds, out.display());
        return Ok(());
    }
    let data = load_data(common, &mut cfg)?;
    let out = common.out_dir(PathBuf::from(format!(
        "runs/{}_{}_seed{}",
        cfg.task.name(),
        pipeline::variant_name(&cfg),
        cfg.seed
    )))?;
    let t = pipeline::train_teacher(&cfg, &data, Some(&out))?;
    let last = t.log.last().map_or(f64::NAN, |s| s.loss);
    log::info!(
        "{} trained in {:.1}s (final loss {last:.5}), written to {}",
        cfg.mode.name(),
        t.wall_seconds,
        out.display()
    );
    Ok(())
}

fn evaluate(common: &Common) -> CliResult<()> {
    let (student, teacher_dir) = match (&common.student, &common.teacher) {
        (Some(sdir), t) => {
            let (_, s, named) = pipeline::load_student(sdir)?;
            (Some(s), t.clone().unwrap_or(named))
        }
        (None, Some(t)) => (None, t.clone()),
        (None, None) => return Err(Failure::Usage("evaluate needs --teacher and/or --student".into())),
    };
    let (mut cfg, teacher) = pipeline::load_teacher(&teacher_dir)?;
    for kv in &common.sets {
        cfg = cfg.with_override(kv)?;
    }
    let data = load_data(common, &mut cfg)?;
    let out = common.out_dir(teacher_dir.join("eval"))?;
    cfg.write(&out.join("config.json"))?;
    let ev = pipeline::evaluate(&cfg, &data, &teacher, student.as_ref(), Some(&out))?;
    println!("{}", serde_json::to_string_pretty(&ev).map_err(Error::from)?);
    Ok(())
}

fn reproduce(table: &str, seeds: &[u64], common: &Common) -> CliResult<()> {
    let table = Table::parse(table).map_err(|e| Failure::Usage(e.to_string()))?;
    if seeds.is_empty() {
        return Err(Failure::Usage("--seeds must name at least one seed".into()));
    }
    if common.seed.is_some() {
        return Err(Failure::Usage("reproduce takes --seeds, not --seed".into()));
    }
    // Validate the base config before any work starts.
    common.resolve()?;
    let out = common.out_dir(PathBuf::from(format!("reproduce/{}", table.name())))?;
    pipeline::reproduce(table, common.config.as_deref(), &common.overrides(), seeds, &out)?;
    print!("{}", fs::read_to_string(out.join("summary.md"))?);
    Ok(())
}

fn run(cli: Cli) -> CliResult<()> {
    match &cli.command {
        Command::Generate(c) => generate(c),
        Command::Train(c) => train(c),
        Command::Evaluate(c) => evaluate(c),
        Command::Reproduce { table, seeds, common } => reproduce(table, seeds, common),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("cipher: {f}");
            ExitCode::from(f.exit_code())
        }
    }
}
