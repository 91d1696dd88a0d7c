use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, Context};
use clap::{Parser, Subcommand};
use latblend::experiments::{run_study, StudyConfig, StudyKind, StudyResult};
use serde_json::Value;

#[derive(Parser)]
#[command(name = "latblend", version, about = "Blended atomistic/continuum coupling studies")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct StudyArgs {
    /// JSON study configuration.
    #[arg(long)]
    config: PathBuf,
    /// Output prefix; writes `<prefix>.csv` and `<prefix>.json`.
    /// Falls back to the config's `output` field.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Force consistency gaps against the Cauchy-Born operator.
    Consistency(StudyArgs),
    /// Hybrid versus atomistic equilibrium errors.
    Convergence(StudyArgs),
    /// Symbol scans and Ky Fan checks.
    Stability(StudyArgs),
    /// Dense stability constant of the linearized hybrid operator.
    StabilityConstant(StudyArgs),
    /// Finite-difference checks of potentials and assembly.
    CheckDerivatives(StudyArgs),
}

/// A failure of the inputs rather than of the study.
#[derive(Debug)]
struct ConfigError(anyhow::Error);

impl std::fmt::Display for ConfigError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{:#}", self.0)
    }
}

impl std::error::Error for ConfigError {}

fn config_err(e: impl Into<anyhow::Error>) -> anyhow::Error {
    anyhow::Error::new(ConfigError(e.into()))
}

fn init_threads() -> anyhow::Result<()> {
    let Ok(raw) = std::env::var("LATBLEND_THREADS") else {
        return Ok(());
    };
    let threads: usize = raw
        .trim()
        .parse()
        .ok()
        .filter(|&t| t > 0)
        .ok_or_else(|| config_err(anyhow!("LATBLEND_THREADS must be a positive integer, got {raw:?}")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build_global()
        .context("configuring the thread pool")?;
    Ok(())
}

fn load_config(path: &Path, study: StudyKind) -> anyhow::Result<StudyConfig> {
    let text = fs::read_to_string(path)
        .with_context(|| format!("reading {}", path.display()))
        .map_err(config_err)?;
    let mut value: Value = serde_json::from_str(&text)
        .with_context(|| format!("parsing {}", path.display()))
        .map_err(config_err)?;
    let obj = value
        .as_object_mut()
        .ok_or_else(|| config_err(anyhow!("{} must hold a JSON object", path.display())))?;
    let name = serde_json::to_value(study)?;
    match obj.get("study") {
        None => {
            obj.insert("study".into(), name);
        }
        Some(v) if *v == name => {}
        Some(v) => {
            return Err(config_err(anyhow!("config is for study {v}, not {name}")));
        }
    }
    StudyConfig::from_json(&value.to_string())
        .with_context(|| format!("invalid config {}", path.display()))
        .map_err(config_err)
}

fn write_outputs(result: &StudyResult, prefix: &Path) -> anyhow::Result<()> {
    if let Some(dir) = prefix.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    let csv = prefix.with_extension("csv");
    let json = prefix.with_extension("json");
    let file = File::create(&csv).with_context(|| format!("creating {}", csv.display()))?;
    result.write_csv(BufWriter::new(file))?;
    fs::write(&json, result.to_json()? + "\n").with_context(|| format!("writing {}", json.display()))?;
    Ok(())
}

fn summarize(result: &StudyResult) {
    for s in &result.slopes {
        let slope = s.slope.map_or("none".to_string(), |v| format!("{v:.4}"));
        match s.threshold {
            Some(t) => println!("{:<4} slope {:<14} {slope} (>= {t})", verdict(s.pass), s.quantity),
            None => println!("info slope {:<14} {slope}", s.quantity),
        }
    }
    for c in &result.checks {
        println!("{:<4} {:<24} {:.6e} ({} {:e})", verdict(c.pass), c.name, c.value, c.relation, c.threshold);
    }
    for n in &result.notes {
        println!("note {n}");
    }
    println!("{} {}", result.study, if result.passed { "PASSED" } else { "FAILED" });
}

fn verdict(pass: bool) -> &'static str {
    if pass {
        "ok"
    } else {
        "FAIL"
    }
}

fn run(cli: Cli) -> anyhow::Result<bool> {
    init_threads()?;
    let (kind, args) = match &cli.command {
        Command::Consistency(a) => (StudyKind::Consistency, a),
        Command::Convergence(a) => (StudyKind::Convergence, a),
        Command::Stability(a) => (StudyKind::Stability, a),
        Command::StabilityConstant(a) => (StudyKind::StabilityConstant, a),
        Command::CheckDerivatives(a) => (StudyKind::DerivativeCheck, a),
    };
    let cfg = load_config(&args.config, kind)?;
    let prefix = args
        .out
        .clone()
        .or_else(|| cfg.output.clone().map(PathBuf::from))
        .ok_or_else(|| config_err(anyhow!("no output prefix: pass --out or set `output`")))?;
    let result = match run_study(&cfg) {
        Ok(r) => r,
        Err(e @ (latblend::Error::Config(_) | latblend::Error::UnknownModel(_))) => return Err(config_err(e)),
        Err(e) => return Err(anyhow::Error::new(e).context(format!("{} study failed", kind.name()))),
    };
    write_outputs(&result, &prefix)?;
    summarize(&result);
    Ok(result.passed)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.is::<ConfigError>() {
                ExitCode::from(2)
            } else {
                ExitCode::from(1)
            }
        }
    }
}
