use std::collections::BTreeSet;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{CommandFactory, FromArgMatches, Parser, Subcommand, ValueEnum};

use cfr_core::config::{config_keys, Config, EvalSetSpec};
use cfr_core::pipeline::{evaluate_manifests, run_reinforcement, run_stress_test, SetAccuracy};
use cfr_core::reinforcement::{blend_parameters, ParameterSet};
use cfr_core::report::{render_report, ReportFormat};
use cfr_core::synthetic::{generate, SyntheticConfig};
use cfr_core::Error;

const RUN_ROOT_ENV: &str = "CFR_RUN_ROOT";

#[derive(Parser, Debug)]
#[command(name = "cfr", version, about = "Counterfactual stress tests and head-only reinforcement for image classifiers")]
struct Cli {
    /// TOML configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Worker threads for per-item stages (0 = all cores).
    #[arg(long, global = true)]
    jobs: Option<usize>,

    /// Seed for every random choice of the run.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// More log output; repeat for more.
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,

    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Format {
    Table,
    Csv,
    Json,
}

impl From<Format> for ReportFormat {
    fn from(f: Format) -> Self {
        match f {
            Format::Table => ReportFormat::Table,
            Format::Csv => ReportFormat::Csv,
            Format::Json => ReportFormat::Json,
        }
    }
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Scope {
    Head,
    All,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Caption, perturb, edit and measure the accuracy drop on counterfactuals.
    StressTest {
        /// Run root directory (overrides `run_root`).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Dotted `key=value` configuration overrides.
        overrides: Vec<String>,
    },
    /// Fine-tune the head on a stress run's counterfactuals and compare.
    Reinforce {
        /// Id of a completed stress-test run.
        #[arg(long)]
        run: String,
        /// Extra evaluation manifest; the set is named after the file stem.
        #[arg(long = "eval")]
        eval: Vec<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        overrides: Vec<String>,
    },
    /// Top-5 accuracy of a classifier on labeled manifests.
    Evaluate {
        /// Classifier parameter directory; defaults to the configured classifier.
        #[arg(long)]
        params: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "table")]
        format: Format,
        #[arg(required = true)]
        manifests: Vec<PathBuf>,
    },
    /// Interpolate two parameter directories: (1 - alpha) * theta0 + alpha * theta1.
    Blend {
        #[arg(long)]
        alpha: f64,
        #[arg(long)]
        theta0: PathBuf,
        #[arg(long)]
        theta1: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum, default_value = "head")]
        scope: Scope,
    },
    /// Render a weakness or comparison report.
    Report {
        path: PathBuf,
        #[arg(long, value_enum, default_value = "table")]
        format: Format,
    },
    /// Write the planted-background-bias dataset, baseline parameters and a run config.
    GenSynthetic {
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        per_class: Option<usize>,
        #[arg(long)]
        ood_per_class: Option<usize>,
    },
}

/// Failure classes with their exit codes.
enum Failure {
    Config(String),
    Runtime(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e.root() {
            Error::Config(_) => Failure::Config(e.to_string()),
            _ => Failure::Runtime(e.to_string()),
        }
    }
}

fn absolute(p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        std::env::current_dir().map(|d| d.join(p)).unwrap_or_else(|_| p.to_path_buf())
    }
}

fn toml_string(p: &Path) -> String {
    format!("{:?}", absolute(p).display().to_string())
}

fn load_config(cli: &Cli, out: Option<&Path>, extra: &[String]) -> Result<Config, Failure> {
    let mut overrides = Vec::new();
    if let Ok(root) = std::env::var(RUN_ROOT_ENV) {
        if !root.is_empty() {
            overrides.push(format!("run_root={}", toml_string(Path::new(&root))));
        }
    }
    if let Some(seed) = cli.seed {
        overrides.push(format!("seed={seed}"));
        overrides.push(format!("train.seed={seed}"));
    }
    if let Some(jobs) = cli.jobs {
        overrides.push(format!("jobs={jobs}"));
    }
    if let Some(out) = out {
        overrides.push(format!("run_root={}", toml_string(out)));
    }
    overrides.extend(extra.iter().cloned());
    let config = match &cli.config {
        Some(path) => Config::load(path, &overrides)?,
        None => {
            let cwd = std::env::current_dir().map_err(|e| Failure::Runtime(e.to_string()))?;
            Config::from_toml_str("", &overrides, &cwd)?
        }
    };
    Ok(config)
}

fn accuracy_text(sets: &[SetAccuracy], format: Format) -> Result<String, Failure> {
    Ok(match format {
        Format::Json => serde_json::to_string_pretty(sets).map_err(|e| Failure::Runtime(e.to_string()))? + "\n",
        Format::Csv => {
            let mut s = String::from("set,class,acc5\n");
            for set in sets {
                for (class, acc) in &set.acc5 {
                    s.push_str(&format!("{},{},{:.2}\n", set.set, class, acc));
                }
            }
            s
        }
        Format::Table => {
            let w = sets
                .iter()
                .flat_map(|s| s.acc5.iter().map(|(c, _)| c.len()))
                .chain([5])
                .max()
                .unwrap_or(5);
            let mut s = String::new();
            for set in sets {
                s.push_str(&format!("{} ({} items)\n", set.set, set.items));
                for (class, acc) in &set.acc5 {
                    s.push_str(&format!("  {class:<w$}  {acc:>6.2}\n"));
                }
            }
            s
        }
    })
}

fn blend_dirs(alpha: f64, theta0: &Path, theta1: &Path, out: &Path, scope: Scope) -> Result<(), Failure> {
    if out.exists() && out.read_dir().map(|mut d| d.next().is_some()).unwrap_or(true) {
        return Err(Failure::Runtime(format!("{} exists and is not empty", out.display())));
    }
    let p0 = ParameterSet::load(theta0)?;
    let p1 = ParameterSet::load(theta1)?;
    let groups: BTreeSet<String> = match scope {
        Scope::Head => p0.head_groups().clone(),
        Scope::All => p0.names().map(str::to_string).collect(),
    };
    blend_parameters(&p0, &p1, alpha, &groups)?.save(out)?;
    // Carry sidecar files (such as a class list) over from theta0.
    for entry in std::fs::read_dir(theta0).map_err(|e| Failure::Runtime(e.to_string()))? {
        let path = entry.map_err(|e| Failure::Runtime(e.to_string()))?.path();
        let name = path.file_name().unwrap_or_default();
        if path.is_file() && !out.join(name).exists() {
            std::fs::copy(&path, out.join(name)).map_err(|e| Failure::Runtime(e.to_string()))?;
        }
    }
    Ok(())
}

fn run(cli: &Cli) -> Result<String, Failure> {
    match &cli.command {
        Command::StressTest { out, overrides } => {
            let config = load_config(cli, out.as_deref(), overrides)?;
            let o = run_stress_test(&config)?;
            let r = &o.report;
            Ok(format!(
                "stress test {}: {} originals, {} counterfactuals, overall delta {:+.2}\nrun_id: {}\nreport: {}\nmanifest: {}\n",
                o.run_id,
                r.set_sizes.t,
                r.set_sizes.t_prime,
                r.overall.delta,
                o.run_id,
                o.run_dir.join("reports/weakness.json").display(),
                o.run_dir.join("manifest.json").display(),
            ))
        }
        Command::Reinforce { run, eval, out, overrides } => {
            let mut config = load_config(cli, out.as_deref(), overrides)?;
            for m in eval {
                config.reinforce.eval_sets.push(EvalSetSpec {
                    name: m.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default(),
                    manifest: absolute(m),
                });
            }
            let o = run_reinforcement(&config, run)?;
            let mut text = format!(
                "reinforcement {} from {}: {} epochs, alpha {}\n",
                o.run_id, run, o.training.counterfactual.epochs_run, o.training.counterfactual_alpha
            );
            for row in o.comparison.rows.iter().filter(|r| r.class == "all") {
                text.push_str(&format!(
                    "  {}: baseline {:.2} -> counterfactual {:.2}\n",
                    row.set, row.baseline, row.counterfactual
                ));
            }
            text.push_str(&format!(
                "run_id: {}\nreport: {}\nparams: {}\nmanifest: {}\n",
                o.run_id,
                o.run_dir.join("reports/comparison.json").display(),
                o.run_dir.join("params/reinforced").display(),
                o.run_dir.join("manifest.json").display(),
            ));
            Ok(text)
        }
        Command::Evaluate { params, format, manifests } => {
            let config = load_config(cli, None, &[])?;
            let sets = evaluate_manifests(&config, params.as_deref(), manifests)?;
            accuracy_text(&sets, *format)
        }
        Command::Blend { alpha, theta0, theta1, out, scope } => {
            if !(0.0..=1.0).contains(alpha) {
                return Err(Failure::Config(format!("--alpha {alpha} outside [0, 1]")));
            }
            blend_dirs(*alpha, theta0, theta1, out, *scope)?;
            Ok(format!("params: {}\n", out.display()))
        }
        Command::Report { path, format } => Ok(render_report(path, (*format).into())?),
        Command::GenSynthetic { out, per_class, ood_per_class } => {
            let mut cfg = SyntheticConfig::default();
            if let Some(s) = cli.seed {
                cfg.seed = s;
            }
            if let Some(n) = per_class {
                cfg.per_class = *n;
            }
            if let Some(n) = ood_per_class {
                cfg.ood_per_class = *n;
            }
            let summary = generate(&cfg, out)?;
            let mut text = String::new();
            for ((name, n), (_, acc)) in summary.sizes.iter().zip(&summary.baseline_acc5) {
                text.push_str(&format!("{name}: {n} images, baseline Acc@5 {acc:.2}\n"));
            }
            text.push_str(&format!("config: {}\n", out.join(&summary.run_config).display()));
            Ok(text)
        }
    }
}

fn main() -> ExitCode {
    let keys = config_keys().join("\n  ");
    let command = Cli::command().after_help(format!("Configuration keys (set with key=value):\n  {keys}\n\nThe {RUN_ROOT_ENV} environment variable sets the default run root."));
    let cli = match command.try_get_matches().and_then(|m| Cli::from_arg_matches(&m)) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(&cli) {
        Ok(text) => {
            let _ = std::io::stdout().write_all(text.as_bytes());
            ExitCode::SUCCESS
        }
        Err(Failure::Config(msg)) => {
            eprintln!("error: {}", msg.replace('\n', " "));
            ExitCode::from(1)
        }
        Err(Failure::Runtime(msg)) => {
            eprintln!("error: {}", msg.replace('\n', " "));
            ExitCode::from(2)
        }
    }
}
