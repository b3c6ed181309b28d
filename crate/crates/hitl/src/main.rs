use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use hitl::corpus::{convert_tsv, load_corpus, save_corpus, LoadOptions};
use hitl::orchestrator::{ApplyOutcome, Pipeline, RunConfig, RunError, RunMode, EXIT_PENDING};
use hitl::review::ReviewStore;
use hitl::synth::{generate, SynthSpec};
use hitl::templates::TemplateSet;
use hitl_core::{TaskKind, ThresholdPair};

#[derive(Parser)]
#[command(name = "hitl", version, about = "Confidence-gated ensemble annotation with a human review queue")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct RunArgs {
    /// Run config (TOML).
    #[arg(short, long)]
    config: PathBuf,
    #[arg(long)]
    output_dir: Option<PathBuf>,
    /// Comma-separated task list, e.g. `quality,coverage`.
    #[arg(long, value_delimiter = ',')]
    tasks: Option<Vec<String>>,
    #[arg(long)]
    fraction: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    kw_min: Option<f64>,
    #[arg(long, value_parser = parse_mode)]
    mode: Option<RunMode>,
    /// Ignore and do not write the response cache.
    #[arg(long)]
    no_cache: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Convert a TSV dump to a JSONL corpus, or validate a JSONL corpus.
    Convert {
        input: PathBuf,
        #[arg(short, long)]
        output: Option<PathBuf>,
        /// Reject query groups with fewer than three panes.
        #[arg(long)]
        strict: bool,
    },
    /// Annotate the calibration subset and select thresholds per task.
    Calibrate(RunArgs),
    /// Apply thresholds to the remainder and write final labels.
    Apply {
        #[command(flatten)]
        run: RunArgs,
        /// Explicit `confidence,sd` thresholds instead of the calibrated pair.
        #[arg(long, value_parser = parse_thresholds)]
        thresholds: Option<ThresholdPair>,
    },
    /// Repeat annotation across temperatures and prompt variants.
    Sensitivity(RunArgs),
    /// Fold review-queue labels into the final labels and recompute metrics.
    Report(RunArgs),
    /// Serve the review queue over HTTP.
    ReviewServe {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long)]
        bind: Option<std::net::SocketAddr>,
        /// Directory holding the review UI bundle.
        #[arg(long)]
        static_dir: Option<PathBuf>,
    },
    /// Write a seeded synthetic corpus.
    Synth {
        #[arg(long, default_value_t = 1000)]
        units: usize,
        #[arg(long, value_delimiter = ',', default_value = "quality")]
        tasks: Vec<String>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(short, long)]
        output: PathBuf,
    },
    /// Write the built-in task templates for editing.
    Templates {
        #[arg(short, long)]
        output: PathBuf,
    },
}

fn parse_mode(s: &str) -> Result<RunMode, String> {
    match s {
        "simulation" => Ok(RunMode::Simulation),
        "review" => Ok(RunMode::Review),
        _ => Err(format!("expected `simulation` or `review`, got `{s}`")),
    }
}

fn parse_thresholds(s: &str) -> Result<ThresholdPair, String> {
    let (c, sd) = s.split_once(',').ok_or("expected `confidence,sd`")?;
    let c: f64 = c.trim().parse().map_err(|e| format!("confidence: {e}"))?;
    let sd: f64 = sd.trim().parse().map_err(|e| format!("sd: {e}"))?;
    if !c.is_finite() || !sd.is_finite() {
        return Err("thresholds must be finite".into());
    }
    Ok(ThresholdPair::new(c, sd))
}

fn parse_tasks(names: &[String]) -> Result<Vec<TaskKind>, RunError> {
    names
        .iter()
        .map(|n| TaskKind::parse(n.trim()).map_err(|_| RunError::Config(format!("unknown task `{n}`"))))
        .collect()
}

impl RunArgs {
    fn config(&self) -> Result<RunConfig, RunError> {
        let mut cfg = RunConfig::load(&self.config)?;
        if let Some(d) = &self.output_dir {
            cfg.output_dir = d.clone();
        }
        if let Some(t) = &self.tasks {
            cfg.tasks = parse_tasks(t)?;
        }
        if let Some(f) = self.fraction {
            cfg.calibration.fraction = f;
        }
        if let Some(s) = self.seed {
            cfg.calibration.seed = s;
        }
        if let Some(k) = self.kw_min {
            cfg.calibration.kw_min = k;
        }
        if let Some(m) = self.mode {
            cfg.mode = m;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    fn pipeline(&self) -> Result<Pipeline, RunError> {
        Pipeline::load(self.config()?, !self.no_cache)
    }
}

fn summarize(outcome: &ApplyOutcome) -> ExitCode {
    for (task, r) in &outcome.tasks {
        let kw = r.metrics.as_ref().map_or("n/a".to_string(), |m| format!("{:.3}", m.kw));
        let her = r.labels.her().map_or("n/a".to_string(), |h| format!("{h:.1}%"));
        println!(
            "{:<12} units {:>5}  flagged {:>5}  pending {:>5}  kw {kw}  her {her}",
            task.as_str(),
            r.labels.len(),
            r.labels.flagged(),
            r.pending()
        );
    }
    if let Some(h) = outcome.overall_her {
        println!("overall her {h:.1}%");
    }
    if outcome.pending() > 0 {
        eprintln!("{} flagged units await review", outcome.pending());
        ExitCode::from(EXIT_PENDING as u8)
    } else {
        ExitCode::SUCCESS
    }
}

async fn run(cli: Cli) -> Result<ExitCode, RunError> {
    match cli.command {
        Command::Convert { input, output, strict } => {
            let corpus = if input.extension().is_some_and(|e| e == "jsonl") {
                let loaded = load_corpus(&input, LoadOptions { strict_groups: strict })?;
                for w in &loaded.warnings {
                    eprintln!("warning: {w}");
                }
                loaded.corpus
            } else {
                let f = std::fs::File::open(&input).map_err(RunError::io(input.display().to_string()))?;
                convert_tsv(f)?
            };
            if let Some(out) = output {
                save_corpus(&corpus, &out).map_err(RunError::io(out.display().to_string()))?;
            }
            println!("{}", serde_json::to_string_pretty(&corpus.summary()).expect("summary serializes"));
            Ok(ExitCode::SUCCESS)
        }
        Command::Calibrate(args) => {
            let p = args.pipeline()?;
            for (task, o) in p.calibrate().await? {
                let sel = o.selected_point();
                println!(
                    "{:<12} confidence {:.2}  sd {:.2}  kw {:.3}  her {:.1}%  ({} grid points)",
                    task.as_str(),
                    sel.thresholds.confidence_threshold,
                    sel.thresholds.sd_threshold,
                    sel.kw,
                    100.0 - 100.0 * sel.human_effort,
                    o.points.len()
                );
                if let Some(w) = &o.warning {
                    eprintln!("warning ({}): {w}", task.as_str());
                }
            }
            Ok(ExitCode::SUCCESS)
        }
        Command::Apply { run, thresholds } => {
            let p = run.pipeline()?;
            Ok(summarize(&p.apply(thresholds).await?))
        }
        Command::Sensitivity(args) => {
            let p = args.pipeline()?;
            for g in p.sensitivity().await? {
                println!("{}", hitl::orchestrator::report::sensitivity_table(&g.name, &g.stats));
            }
            Ok(ExitCode::SUCCESS)
        }
        Command::Report(args) => {
            let p = args.pipeline()?;
            Ok(summarize(&p.report()?))
        }
        Command::ReviewServe { run, bind, static_dir } => {
            let cfg = run.config()?;
            let token = match &cfg.review.token_env {
                Some(var) => Some(
                    std::env::var(var).map_err(|_| RunError::Config(format!("environment variable {var} is not set")))?,
                ),
                None => None,
            };
            let store = ReviewStore::open(&cfg.review_log())?;
            hitl::review::serve(
                store,
                bind.unwrap_or(cfg.review.bind),
                token,
                static_dir.or(cfg.review.static_dir.clone()),
            )
            .await
            .map_err(|e| RunError::Internal(e.to_string()))?;
            Ok(ExitCode::SUCCESS)
        }
        Command::Synth { units, tasks, seed, output } => {
            let corpus = generate(&SynthSpec::new(units, parse_tasks(&tasks)?, seed));
            save_corpus(&corpus, &output).map_err(RunError::io(output.display().to_string()))?;
            println!("wrote {} units to {}", corpus.len(), output.display());
            Ok(ExitCode::SUCCESS)
        }
        Command::Templates { output } => {
            TemplateSet::write_defaults(&output).map_err(RunError::io(output.display().to_string()))?;
            Ok(ExitCode::SUCCESS)
        }
    }
}

#[tokio::main]
async fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| "warn".into()),
        )
        .with_writer(std::io::stderr)
        .init();
    match run(Cli::parse()).await {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
