use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use consult_core::agents::{PatientMode, PatientPolicy};
use consult_core::backend::ModelSettings;
use consult_core::eval::ExtractionMode;
use consult_core::harness::{
    evaluate_run, render_stats_text, run_benchmark, stats, BackendMode, BackendSettings,
    EvalConfig, HarnessError, RunConfig,
};
use tracing_subscriber::EnvFilter;

const EXIT_PARTIAL: u8 = 1;
const EXIT_CONFIG: u8 = 2;

#[derive(Parser)]
#[command(name = "consult", version, about = "Run and evaluate multi-agent clinical consultations")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Backend {
    Http,
    Scripted,
}

impl From<Backend> for BackendMode {
    fn from(b: Backend) -> Self {
        match b {
            Backend::Http => BackendMode::Http,
            Backend::Scripted => BackendMode::Scripted,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum Extract {
    Rule,
    Model,
}

#[derive(Clone, Copy, ValueEnum)]
enum Patient {
    Record,
    Paraphrase,
}

#[derive(Subcommand)]
enum Command {
    /// Run consultations over a corpus and write one transcript per case.
    Run {
        #[arg(long)]
        corpus: PathBuf,
        /// Taxonomy JSON; the bundled taxonomy when omitted.
        #[arg(long)]
        taxonomy: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "scripted")]
        backend: Backend,
        /// Fixture file or directory of `{case_id}.json` (scripted backend).
        #[arg(long)]
        fixtures: Option<PathBuf>,
        /// Overrides CONSULT_BASE_URL.
        #[arg(long)]
        base_url: Option<String>,
        #[arg(long, default_value = "scripted")]
        model: String,
        #[arg(long, default_value_t = 0.0)]
        temperature: f64,
        #[arg(long, default_value_t = 20)]
        max_turns: u32,
        #[arg(long, default_value_t = 1)]
        concurrency: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        no_gating: bool,
        /// Patient disruption probability per answer.
        #[arg(long, value_name = "RATE")]
        disrupt: Option<f64>,
        #[arg(long, value_enum, default_value = "record")]
        patient: Patient,
        /// Directory of prompt template overrides.
        #[arg(long)]
        prompts: Option<PathBuf>,
    },
    /// Score and match the reports in a transcript directory.
    Evaluate {
        #[arg(long)]
        transcripts: PathBuf,
        #[arg(long)]
        corpus: PathBuf,
        /// ICD-10 index JSON; the bundled subset when omitted.
        #[arg(long)]
        icd: Option<PathBuf>,
        #[arg(long, default_value = "scripted")]
        evaluator: String,
        #[arg(long, value_enum, default_value = "scripted")]
        evaluator_backend: Backend,
        #[arg(long)]
        evaluator_fixtures: Option<PathBuf>,
        #[arg(long)]
        base_url: Option<String>,
        #[arg(long, value_enum, default_value = "rule")]
        extract: Extract,
        #[arg(long)]
        out: PathBuf,
        /// Evaluate transcripts from different run configurations together.
        #[arg(long)]
        force: bool,
        #[arg(long, default_value_t = 1)]
        concurrency: usize,
        #[arg(long)]
        prompts: Option<PathBuf>,
    },
    /// Turn and score distributions of a transcript directory.
    Stats {
        #[arg(long)]
        transcripts: PathBuf,
        #[arg(long)]
        metrics: Option<PathBuf>,
        /// Where to write the JSON document; `stats.json` in the transcript
        /// directory when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn fail(e: HarnessError) -> ExitCode {
    eprintln!("error: {e}");
    if e.is_configuration() {
        ExitCode::from(EXIT_CONFIG)
    } else {
        ExitCode::from(EXIT_PARTIAL)
    }
}

fn write_json<T: serde::Serialize>(path: &PathBuf, value: &T) -> Result<(), HarnessError> {
    let text = serde_json::to_string_pretty(value).expect("documents serialize");
    std::fs::write(path, text + "\n").map_err(|source| HarnessError::Io {
        path: path.clone(),
        source,
    })
}

fn run(cli: Cli) -> Result<ExitCode, HarnessError> {
    match cli.command {
        Command::Run {
            corpus,
            taxonomy,
            backend,
            fixtures,
            base_url,
            model,
            temperature,
            max_turns,
            concurrency,
            seed,
            out,
            no_gating,
            disrupt,
            patient,
            prompts,
        } => {
            let mut config = RunConfig::new(corpus, out);
            config.taxonomy = taxonomy;
            config.prompts = prompts;
            config.backend = BackendSettings {
                mode: backend.into(),
                base_url,
                fixtures,
                model: ModelSettings {
                    model_name: model,
                    temperature,
                    seed: Some(seed),
                    ..ModelSettings::default()
                },
            };
            config.max_turns = max_turns;
            config.concurrency = concurrency;
            config.gating = !no_gating;
            config.patient = match disrupt {
                Some(rate) => PatientPolicy::with_rate(rate, seed),
                None => PatientPolicy {
                    seed,
                    ..PatientPolicy::default()
                },
            };
            config.patient_mode = match patient {
                Patient::Record => PatientMode::Record,
                Patient::Paraphrase => PatientMode::Paraphrase,
            };
            let summary = run_benchmark(&config)?;
            println!(
                "{}/{} cases succeeded; {} requests, {} prompt tokens, {} completion tokens",
                summary.succeeded.len(),
                summary.total,
                summary.usage.requests,
                summary.usage.prompt_tokens,
                summary.usage.completion_tokens
            );
            for f in &summary.failed {
                println!("failed {}: {}", f.case_id, f.error);
            }
            Ok(if summary.all_succeeded() {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(EXIT_PARTIAL)
            })
        }
        Command::Evaluate {
            transcripts,
            corpus,
            icd,
            evaluator,
            evaluator_backend,
            evaluator_fixtures,
            base_url,
            extract,
            out,
            force,
            concurrency,
            prompts,
        } => {
            let mut config = EvalConfig::new(transcripts, corpus);
            config.icd = icd;
            config.prompts = prompts;
            config.evaluator = BackendSettings {
                mode: evaluator_backend.into(),
                base_url,
                fixtures: evaluator_fixtures,
                model: ModelSettings {
                    model_name: evaluator,
                    ..ModelSettings::default()
                },
            };
            config.extraction = match extract {
                Extract::Rule => ExtractionMode::Rule,
                Extract::Model => ExtractionMode::Model,
            };
            config.force = force;
            config.concurrency = concurrency;
            let provider = config.evaluator.provider()?;
            let doc = evaluate_run(&config, provider.as_ref())?;
            write_json(&out, &doc)?;
            for w in &doc.warnings {
                eprintln!("warning: {w}");
            }
            if let Some(m) = &doc.matching {
                println!(
                    "micro P/R/F1 {:.4}/{:.4}/{:.4}; macro P/R/F1 {:.4}/{:.4}/{:.4} over {} cases",
                    m.micro.precision,
                    m.micro.recall,
                    m.micro.f1,
                    m.macro_.precision,
                    m.macro_.recall,
                    m.macro_.f1,
                    m.n
                );
            }
            if let Some(s) = &doc.scores {
                for (section, a) in &s.aspects {
                    println!("{}: {:.2} ± {:.2} (n={})", section.heading(), a.mean, a.stderr, a.n);
                }
            }
            Ok(if doc.is_complete() {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(EXIT_PARTIAL)
            })
        }
        Command::Stats {
            transcripts,
            metrics,
            out,
        } => {
            let doc = stats(&transcripts, metrics.as_deref())?;
            let path = out.unwrap_or_else(|| transcripts.join("stats.json"));
            write_json(&path, &doc)?;
            print!("{}", render_stats_text(&doc));
            Ok(ExitCode::SUCCESS)
        }
    }
}

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(EnvFilter::try_from_default_env().unwrap_or_else(|_| EnvFilter::new("warn")))
        .with_writer(std::io::stderr)
        .init();
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => fail(e),
    }
}
