//! `cpfuse` — command-line front end for the cyber-physical fusion
//! pipeline: scenario generation, ingestion, fusion, analysis, and the
//! full experiment matrix behind a single TOML config.
//!
//! Exit codes: 0 success, 2 config error, 3 data error, 4 numeric
//! failure. Log verbosity is controlled by `CPFUSE_LOG` (`quiet`,
//! `info`; default `info`).

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use cpfuse::fusion::{self, LabelMode, PhysicalMode};
use cpfuse::pipeline::{self, PipelineConfig, PipelineError};

const EXIT_CONFIG: u8 = 2;
const EXIT_DATA: u8 = 3;
const EXIT_NUMERIC: u8 = 4;

#[derive(Parser)]
#[command(name = "cpfuse", version, about = "Cyber-physical data fusion and intrusion detection for DNP3/SCADA traffic")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum PhysicalModeArg {
    Impute,
    Drop,
}

impl PhysicalModeArg {
    fn to_mode(self) -> PhysicalMode {
        match self {
            PhysicalModeArg::Impute => PhysicalMode::Impute,
            PhysicalModeArg::Drop => PhysicalMode::Drop,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum LabelModeArg {
    Snort,
    AttackWindow,
}

impl LabelModeArg {
    fn to_mode(self) -> LabelMode {
        match self {
            LabelModeArg::Snort => LabelMode::Snort,
            LabelModeArg::AttackWindow => LabelMode::AttackWindow,
        }
    }
}

#[derive(Args)]
struct ConfigRun {
    /// Pipeline config (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Output directory for bundles and report tables.
    #[arg(long)]
    out: PathBuf,
    /// Override every seed in the selected section(s).
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Synthesize the configured scenario bundles.
    Generate(ConfigRun),
    /// Load a bundle directory and print record counts.
    Ingest {
        #[arg(long = "in")]
        input: PathBuf,
    },
    /// Fuse one bundle into the 28-column CSV.
    Fuse {
        #[arg(long = "in")]
        input: PathBuf,
        /// Output CSV path (default: <in>/fused.csv).
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "impute")]
        physical_mode: PhysicalModeArg,
        #[arg(long, value_enum, default_value = "attack-window")]
        label_mode: LabelModeArg,
    },
    /// Correlation matrix, normality ranking and PCA summary.
    Featan(ConfigRun),
    /// Supervised classification experiments.
    Learn(ConfigRun),
    /// Unsupervised clustering experiments.
    Cluster(ConfigRun),
    /// Manifold-learning embeddings.
    Manifold(ConfigRun),
    /// Semi-supervised co-training experiment.
    Cotrain(ConfigRun),
    /// Run the full configured experiment matrix and emit the report.
    Report {
        #[command(flatten)]
        run: ConfigRun,
        /// Print a comparison table to stdout (`labels`).
        #[arg(long)]
        compare: Option<String>,
    },
}

fn info(msg: &str) {
    if std::env::var("CPFUSE_LOG").map_or(true, |v| v != "quiet") {
        eprintln!("cpfuse: {msg}");
    }
}

fn exit_for(err: &PipelineError) -> u8 {
    match err {
        PipelineError::Config(_) => EXIT_CONFIG,
        PipelineError::Stage { stage, .. } => match *stage {
            "generate" | "ingest" | "fuse" | "dnp3" | "report" => EXIT_DATA,
            _ => EXIT_NUMERIC,
        },
    }
}

fn fail(err: PipelineError) -> ExitCode {
    eprintln!("cpfuse: error: {err}");
    ExitCode::from(exit_for(&err))
}

fn load_config(path: &Path) -> Result<PipelineConfig, PipelineError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| PipelineError::Config(format!("{}: {e}", path.display())))?;
    let config: PipelineConfig = toml::from_str(&text)
        .map_err(|e| PipelineError::Config(format!("{}: {e}", path.display())))?;
    config.validate()?;
    Ok(config)
}

/// Sections of the experiment matrix a subcommand keeps enabled.
#[derive(Clone, Copy, PartialEq)]
enum Section {
    Featan,
    Learn,
    Cluster,
    Manifold,
    Cotrain,
    All,
}

fn section_default<T: serde::de::DeserializeOwned>() -> T {
    serde_json::from_value(serde_json::json!({})).expect("section defaults deserialize")
}

fn restrict(mut config: PipelineConfig, section: Section, seed: Option<u64>) -> PipelineConfig {
    if section != Section::All {
        config.featan = (section == Section::Featan)
            .then(|| config.featan.unwrap_or_else(section_default));
        config.learn = (section == Section::Learn)
            .then(|| config.learn.unwrap_or_else(section_default));
        config.cluster = (section == Section::Cluster)
            .then(|| config.cluster.unwrap_or_else(section_default));
        config.manifold = (section == Section::Manifold)
            .then(|| config.manifold.unwrap_or_else(section_default));
        config.cotrain = (section == Section::Cotrain)
            .then(|| config.cotrain.unwrap_or_else(section_default));
    }
    if let Some(seed) = seed {
        for entry in &mut config.scenarios {
            entry.spec.seed = seed;
        }
        if let Some(s) = &mut config.learn {
            s.seed = seed;
        }
        if let Some(s) = &mut config.cluster {
            s.seed = seed;
        }
        if let Some(s) = &mut config.manifold {
            s.seed = seed;
        }
        if let Some(s) = &mut config.cotrain {
            s.seed = seed;
        }
    }
    config
}

fn run_section(args: &ConfigRun, section: Section) -> Result<(), PipelineError> {
    let config = restrict(load_config(&args.config)?, section, args.seed);
    let report = pipeline::run_pipeline(&config, &args.out)?;
    let written = report
        .write(&args.out.join("report"))
        .map_err(|e| PipelineError::Stage {
            stage: "report",
            message: e.to_string(),
        })?;
    for path in written {
        info(&format!("wrote {}", path.display()));
    }
    Ok(())
}

fn run(command: Command) -> Result<Option<String>, PipelineError> {
    match command {
        Command::Generate(args) => {
            let config = load_config(&args.config)?;
            for entry in &config.scenarios {
                let mut spec = entry.spec.clone();
                if let Some(seed) = args.seed {
                    spec.seed = seed;
                }
                let dir = args.out.join("scenarios").join(&entry.name);
                cpfuse::scenario::generate_scenario(&spec, &dir).map_err(|e| {
                    PipelineError::Stage {
                        stage: "generate",
                        message: e.to_string(),
                    }
                })?;
                info(&format!("generated {}", dir.display()));
            }
            Ok(None)
        }
        Command::Ingest { input } => {
            let bundle = pipeline::load_bundle(&input)?;
            Ok(Some(format!(
                "packets={} flows={} alerts={} windows={}",
                bundle.packets.len(),
                bundle.flows.len(),
                bundle.alerts.len(),
                bundle.manifest.windows.len()
            )))
        }
        Command::Fuse {
            input,
            out,
            physical_mode,
            label_mode,
        } => {
            let bundle = pipeline::load_bundle(&input)?;
            let table = pipeline::fuse_bundle(&bundle, physical_mode.to_mode())?;
            let labels =
                pipeline::labels_for(&table, label_mode.to_mode(), &bundle.manifest.windows)?;
            let out = out.unwrap_or_else(|| input.join("fused.csv"));
            fusion::write_fused_csv(&table, Some(&labels), &out).map_err(|e| {
                PipelineError::Stage {
                    stage: "fuse",
                    message: e.to_string(),
                }
            })?;
            info(&format!("wrote {}", out.display()));
            Ok(Some(format!("rows={}", table.n_rows())))
        }
        Command::Featan(args) => run_section(&args, Section::Featan).map(|()| None),
        Command::Learn(args) => run_section(&args, Section::Learn).map(|()| None),
        Command::Cluster(args) => run_section(&args, Section::Cluster).map(|()| None),
        Command::Manifold(args) => run_section(&args, Section::Manifold).map(|()| None),
        Command::Cotrain(args) => run_section(&args, Section::Cotrain).map(|()| None),
        Command::Report { run, compare } => {
            let config = restrict(load_config(&run.config)?, Section::All, run.seed);
            let report = pipeline::run_pipeline(&config, &run.out)?;
            report
                .write(&run.out.join("report"))
                .map_err(|e| PipelineError::Stage {
                    stage: "report",
                    message: e.to_string(),
                })?;
            match compare.as_deref() {
                None => Ok(None),
                Some("labels") => {
                    let table = report
                        .tables
                        .iter()
                        .find(|t| t.name == "label_comparison")
                        .ok_or_else(|| {
                            PipelineError::Config(
                                "label comparison needs fuse.label_mode = \"both\"".into(),
                            )
                        })?;
                    Ok(Some(table.to_text()))
                }
                Some(other) => Err(PipelineError::Config(format!(
                    "unknown comparison {other:?} (expected \"labels\")"
                ))),
            }
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(Some(output)) => {
            println!("{output}");
            ExitCode::SUCCESS
        }
        Ok(None) => ExitCode::SUCCESS,
        Err(err) => fail(err),
    }
}
