use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use moviedesc::pipeline::{self, Pipeline, PipelineConfig, Stage, StageOptions, OUT_DIR_ENV};
use moviedesc::synth::{self, SynthConfig};
use moviedesc::{Error, Result};

#[derive(Parser)]
#[command(
    name = "moviedesc",
    version,
    about = "Movie description pipeline: labels, classifiers, LSTM, metrics, analysis"
)]
struct Cli {
    /// Pipeline configuration (TOML).
    #[arg(long, short, global = true, default_value = "moviedesc.toml")]
    config: PathBuf,

    /// Output directory; overrides the config file and $MOVIEDESC_OUT_DIR.
    #[arg(long, global = true)]
    out_dir: Option<PathBuf>,

    /// Minimum training occurrences for a label.
    #[arg(long, global = true)]
    min_count: Option<usize>,

    /// Validation ROC-AUC a classifier needs to be kept.
    #[arg(long, global = true)]
    roc_threshold: Option<f64>,

    /// Number of independently seeded networks averaged at generation.
    #[arg(long, global = true)]
    ensemble_size: Option<usize>,

    /// Applied to every grid entry.
    #[arg(long, global = true)]
    max_iters: Option<usize>,

    /// Applied to every grid entry.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Visual kNN neighborhood size.
    #[arg(long, global = true)]
    k: Option<usize>,

    /// Mean-filter window for difficulty curves.
    #[arg(long, global = true)]
    window: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic corpus and a matching moviedesc.toml into DIR.
    Synth {
        dir: PathBuf,
        #[arg(long, default_value_t = SynthConfig::default().seed)]
        corpus_seed: u64,
    },
    /// Mine labels from the training annotations and assign groups.
    ExtractLabels,
    /// Train one linear classifier per label.
    TrainClassifiers,
    /// Keep classifiers whose validation ROC-AUC reaches the threshold.
    Select,
    /// Score every split with the selected classifiers.
    Score,
    /// Train the LSTM ensemble on training score vectors.
    TrainLstm {
        /// Sweep every lstm.grid entry, write grid_summary.csv, keep the best.
        #[arg(long)]
        grid: bool,
    },
    /// Generate one sentence per test clip.
    Generate,
    /// Score generated sentences against the test references.
    Evaluate,
    /// Difficulty curves, retrieval baselines, topic and extremes reports.
    Analyze,
    /// Run every stage in order.
    Run {
        /// Sweep the LSTM grid in the train-lstm stage.
        #[arg(long)]
        grid: bool,
    },
}

fn load_config(cli: &Cli) -> Result<PipelineConfig> {
    let mut cfg = PipelineConfig::load(&cli.config)?;
    if let Ok(dir) = std::env::var(OUT_DIR_ENV) {
        cfg.paths.out_dir = PathBuf::from(dir);
    }
    if let Some(d) = &cli.out_dir {
        cfg.paths.out_dir = d.clone();
    }
    if let Some(v) = cli.min_count {
        cfg.labels.min_count = v;
    }
    if let Some(v) = cli.roc_threshold {
        cfg.classifiers.roc_threshold = v;
    }
    if let Some(v) = cli.ensemble_size {
        cfg.lstm.ensemble_size = v;
    }
    for n in &mut cfg.lstm.grid {
        if let Some(v) = cli.max_iters {
            n.max_iters = v;
        }
        if let Some(v) = cli.seed {
            n.seed = v;
        }
    }
    if let Some(v) = cli.k {
        cfg.analysis.k = v;
    }
    if let Some(v) = cli.window {
        cfg.analysis.window = v;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn write_synth(dir: &Path, seed: u64) -> Result<()> {
    let corpus = synth::generate(&SynthConfig {
        seed,
        ..SynthConfig::default()
    });
    synth::write_corpus(&corpus, dir)?;
    let cfg = pipeline::synthetic_config(Path::new("."), Path::new("out"));
    moviedesc::io::write_atomic(&dir.join("moviedesc.toml"), cfg.to_toml()?.as_bytes())?;
    eprintln!(
        "wrote synthetic corpus and moviedesc.toml to {}",
        dir.display()
    );
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    let (stage, opts) = match cli.command {
        Command::Synth {
            ref dir,
            corpus_seed,
        } => return write_synth(dir, corpus_seed),
        Command::ExtractLabels => (Some(Stage::ExtractLabels), StageOptions::default()),
        Command::TrainClassifiers => (Some(Stage::TrainClassifiers), StageOptions::default()),
        Command::Select => (Some(Stage::Select), StageOptions::default()),
        Command::Score => (Some(Stage::Score), StageOptions::default()),
        Command::TrainLstm { grid } => (Some(Stage::TrainLstm), StageOptions { grid }),
        Command::Generate => (Some(Stage::Generate), StageOptions::default()),
        Command::Evaluate => (Some(Stage::Evaluate), StageOptions::default()),
        Command::Analyze => (Some(Stage::Analyze), StageOptions::default()),
        Command::Run { grid } => (None, StageOptions { grid }),
    };
    let p = Pipeline::new(load_config(&cli)?)?;
    let stages: Vec<Stage> = match stage {
        Some(s) => vec![s],
        None => Stage::ALL.to_vec(),
    };
    for s in stages {
        p.run_stage(s, opts)?;
        eprintln!("{s}: ok");
        if s == Stage::Evaluate {
            let summary = p.out_dir().join("summary.txt");
            let text = std::fs::read_to_string(&summary).map_err(|e| Error::Io {
                path: summary.clone(),
                source: e,
            })?;
            print!("{text}");
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
