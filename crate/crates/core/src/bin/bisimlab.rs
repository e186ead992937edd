use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use bisimlab::analysis::Verdict;
use bisimlab::bisim::AuxTolerance;
use bisimlab::dataset::TransitionDataset;
use bisimlab::mdp::{counting_abstract_mdp, DeterministicMdp};
use bisimlab::pipeline::{self, Engine, ExperimentConfig, Preset};
use bisimlab::train::AuxMode;
use bisimlab::Error;

#[derive(Parser)]
#[command(name = "bisimlab", version, about = "Bisimulation analysis and collapse experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Largest bisimulation complement R* of a deterministic MDP.
    Bisim {
        /// MDP JSON file.
        #[arg(long, conflicts_with = "counting")]
        mdp: Option<PathBuf>,
        /// Use the abstract counting MDP with MAX_COUNT and target N.
        #[arg(long, num_args = 2, value_names = ["MAX_COUNT", "N"])]
        counting: Option<Vec<usize>>,
        #[arg(long, default_value = "naive")]
        engine: Engine,
        #[arg(long, default_value_t = 0.0)]
        aux_tolerance: f64,
        #[arg(long, default_value = "out/bisim")]
        out_dir: PathBuf,
    },
    /// R*_D of a transition dataset.
    EmpiricalBisim {
        dataset: PathBuf,
        #[arg(long, default_value_t = 0.0)]
        aux_tolerance: f64,
        #[arg(long, default_value = "out/empirical")]
        out_dir: PathBuf,
    },
    /// Roll out the random policy and store the dataset.
    Collect(ExperimentArgs),
    /// Train encoder, dynamics and auxiliary head.
    Train(ExperimentArgs),
    /// PCA, distance matrix and cluster statistics of a checkpoint.
    Analyze(CheckpointArgs),
    /// Check that no pair in R* collapses under the trained encoder.
    Verify(CheckpointArgs),
}

#[derive(Args)]
struct ExperimentArgs {
    #[arg(long)]
    preset: Option<Preset>,
    /// JSON config; its fields override the preset, flags override both.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out_dir: Option<PathBuf>,
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long)]
    c_p: Option<f64>,
    #[arg(long)]
    latent_dim: Option<usize>,
    /// reward | random:<dim> | none
    #[arg(long)]
    aux: Option<AuxMode>,
    #[arg(long)]
    no_dyn_loss: bool,
    #[arg(long)]
    eps_collapse: Option<f64>,
}

#[derive(Args)]
struct CheckpointArgs {
    /// Defaults to best.ckpt inside --out-dir.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    #[arg(long, default_value = "out")]
    out_dir: PathBuf,
    #[arg(long)]
    eps_collapse: Option<f64>,
}

impl ExperimentArgs {
    fn resolve(&self) -> bisimlab::Result<ExperimentConfig> {
        let overrides = match &self.config {
            Some(path) => Some(serde_json::from_str(&std::fs::read_to_string(path)?)?),
            None => None,
        };
        let mut cfg = ExperimentConfig::resolve(self.preset, overrides.as_ref())?;
        if let Some(seed) = self.seed {
            cfg.seed = seed;
        }
        if let Some(dir) = &self.out_dir {
            cfg.out_dir = dir.clone();
        }
        if let Some(steps) = self.steps {
            cfg.train.steps = steps;
        }
        if let Some(c_p) = self.c_p {
            cfg.train.c_p = c_p;
        }
        if let Some(d) = self.latent_dim {
            cfg.train.latent_dim = d;
        }
        if let Some(aux) = self.aux {
            cfg.train.aux_mode = aux;
        }
        if self.no_dyn_loss {
            cfg.train.dyn_loss_enabled = false;
        }
        if self.eps_collapse.is_some() {
            cfg.analysis.eps_collapse = self.eps_collapse;
        }
        cfg.propagate_seed();
        cfg.validate()?;
        Ok(cfg)
    }
}

impl CheckpointArgs {
    fn checkpoint(&self) -> PathBuf {
        self.checkpoint
            .clone()
            .unwrap_or_else(|| self.out_dir.join("best.ckpt"))
    }
}

const EXIT_VALIDATION: u8 = 2;
const EXIT_VERIFICATION_FAILED: u8 = 3;
const EXIT_DIVERGENCE: u8 = 4;

fn exit_code(err: &Error) -> u8 {
    match err {
        Error::Divergence { .. } | Error::NonFinite(_) | Error::NoConvergence(_) => EXIT_DIVERGENCE,
        _ => EXIT_VALIDATION,
    }
}

fn print_json(value: &impl serde::Serialize) -> bisimlab::Result<()> {
    println!("{}", serde_json::to_string_pretty(value)?);
    Ok(())
}

fn run(cli: Cli) -> bisimlab::Result<u8> {
    match cli.command {
        Command::Bisim {
            mdp,
            counting,
            engine,
            aux_tolerance,
            out_dir,
        } => {
            let mdp = match (mdp, counting) {
                (Some(path), _) => DeterministicMdp::load_json(path)?,
                (None, Some(c)) => counting_abstract_mdp(c[0], c[1])?,
                (None, None) => {
                    return Err(Error::InvalidConfig("pass --mdp FILE or --counting MAX N".into()))
                }
            };
            let (summary, _) = pipeline::cmd_bisim(&mdp, engine, AuxTolerance(aux_tolerance), &out_dir)?;
            print_json(&summary)?;
        }
        Command::EmpiricalBisim {
            dataset,
            aux_tolerance,
            out_dir,
        } => {
            let dataset = TransitionDataset::load(dataset)?;
            let (summary, _) = pipeline::cmd_empirical_bisim(&dataset, AuxTolerance(aux_tolerance), &out_dir)?;
            print_json(&summary)?;
        }
        Command::Collect(args) => {
            let manifest = pipeline::cmd_collect(&args.resolve()?)?;
            print_json(&manifest.artifacts)?;
        }
        Command::Train(args) => {
            let (outcome, _) = pipeline::cmd_train(&args.resolve()?)?;
            print_json(&outcome.last_report)?;
        }
        Command::Analyze(args) => {
            let (summary, _) = pipeline::cmd_analyze(&args.checkpoint(), &args.out_dir)?;
            print_json(&summary)?;
        }
        Command::Verify(args) => {
            let (report, _) = pipeline::cmd_verify(&args.checkpoint(), args.eps_collapse, &args.out_dir)?;
            print_json(&report.to_json())?;
            if report.verdict == Verdict::Fail {
                return Ok(EXIT_VERIFICATION_FAILED);
            }
        }
    }
    Ok(0)
}

fn main() -> ExitCode {
    env_logger::init();
    if let Some(n) = std::env::var("BISIMLAB_THREADS").ok().and_then(|v| v.parse().ok()) {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            log::warn!("could not size thread pool: {e}");
        }
    }
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { EXIT_VALIDATION } else { 0 });
        }
    };
    match run(cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
