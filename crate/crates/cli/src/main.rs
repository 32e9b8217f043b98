use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use treekin::dynamics::simulate;
use treekin::graph::random_tree;
use treekin::harness::io::{self, PanelFormat};
use treekin::harness::{
    compare_topologies, reconstruct_from_field, run_pipeline, ExperimentConfig, HarnessError,
    PruneMode, ReconstructOptions, ScoreChoice,
};
use treekin::spectral::{welch_cross_psd, DetrendMode, Taper, WelchConfig};
use treekin::wiener::ThresholdPolicy;

#[derive(Parser)]
#[command(
    name = "treekin",
    version,
    about = "Tree topology reconstruction from nodal time series"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Strict,
    Robust,
}

#[derive(Clone, Copy, ValueEnum)]
enum ScoreArg {
    Auto,
    FilterRms,
    PartialCoherence,
}

#[derive(Clone, Copy, ValueEnum)]
enum TaperArg {
    Hann,
    Rectangular,
}

#[derive(Clone, Copy, ValueEnum)]
enum DetrendArg {
    None,
    Mean,
    Difference,
}

#[derive(Subcommand)]
enum Command {
    /// Random labelled tree as graph JSON.
    GenTree {
        #[arg(long)]
        nodes: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 4)]
        min_diameter: usize,
        /// Output file; stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Simulate the model of an experiment config and write the panel
    /// (CSV for `.csv` paths, binary with sidecar otherwise).
    Simulate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        samples: Option<usize>,
    },
    /// Welch cross-PSD of a panel, written as a JSON header plus `.bin` payload.
    Psd {
        #[arg(long)]
        panel: PathBuf,
        #[arg(long, default_value_t = 1024)]
        window: usize,
        #[arg(long, default_value_t = 0.5)]
        overlap: f64,
        #[arg(long, value_enum, default_value_t = TaperArg::Hann)]
        taper: TaperArg,
        #[arg(long, value_enum, default_value_t = DetrendArg::Mean)]
        detrend: DetrendArg,
        /// Sampling interval for CSV panels.
        #[arg(long)]
        dt: Option<f64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Kin graph and tree from a spectral field.
    Reconstruct {
        #[arg(long)]
        psd: PathBuf,
        /// gap | fixed:<tau> | significance[:<alpha>]
        #[arg(long, value_parser = parse_policy)]
        policy: Option<ThresholdPolicy>,
        #[arg(long, value_enum, default_value_t = ModeArg::Strict)]
        mode: ModeArg,
        #[arg(long, value_enum, default_value_t = ScoreArg::Auto)]
        score: ScoreArg,
        #[arg(long)]
        ridge: Option<f64>,
        #[arg(long)]
        out: PathBuf,
        /// Where to write the selected kin graph.
        #[arg(long)]
        kin_out: Option<PathBuf>,
        /// Where to write the per-edge decision log.
        #[arg(long)]
        provenance: Option<PathBuf>,
    },
    /// Full experiment: simulate or load, estimate, reconstruct, evaluate.
    Pipeline {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out_dir: Option<PathBuf>,
    },
    /// Compare an estimated graph with the truth.
    Eval {
        #[arg(long)]
        estimated: PathBuf,
        #[arg(long)]
        truth: PathBuf,
    },
}

fn parse_policy(s: &str) -> Result<ThresholdPolicy, String> {
    ThresholdPolicy::parse(s).map_err(|e| e.to_string())
}

fn print_json<T: serde::Serialize>(value: &T) -> Result<(), HarnessError> {
    let text = serde_json::to_string_pretty(value).map_err(|e| HarnessError::Io {
        path: PathBuf::from("<stdout>"),
        message: e.to_string(),
    })?;
    println!("{text}");
    Ok(())
}

fn run(cli: Cli) -> Result<(), HarnessError> {
    match cli.command {
        Command::GenTree {
            nodes,
            seed,
            min_diameter,
            out,
        } => {
            let tree = random_tree(nodes, seed, min_diameter)
                .map_err(|e| HarnessError::Config(e.to_string()))?;
            match out {
                Some(p) => io::save_graph(&p, tree.graph()),
                None => print_json(&tree.graph().to_document()),
            }
        }
        Command::Simulate {
            config,
            out,
            seed,
            samples,
        } => {
            let cfg = ExperimentConfig::load(&config)?;
            let model = cfg
                .model()?
                .ok_or_else(|| HarnessError::Config("config has no model".into()))?;
            let sim = cfg
                .simulation
                .clone()
                .ok_or_else(|| HarnessError::Config("config has no simulation section".into()))?;
            let dss = model
                .discretize()
                .map_err(|e| HarnessError::stage("simulate", e))?;
            let burn_in = sim.burn_in.unwrap_or_else(|| dss.suggested_burn_in());
            let panel = simulate(
                &dss,
                model.noise(),
                samples.unwrap_or(sim.n_samples),
                seed.unwrap_or(sim.seed),
                burn_in,
            )
            .map_err(|e| HarnessError::stage("simulate", e))?;
            io::save_panel(&out, &panel, PanelFormat::from_path(&out))
        }
        Command::Psd {
            panel,
            window,
            overlap,
            taper,
            detrend,
            dt,
            out,
        } => {
            let cfg = WelchConfig {
                window_len: window,
                overlap,
                taper: match taper {
                    TaperArg::Hann => Taper::Hann,
                    TaperArg::Rectangular => Taper::Rectangular,
                },
                detrend: match detrend {
                    DetrendArg::None => DetrendMode::None,
                    DetrendArg::Mean => DetrendMode::Mean,
                    DetrendArg::Difference => DetrendMode::Difference,
                },
            };
            cfg.validate()
                .map_err(|e| HarnessError::Config(e.to_string()))?;
            let p = io::load_panel(&panel, PanelFormat::from_path(&panel), dt)?;
            let field =
                welch_cross_psd(&p, &cfg).map_err(|e| HarnessError::stage("spectral", e))?;
            io::save_field(&out, &field)
        }
        Command::Reconstruct {
            psd,
            policy,
            mode,
            score,
            ridge,
            out,
            kin_out,
            provenance,
        } => {
            let field = io::load_field(&psd)?;
            let opts = ReconstructOptions {
                ridge,
                score: match score {
                    ScoreArg::Auto => ScoreChoice::Auto,
                    ScoreArg::FilterRms => ScoreChoice::FilterRms,
                    ScoreArg::PartialCoherence => ScoreChoice::PartialCoherence,
                },
                policy,
                mode: match mode {
                    ModeArg::Strict => PruneMode::Strict,
                    ModeArg::Robust => PruneMode::Robust,
                },
            };
            let r = reconstruct_from_field(&field, &opts)?;
            if let Some(p) = kin_out {
                io::save_graph(&p, &r.selection.graph)?;
            }
            if let Some(p) = provenance {
                io::write_json(&p, &r.reconstruction.provenance())?;
            }
            eprintln!(
                "policy {} threshold {:e}: {} kin edges",
                r.selection.policy,
                r.selection.threshold,
                r.selection.graph.edge_count()
            );
            io::save_graph(&out, &r.reconstruction.tree)
        }
        Command::Pipeline { config, out_dir } => {
            let mut cfg = ExperimentConfig::load(&config)?;
            if let Some(d) = out_dir {
                // Command-line paths are relative to the working directory.
                cfg.output.dir = Some(absolute(&d));
            }
            let report = run_pipeline(&cfg)?;
            print_json(&report)
        }
        Command::Eval { estimated, truth } => {
            let est = io::load_graph(&estimated)?;
            let tru = io::load_graph(&truth)?;
            print_json(&compare_topologies(&est, &tru)?)
        }
    }
}

fn absolute(p: &Path) -> PathBuf {
    std::path::absolute(p).unwrap_or_else(|_| p.to_path_buf())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
