use std::path::PathBuf;
use std::str::FromStr;

use clap::{Parser, Subcommand};

use ovcal_cli::commands::{
    run_apply, run_eval, run_fit, run_project, run_sweep_k, run_synth, run_td, run_validate,
    ApplyOpts, EvalOpts, FitOpts, FitSplit, ProjectOpts, SweepKOpts, SynthOpts,
};
use ovcal_cli::Method;

/// Post-hoc calibration toolkit for open-vocabulary classifiers.
///
/// Exit codes: 0 success, 1 data or validation error, 2 usage error.
#[derive(Parser)]
#[command(name = "ovcal", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

fn parse_method(s: &str) -> Result<Method, String> {
    Method::from_str(s)
}

fn parse_fit_split(s: &str) -> Result<FitSplit, String> {
    match s {
        "base-fit" => Ok(FitSplit::BaseFit),
        "new-eval" => Ok(FitSplit::NewEval),
        other => Err(format!("unknown fit split '{other}' (base-fit|new-eval)")),
    }
}

fn parse_split(s: &str) -> Result<ovcal::dataset::ArtifactRole, String> {
    use ovcal::dataset::ArtifactRole;
    match s {
        "base-fit" => Ok(ArtifactRole::BaseFit),
        "base-eval" => Ok(ArtifactRole::BaseEval),
        "new-eval" => Ok(ArtifactRole::NewEval),
        other => Err(format!(
            "unknown split '{other}' (base-fit|base-eval|new-eval)"
        )),
    }
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic artifact directory (manifest + tensor files).
    Synth {
        /// Output directory for the artifact files.
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 7)]
        seed: u64,
        #[arg(long, default_value_t = 40)]
        base_classes: usize,
        #[arg(long, default_value_t = 40)]
        new_classes: usize,
        #[arg(long, default_value_t = 64)]
        dim: usize,
        /// Samples per class in each split.
        #[arg(long, default_value_t = 50)]
        samples: usize,
        /// Radial displacement of new-class tuned embeddings.
        #[arg(long, default_value_t = 0.8)]
        gap: f64,
        /// Extra logit sharpening for low-proximity classes.
        #[arg(long, default_value_t = 2.0)]
        sharpness: f64,
        #[arg(long, default_value_t = 100.0)]
        tau: f64,
    },
    /// Cross-check every artifact a manifest references.
    Validate {
        #[arg(long)]
        manifest: PathBuf,
    },
    /// Compute per-class textual-deviation scores.
    Td {
        #[arg(long)]
        manifest: PathBuf,
        /// Neighbor count for the proximity estimate.
        #[arg(long, default_value_t = 5)]
        k: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Fit a calibrator and save it as JSON.
    Fit {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long, value_parser = parse_method)]
        method: Method,
        #[arg(long, default_value_t = 5)]
        k: usize,
        #[arg(long, default_value_t = 10)]
        bins: usize,
        /// Which split the calibrator is fitted on.
        #[arg(long, default_value = "base-fit", value_parser = parse_fit_split)]
        fit_split: FitSplit,
        #[arg(long)]
        out: PathBuf,
    },
    /// Apply a saved calibrator to one split and write the probabilities.
    Apply {
        #[arg(long)]
        manifest: PathBuf,
        /// Path to a model.json produced by `fit`.
        #[arg(long)]
        model: PathBuf,
        #[arg(long, value_parser = parse_split)]
        split: ovcal::dataset::ArtifactRole,
        #[arg(long)]
        out: PathBuf,
    },
    /// Fit, apply, and score one or more methods on both eval splits.
    Eval {
        #[arg(long)]
        manifest: PathBuf,
        /// May be repeated; defaults to every method.
        #[arg(long = "method", value_parser = parse_method)]
        methods: Vec<Method>,
        #[arg(long, default_value_t = 5)]
        k: usize,
        #[arg(long, default_value_t = 10)]
        bins: usize,
        /// Equal-mass proximity bins for the joint partition.
        #[arg(long, default_value_t = 5)]
        prox_bins: usize,
        #[arg(long, default_value = "base-fit", value_parser = parse_fit_split)]
        fit_split: FitSplit,
        #[arg(long)]
        out: PathBuf,
    },
    /// New-split calibration error of the distance-aware method for each k.
    SweepK {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(
            long = "k-list",
            value_delimiter = ',',
            default_value = "1,2,3,4,5,6,7,8,9,10"
        )]
        k_list: Vec<usize>,
        #[arg(long, default_value_t = 10)]
        bins: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Export the rank-2 projection of the joint embedding space.
    Project {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Skip image features even when the manifest carries them.
        #[arg(long)]
        no_images: bool,
    },
}

fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::Synth {
            out,
            seed,
            base_classes,
            new_classes,
            dim,
            samples,
            gap,
            sharpness,
            tau,
        } => run_synth(&SynthOpts {
            out,
            seed,
            base_classes,
            new_classes,
            dim,
            samples,
            gap,
            sharpness,
            tau,
        }),
        Command::Validate { manifest } => run_validate(&manifest),
        Command::Td { manifest, k, out } => run_td(&manifest, k, &out),
        Command::Fit {
            manifest,
            method,
            k,
            bins,
            fit_split,
            out,
        } => run_fit(&FitOpts {
            manifest,
            method,
            k,
            bins,
            fit_split,
            out,
        }),
        Command::Apply {
            manifest,
            model,
            split,
            out,
        } => run_apply(&ApplyOpts {
            manifest,
            model,
            split,
            out,
        }),
        Command::Eval {
            manifest,
            methods,
            k,
            bins,
            prox_bins,
            fit_split,
            out,
        } => {
            let methods = if methods.is_empty() {
                Method::ALL.to_vec()
            } else {
                methods
            };
            run_eval(&EvalOpts {
                manifest,
                methods,
                k,
                bins,
                prox_bins,
                fit_split,
                out,
            })
        }
        Command::SweepK {
            manifest,
            k_list,
            bins,
            out,
        } => run_sweep_k(&SweepKOpts {
            manifest,
            k_list,
            bins,
            out,
        }),
        Command::Project {
            manifest,
            out,
            no_images,
        } => run_project(&ProjectOpts {
            manifest,
            out,
            include_images: !no_images,
        }),
    }
}

fn main() {
    let cli = Cli::parse();
    if let Err(err) = run(cli) {
        eprintln!("error: {err:#}");
        std::process::exit(1);
    }
}
