use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use ndarray::Axis;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use polyreach::io::{
    load_config, load_result, project_2d, save_polygon_csv, save_result, save_text, save_weights,
    trajectories_csv, RunConfig,
};
use polyreach::network::SequentialReluNetwork;
use polyreach::oracle::simulate;
use polyreach::reach::reach;
use polyreach::Error;

const EXIT_FAILURE: u8 = 1;
const EXIT_CONFIG: u8 = 2;
const EXIT_CAP: u8 = 3;
const EXIT_AUDIT: u8 = 4;

#[derive(Parser)]
#[command(name = "polyreach", version, about = "Template polytope reachability for ReLU-controlled affine systems")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Overrides {
    /// BnB accuracy (absolute gap)
    #[arg(long = "eps")]
    epsilon: Option<f64>,
    /// Cosine pruning threshold
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long)]
    horizon: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Compute over-approximations of the reachable sets
    Reach {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Sample closed-loop trajectories to CSV
    Simulate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 1000)]
        samples: usize,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Export a 2-D projection of one step's polytope as CSV
    Project {
        #[arg(long)]
        result: PathBuf,
        #[arg(long)]
        step: usize,
        #[arg(long, value_parser = parse_dims, default_value = "0,1")]
        dims: (usize, usize),
        #[arg(long, default_value_t = 64)]
        angles: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Audit a result file against fresh simulations
    Check {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        result: PathBuf,
        #[arg(long, default_value_t = 10_000)]
        samples: usize,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value_t = 1e-6)]
        tol: f64,
    },
    /// Write a randomly initialized controller weights file
    RandomWeights {
        /// Layer widths, input first, e.g. 2,10,5,1
        #[arg(long, value_delimiter = ',', required = true)]
        widths: Vec<usize>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
}

fn parse_dims(s: &str) -> Result<(usize, usize), String> {
    let (i, j) = s.split_once(',').ok_or("expected i,j")?;
    let i = i.trim().parse().map_err(|e| format!("{e}"))?;
    let j = j.trim().parse().map_err(|e| format!("{e}"))?;
    Ok((i, j))
}

fn apply(cfg: &mut RunConfig, o: &Overrides) -> polyreach::Result<()> {
    if let Some(e) = o.epsilon {
        cfg.epsilon = e;
    }
    if let Some(l) = o.lambda {
        cfg.lambda = l;
    }
    if let Some(h) = o.horizon {
        cfg.horizon = h;
    }
    if let Some(s) = o.seed {
        cfg.seed = s;
    }
    cfg.validate()
}

fn exit_code(err: &Error) -> u8 {
    match err {
        Error::Config { .. }
        | Error::Io { .. }
        | Error::DimensionMismatch { .. }
        | Error::NonFinite(_)
        | Error::InvalidArgument(_) => EXIT_CONFIG,
        Error::NodeCapExceeded { .. } => EXIT_CAP,
        Error::ReachAborted { source, .. } => exit_code(source).max(EXIT_CAP),
        _ => EXIT_FAILURE,
    }
}

fn run(cli: Cli) -> polyreach::Result<u8> {
    match cli.command {
        Command::Reach {
            config,
            out,
            overrides,
        } => {
            let mut cfg = load_config(&config)?;
            apply(&mut cfg, &overrides)?;
            let sys = cfg.system()?;
            match reach(&sys, &cfg.settings()) {
                Ok(r) => {
                    save_result(&r, Some(&cfg), &out)?;
                    let facets: Vec<usize> = r.polytopes.iter().map(|p| p.facets()).collect();
                    println!(
                        "{} steps, facets {:?}, {:.3}s",
                        r.polytopes.len() - 1,
                        facets,
                        r.wall_time.as_secs_f64()
                    );
                    Ok(0)
                }
                Err(Error::ReachAborted {
                    step,
                    direction,
                    source,
                    partial,
                }) => {
                    save_result(&partial, Some(&cfg), &out)?;
                    let err = Error::ReachAborted {
                        step,
                        direction,
                        source,
                        partial,
                    };
                    eprintln!("error: {err}; partial result written to {}", out.display());
                    Ok(exit_code(&err))
                }
                Err(e) => Err(e),
            }
        }
        Command::Simulate {
            config,
            out,
            samples,
            overrides,
        } => {
            let mut cfg = load_config(&config)?;
            apply(&mut cfg, &overrides)?;
            let sys = cfg.system()?;
            let t = simulate(&sys, samples, cfg.horizon, cfg.seed)?;
            save_text(&trajectories_csv(&t.states), &out)?;
            Ok(0)
        }
        Command::Project {
            result,
            step,
            dims,
            angles,
            out,
        } => {
            let saved = load_result(&result)?;
            let poly = saved.result.polytopes.get(step).ok_or_else(|| {
                Error::InvalidArgument(format!(
                    "step {step} not in result (0..={})",
                    saved.result.polytopes.len() - 1
                ))
            })?;
            let vertices = project_2d(poly, dims, angles)?;
            save_polygon_csv(&vertices, &out)?;
            Ok(0)
        }
        Command::Check {
            config,
            result,
            samples,
            seed,
            tol,
        } => {
            let cfg = load_config(&config)?;
            let sys = cfg.system()?;
            let saved = load_result(&result)?;
            let horizon = saved.result.polytopes.len() - 1;
            let t = simulate(&sys, samples, horizon, seed.unwrap_or(cfg.seed))?;
            let mut violations = 0usize;
            let mut worst = f64::NEG_INFINITY;
            for (k, (poly, states)) in saved.result.polytopes.iter().zip(&t.states).enumerate() {
                if poly.dim() != states.ncols() {
                    return Err(Error::Config {
                        path: format!("steps[{k}].C"),
                        message: format!(
                            "polytope dimension {} does not match state dimension {}",
                            poly.dim(),
                            states.ncols()
                        ),
                    });
                }
                for x in states.axis_iter(Axis(0)) {
                    let v = poly.max_violation(x);
                    worst = worst.max(v);
                    if v > tol {
                        violations += 1;
                    }
                }
            }
            println!(
                "checked {} states over {} steps: {violations} violations (worst margin {worst:.3e})",
                samples * (horizon + 1),
                horizon + 1
            );
            Ok(if violations == 0 { 0 } else { EXIT_AUDIT })
        }
        Command::RandomWeights { widths, seed, out } => {
            if widths.len() < 2 || widths.contains(&0) {
                return Err(Error::InvalidArgument(
                    "need at least two positive widths".into(),
                ));
            }
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            save_weights(&SequentialReluNetwork::random(&widths, &mut rng), &out)?;
            Ok(0)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
