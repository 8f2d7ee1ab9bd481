use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use serde_json::json;

use modelrisk::calibrate::{calibrate_black_scholes, calibrate_dupire, DupireConfig};
use modelrisk::experiments::{build_models, report, run_base_case, run_correlation_sweep, run_recalibration, ExperimentConfig};
use modelrisk::heston::QuoteSurface;
use modelrisk::mc::simulate_heston;
use modelrisk::{Error, Result};

#[derive(Parser)]
#[command(name = "modelrisk", version, about = "American put exercise under model misspecification")]
struct Cli {
    /// TOML file with ExperimentConfig fields; defaults to the base case.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true)]
    paths: Option<usize>,
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Override the Heston correlation.
    #[arg(long, global = true, allow_hyphen_values = true)]
    rho: Option<f64>,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Quote surface, Black-Scholes vol and Dupire surface.
    Calibrate,
    /// Exercise boundary of one model.
    Boundary {
        #[arg(long, value_enum)]
        model: Model,
    },
    /// Heston paths to <out>/paths.bin and paths.json.
    Simulate,
    /// Run a study.
    Experiment {
        #[arg(value_enum)]
        which: Study,
    },
    /// Print tables from the summaries under --out.
    Report,
    /// Write the effective config as TOML.
    Config,
}

#[derive(Clone, Copy, ValueEnum)]
enum Model {
    Bs,
    Dupire,
    Heston,
}

#[derive(Clone, Copy, ValueEnum)]
enum Study {
    Base,
    Corr,
    Recal,
}

fn load(cli: &Cli) -> Result<ExperimentConfig> {
    let mut cfg = match &cli.config {
        Some(p) => ExperimentConfig::from_file(p)?,
        None => ExperimentConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(n) = cli.paths {
        cfg.paths = n;
    }
    if let Some(o) = &cli.out {
        cfg.out_dir = o.clone();
    }
    if let Some(r) = cli.rho {
        cfg.heston = cfg.heston.with_rho(r);
    }
    cfg.validate()?;
    Ok(cfg)
}

fn run(cli: Cli) -> Result<()> {
    let cfg = load(&cli)?;
    fs::create_dir_all(&cfg.out_dir)?;
    let p = cfg.heston;
    match cli.cmd {
        Cmd::Calibrate => {
            let quotes = QuoteSurface::from_heston(&p, &cfg.quote_strikes, &cfg.quote_maturities)?;
            let sigma = calibrate_black_scholes(&quotes, cfg.bs_ref_strike, cfg.bs_ref_maturity)?;
            let dcfg = DupireConfig { solver: modelrisk::pde1d::Solver1DConfig { n1: cfg.n_steps, ..cfg.solver_1d }, ..cfg.dupire };
            let (lv, rep) = calibrate_dupire(&quotes, &dcfg)?;
            quotes.write_csv(&cfg.out_dir.join("quotes.csv"))?;
            lv.write_csv(&cfg.out_dir.join("local_vol.csv"))?;
            rep.write_json(&cfg.out_dir.join("calibration_report.json"))?;
            let bs = json!({ "bs_sigma": sigma, "ref_strike": cfg.bs_ref_strike, "ref_maturity": cfg.bs_ref_maturity });
            fs::write(cfg.out_dir.join("bs_calibration.json"), serde_json::to_string_pretty(&bs)?)?;
            println!("bs sigma {sigma:.7}; dupire mean rel. error {:.4}%", 100.0 * rep.mean_rel_error);
        }
        Cmd::Boundary { model } => {
            let m = build_models(&cfg, &p, None)?;
            let path = match model {
                Model::Bs => {
                    let f = cfg.out_dir.join("boundary_bs.csv");
                    m.bs.write_csv(&f)?;
                    f
                }
                Model::Dupire => {
                    let f = cfg.out_dir.join("boundary_dupire.csv");
                    m.dupire.write_csv(&f)?;
                    f
                }
                Model::Heston => {
                    let f = cfg.out_dir.join("boundary_heston.csv");
                    m.heston.write_csv(&f, true)?;
                    f
                }
            };
            println!("wrote {}", path.display());
        }
        Cmd::Simulate => {
            let set = simulate_heston(&p, cfg.paths, cfg.n_steps, cfg.maturity, cfg.seed)?;
            set.save(&cfg.out_dir, "paths")?;
            println!("wrote {} paths x {} steps to {}", set.n_paths, set.n_steps, cfg.out_dir.display());
        }
        Cmd::Experiment { which } => {
            match which {
                Study::Base => {
                    run_base_case(&cfg)?;
                }
                Study::Corr => {
                    run_correlation_sweep(&cfg)?;
                }
                Study::Recal => {
                    run_recalibration(&cfg)?;
                }
            }
            print!("{}", report(&cfg.out_dir)?);
        }
        Cmd::Report => print!("{}", report(&cfg.out_dir)?),
        Cmd::Config => print!("{}", cfg.to_toml()?),
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn exit_code(e: &Error) -> u8 {
    e.exit_code() as u8
}
