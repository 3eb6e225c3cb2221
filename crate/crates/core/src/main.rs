use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use wsnet::classical::vca;
use wsnet::harness::config::ConfigMap;
use wsnet::harness::experiment::check_endmember_count;
use wsnet::harness::hsc::{read_abundances, read_cube, write_abundances, write_cube};
use wsnet::harness::outputs::{read_endmembers, write_abundance_outputs, write_endmembers, write_history};
use wsnet::harness::{evaluate, load_scene, observed_cube, run_compare, run_snr_sweep, unmix_fclsu, unmix_wsnet, ExperimentConfig, Evaluation};
use wsnet::mixing::{classify_weak_endmembers, SpectralCube, WeakCriteria};

#[derive(Parser)]
#[command(name = "wsnet", version, about = "Hyperspectral unmixing with WS-Net and VCA/FCLSU baselines")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ExperimentArgs {
    /// `key = value` experiment file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override one key, e.g. `--set lr=6e-3`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    #[arg(long)]
    seed: u64,
    /// Output directory; replaces the `output` key.
    #[arg(long)]
    out: Option<PathBuf>,
}

impl ExperimentArgs {
    fn resolve(&self) -> Result<ExperimentConfig> {
        let mut map = match &self.config {
            Some(p) => ConfigMap::load(p)?,
            None => ConfigMap::default(),
        };
        for o in &self.overrides {
            map.apply_override(o)?;
        }
        map.set("seed", self.seed.to_string())?;
        if let Some(out) = &self.out {
            map.set("output", out.to_string_lossy())?;
        }
        Ok(ExperimentConfig::from_map(&map)?)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Generate the configured scene: noisy cube at the first SNR entry
    /// plus truth endmembers and abundances.
    Synth(ExperimentArgs),
    /// Extract endmembers from a cube.
    Vca {
        #[arg(long)]
        cube: PathBuf,
        #[arg(long)]
        endmembers: usize,
        #[arg(long)]
        seed: u64,
        /// Library CSV whose wavelength column labels the bands.
        #[arg(long)]
        wavelengths: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Abundances for a cube and an endmember library.
    Fclsu {
        #[arg(long)]
        cube: PathBuf,
        #[arg(long)]
        endmembers: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train WS-Net on a cube (default: the configured scene at the first
    /// SNR entry).
    Train {
        #[command(flatten)]
        exp: ExperimentArgs,
        #[arg(long)]
        cube: Option<PathBuf>,
    },
    /// Score estimated endmembers and abundances against the truth.
    Eval {
        #[arg(long)]
        truth_endmembers: PathBuf,
        #[arg(long)]
        truth_abundances: PathBuf,
        #[arg(long)]
        endmembers: PathBuf,
        #[arg(long)]
        abundances: PathBuf,
    },
    /// Every enabled method at every SNR entry.
    SnrSweep(ExperimentArgs),
    /// Method table at the first SNR entry.
    Compare(ExperimentArgs),
}

fn band_labels(cube: &SpectralCube) -> Vec<f64> {
    cube.wavelengths().map(<[f64]>::to_vec).unwrap_or_else(|| (1..=cube.bands()).map(|b| b as f64).collect())
}

fn default_names(r: usize) -> Vec<String> {
    (0..r).map(|i| format!("endmember_{i}")).collect()
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

fn print_evaluation(label: &str, names: &[String], ev: &Evaluation) {
    println!("{label}");
    for (i, n) in names.iter().enumerate() {
        println!("  {n:<18} rmse {:.6}  sad {:.6}", ev.rmse.per_endmember[i], ev.sad.per_endmember[i]);
    }
    println!("  {:<18} rmse {:.6}  sad {:.6}", "mean", ev.rmse.mean, ev.sad.mean);
    if let (Some(r), Some(s)) = (ev.weak_rmse(), ev.weak_sad()) {
        println!("  {:<18} rmse {r:.6}  sad {s:.6}", "weak");
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Synth(args) => {
            let cfg = args.resolve()?;
            let truth = load_scene(&cfg.scene)?;
            let cube = observed_cube(&cfg, &truth, 0)?;
            create_dir(&cfg.output)?;
            write_cube(&cube, cfg.output.join("cube.hsc"))?;
            write_endmembers(&truth.endmembers, &truth.wavelengths, &truth.names, cfg.output.join("endmembers.csv"))?;
            write_abundances(&truth.abundances, cfg.output.join("abundances.hsc"))?;
            write_abundance_outputs(&truth.abundances, cfg.output.join("maps"))?;
            println!(
                "{} bands, {}x{} pixels, {} endmembers -> {}",
                cube.bands(),
                cube.height(),
                cube.width(),
                truth.names.len(),
                cfg.output.display()
            );
        }
        Command::Vca { cube, endmembers, seed, wavelengths, out } => {
            let cube = read_cube(&cube)?;
            let e = vca(&cube, endmembers, seed)?;
            let labels = match wavelengths {
                Some(p) => read_endmembers(&p)?.wavelengths,
                None => band_labels(&cube),
            };
            write_endmembers(&e, &labels, &default_names(endmembers), &out)?;
            println!("{endmembers} endmembers -> {}", out.display());
        }
        Command::Fclsu { cube, endmembers, out } => {
            let cube = read_cube(&cube)?;
            let res = unmix_fclsu(&cube, &read_endmembers(&endmembers)?.endmembers)?;
            create_dir(&out)?;
            write_abundances(&res.abundances, out.join("abundances.hsc"))?;
            write_abundance_outputs(&res.abundances, out.join("maps"))?;
            println!("abundances -> {}", out.display());
        }
        Command::Train { exp, cube } => {
            let cfg = exp.resolve()?;
            if !cfg.run_wsnet {
                bail!("`methods` does not include wsnet");
            }
            let (cube, truth) = match cube {
                Some(p) => (read_cube(&p)?, None),
                None => {
                    let truth = load_scene(&cfg.scene)?;
                    check_endmember_count(&cfg, &truth)?;
                    (observed_cube(&cfg, &truth, 0)?, Some(truth))
                }
            };
            let res = unmix_wsnet(&cube, &cfg.model)?;
            create_dir(&cfg.output)?;
            let names = truth.as_ref().map_or_else(|| default_names(cfg.model.endmembers), |t| t.names.clone());
            write_endmembers(&res.endmembers, &band_labels(&cube), &names, cfg.output.join("endmembers.csv"))?;
            write_abundances(&res.abundances, cfg.output.join("abundances.hsc"))?;
            write_abundance_outputs(&res.abundances, cfg.output.join("maps"))?;
            write_history(&res.history, cfg.output.join("history.csv"))?;
            if let (Some(first), Some(last)) = (res.history.first(), res.history.last()) {
                println!("loss {:.6} -> {:.6} over {} iterations", first.total, last.total, res.history.len());
            }
            if let Some(t) = truth {
                let ev = evaluate(&t.endmembers, &t.abundances, &res.endmembers, &res.abundances)?;
                print_evaluation("WS-Net", &t.names, &ev);
            }
        }
        Command::Eval { truth_endmembers, truth_abundances, endmembers, abundances } => {
            let truth = read_endmembers(&truth_endmembers)?;
            let ta = read_abundances(&truth_abundances)?;
            let weak = classify_weak_endmembers(&truth.endmembers, &ta, &WeakCriteria::default())?;
            let te = truth.endmembers.with_weak(weak)?;
            let ev = evaluate(&te, &ta, &read_endmembers(&endmembers)?.endmembers, &read_abundances(&abundances)?)?;
            print_evaluation("estimate", &truth.names, &ev);
        }
        Command::SnrSweep(args) => {
            let cfg = args.resolve()?;
            let results = run_snr_sweep(&cfg)?;
            for r in &results {
                let snr = r.snr_db.map_or("none".to_string(), |d| format!("{d} dB"));
                println!("{snr:>8}  {:<24} rmse {:.6}  sad {:.6}", r.method, r.evaluation.rmse.mean, r.evaluation.sad.mean);
            }
            println!("-> {}", cfg.output.join("snr_sweep.csv").display());
        }
        Command::Compare(args) => {
            let cfg = args.resolve()?;
            let results = run_compare(&cfg)?;
            for r in &results {
                println!("{:<24} rmse {:.6}  sad {:.6}", r.method, r.evaluation.rmse.mean, r.evaluation.sad.mean);
            }
            println!("-> {}", cfg.output.join("compare.csv").display());
        }
    }
    Ok(())
}

fn main() {
    if let Err(e) = run(Cli::parse()) {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}
