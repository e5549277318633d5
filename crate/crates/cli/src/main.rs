use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use heraldlab_core::pipeline::{
    extract_stage, g2_stage, report_stage, parse_xi_list, run_pipeline, simulate_stage, tomo_stage, RunConfig, Stage,
    VacuumSource, MANIFEST_FILE, QUADS_FILE, TRACES_FILE,
};
use heraldlab_core::selfcheck::run_selfcheck;
use heraldlab_core::Error;

#[derive(Debug, Parser)]
#[command(name = "heraldlab", version, about = "Heralded single-photon source simulator and analysis chain")]
struct Cli {
    /// Flat key = value config file.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Override one config key; repeatable.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// Cap on worker threads.
    #[arg(long, global = true, value_name = "N")]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Simulate a batch of heralded traces.
    Simulate {
        #[arg(long, default_value = TRACES_FILE)]
        out: PathBuf,
        /// Number of traces.
        #[arg(long)]
        n: Option<u64>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Project traces onto the photon mode.
    Extract {
        #[arg(long = "in", default_value = TRACES_FILE)]
        input: PathBuf,
        /// plain or smeared; defaults to the mode the config simulates.
        #[arg(long)]
        mode: Option<String>,
        #[arg(long, default_value = QUADS_FILE)]
        out: PathBuf,
        /// Vacuum reference trace file; synthesized from the config if absent.
        #[arg(long)]
        vacuum: Option<PathBuf>,
    },
    /// Efficiency fit, density matrix and Wigner function.
    Tomo {
        #[arg(long = "in", default_value = QUADS_FILE)]
        input: PathBuf,
        #[arg(long)]
        nmax: Option<usize>,
        /// Detection efficiency to correct for.
        #[arg(long = "loss-correct", value_name = "ETA")]
        loss_correct: Option<f64>,
        /// Skip the loss-corrected outputs.
        #[arg(long, conflicts_with = "loss_correct")]
        no_loss_correct: bool,
        #[arg(long = "out-dir", default_value = ".")]
        out_dir: PathBuf,
    },
    /// Conditional variance and g² against theory.
    G2 {
        #[arg(long = "in", default_value = TRACES_FILE)]
        input: PathBuf,
        /// Low-pass cutoff in Hz.
        #[arg(long)]
        cutoff: Option<f64>,
        /// Comma-separated single-photon contents for the theory curves.
        #[arg(long)]
        xi: Option<String>,
        #[arg(long)]
        vacuum: Option<PathBuf>,
        #[arg(long = "out-dir", default_value = ".")]
        out_dir: PathBuf,
    },
    /// Summary table from the outputs in a directory.
    Report {
        #[arg(long, default_value = ".")]
        dir: PathBuf,
    },
    /// Run the quick invariant suite.
    Selfcheck,
    /// Run several stages in order, wiring files through one directory.
    Run {
        /// Comma-separated stages, or `all`.
        #[arg(long, default_value = "all")]
        stages: String,
        #[arg(long = "out-dir", default_value = ".")]
        out_dir: PathBuf,
        #[arg(long)]
        vacuum: Option<PathBuf>,
        /// Also write manifest.json with digests and timing.
        #[arg(long)]
        manifest: bool,
    },
}

fn vacuum_source(path: Option<PathBuf>) -> VacuumSource {
    path.map_or(VacuumSource::Synthesized, VacuumSource::File)
}

fn ensure_dir(dir: &Path) -> Result<(), Error> {
    std::fs::create_dir_all(dir).map_err(|e| Error::Usage(format!("cannot create {}: {e}", dir.display())))
}

fn run(cli: Cli) -> Result<ExitCode, Error> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(Error::Usage("--threads must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Error::Usage(e.to_string()))?;
    }
    let mut cfg = RunConfig::load(cli.config.as_deref(), &cli.set)?;
    match &cli.command {
        Command::Simulate { n, seed, .. } => {
            if let Some(n) = n {
                cfg.sim.n_traces = *n as usize;
            }
            if let Some(seed) = seed {
                cfg.sim.master_seed = *seed;
            }
        }
        Command::Extract { mode: Some(mode), .. } => {
            cfg.analysis.set("extract_mode", mode).map_err(|e| Error::Usage(e.to_string()))?;
        }
        Command::Tomo {
            nmax,
            loss_correct,
            no_loss_correct,
            ..
        } => {
            if let Some(n) = nmax {
                cfg.analysis.n_max = *n;
                if cfg.analysis.cutoff_check_nmax != 0 && cfg.analysis.cutoff_check_nmax <= *n {
                    cfg.analysis.cutoff_check_nmax = n + 4;
                }
            }
            if loss_correct.is_some() {
                cfg.analysis.eta_meas = *loss_correct;
            }
            if *no_loss_correct {
                cfg.analysis.eta_meas = None;
            }
        }
        Command::G2 { cutoff, xi, .. } => {
            if let Some(c) = cutoff {
                cfg.analysis.g2_cutoff_hz = *c;
            }
            if let Some(xi) = xi {
                cfg.analysis.xi = parse_xi_list(xi)?;
            }
        }
        _ => {}
    }
    cfg.validate()?;

    match cli.command {
        Command::Simulate { out, .. } => {
            simulate_stage(&cfg, &out)?;
            println!("wrote {} ({} traces)", out.display(), cfg.sim.n_traces);
        }
        Command::Extract { input, out, vacuum, .. } => {
            extract_stage(&cfg, &input, &out, &vacuum_source(vacuum))?;
            println!("wrote {} ({} mode)", out.display(), cfg.extraction_mode());
        }
        Command::Tomo { input, out_dir, .. } => {
            ensure_dir(&out_dir)?;
            let (out, s) = tomo_stage(&cfg, &input, &out_dir)?;
            println!("eta_fit = {:.4} ± {:.4}", s.fit.eta, s.fit.std_error);
            let d = s.rho.diagonal();
            println!("rho_00 = {:.4}  rho_11 = {:.4}  rho_22 = {:.4}", d[0], d[1], d[2]);
            println!("W(0,0) = {:.4}  ({} likelihood evaluations)", s.wigner_origin, s.iterations);
            if let Some(shift) = s.cutoff_shift {
                println!("cutoff check: max diagonal shift {shift:.1e}");
            }
            if let Some(c) = &s.corrected {
                println!(
                    "loss-corrected: rho_11 = {:.4}  W(0,0) = {:.4}",
                    c.population(1),
                    heraldlab_core::tomography::wigner_origin(c)
                );
            }
            for p in out.outputs {
                println!("wrote {}", p.display());
            }
        }
        Command::G2 { input, vacuum, out_dir, .. } => {
            ensure_dir(&out_dir)?;
            let (out, s) = g2_stage(&cfg, &input, &out_dir, &vacuum_source(vacuum))?;
            let se = s.g2.stderr.as_ref().map_or(f64::NAN, |e| e[s.peak_index]);
            println!(
                "g2 peak = {:.2} ± {:.2} at {:.0} ns; theory peak {:.2} (xi = {:.4})",
                s.g2.values[s.peak_index],
                se,
                s.g2.tau[s.peak_index] * 1e9,
                s.theory_peak,
                s.configured_xi
            );
            println!("baseline = {:.3} ± {:.3}", s.baseline.value, s.baseline.stderr);
            for p in out.outputs {
                println!("wrote {}", p.display());
            }
        }
        Command::Report { dir } => {
            let (_, report) = report_stage(&cfg, &dir)?;
            print!("{}", report.to_text());
        }
        Command::Selfcheck => {
            let results = run_selfcheck();
            let failed = results.iter().filter(|r| !r.passed).count();
            for r in &results {
                println!("{} {}: {}", if r.passed { "PASS" } else { "FAIL" }, r.name, r.detail);
            }
            if failed > 0 {
                eprintln!("E_SELFCHECK: {failed} of {} checks failed", results.len());
                return Ok(ExitCode::from(3));
            }
        }
        Command::Run {
            stages,
            out_dir,
            vacuum,
            manifest,
        } => {
            let stages = Stage::parse_list(&stages)?;
            let m = run_pipeline(&cfg, &stages, &out_dir, &vacuum_source(vacuum))?;
            for s in &m.stages {
                let files: Vec<&str> = s.outputs.iter().map(|d| d.path.as_str()).collect();
                println!("{:<9} {:6.2} s  {}", s.stage.name(), s.seconds, files.join(" "));
            }
            if manifest {
                let path = out_dir.join(MANIFEST_FILE);
                m.write(&path)?;
                println!("wrote {}", path.display());
            }
            if stages.contains(&Stage::Report) {
                print!("{}", std::fs::read_to_string(out_dir.join(heraldlab_core::pipeline::REPORT_FILE)).unwrap_or_default());
            }
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                let _ = e.print();
                return ExitCode::SUCCESS;
            }
            let text = e.to_string();
            let first = text.lines().next().unwrap_or("invalid arguments");
            eprintln!("E_USAGE: {}", first.trim_start_matches("error: "));
            return ExitCode::from(2);
        }
    };
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("{}: {}", e.code(), e.to_string().replace('\n', " "));
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
