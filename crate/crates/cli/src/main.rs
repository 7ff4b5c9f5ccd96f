use clap::{Args, Parser, Subcommand};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use weatherseg::config::PipelineConfig;
use weatherseg::distortion::{CorruptionKind, CorruptionSpec, DropMode};
use weatherseg::{jobs, Error, Result};

#[derive(Parser)]
#[command(name = "weatherseg", version, about = "Weather-robust LiDAR segmentation toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// TOML pipeline config; flags override its fields.
    #[arg(long, short)]
    config: Option<PathBuf>,
    /// Master seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads (defaults to all cores). Outputs do not depend on it.
    #[arg(long)]
    threads: Option<usize>,
}

#[derive(Args)]
struct InOut {
    #[arg(long, short)]
    input: Option<PathBuf>,
    #[arg(long, short)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Write synthetic labeled scenes.
    GenScenes {
        #[command(flatten)]
        common: Common,
        #[arg(long, short)]
        out: Option<PathBuf>,
        #[arg(long)]
        count: Option<usize>,
    },
    /// Apply weather corruptions to scans.
    Corrupt {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        io: InOut,
        /// Replaces the configured corruption list with a single entry.
        #[arg(long)]
        kind: Option<CorruptionKind>,
        /// Drop or selection ratio (point_drop, occlusion).
        #[arg(long, conflicts_with = "sigma")]
        ratio: Option<f64>,
        /// Noise sigma (geom_perturb, intensity_distort).
        #[arg(long)]
        sigma: Option<f64>,
        #[arg(long)]
        mode: Option<DropMode>,
        /// Subtract |noise| from intensity instead of signed noise.
        #[arg(long)]
        absolute: bool,
    },
    /// Apply selective jitter to scans.
    Augment {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        io: InOut,
        #[arg(long)]
        sigma: Option<f64>,
        #[arg(long)]
        no_dsj: bool,
        #[arg(long)]
        no_asj: bool,
        #[arg(long)]
        no_rj: bool,
    },
    /// Train the surrogate segmenter on labeled scans.
    TrainSurrogate {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        io: InOut,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        lr: Option<f64>,
    },
    /// Jointly train the surrogate and the point-drop agent.
    TrainLpd {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        io: InOut,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        forced_action: Option<usize>,
    },
    /// Score a trained surrogate on labeled scans.
    Eval {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        io: InOut,
        #[arg(long, short)]
        model: PathBuf,
    },
    /// Write a PLY colored by prediction correctness.
    ExportPly {
        #[command(flatten)]
        common: Common,
        #[arg(long, short)]
        model: PathBuf,
        #[arg(long, short)]
        scan: PathBuf,
        #[arg(long, short)]
        out: PathBuf,
    },
    /// Print point and label statistics as JSON.
    Stats {
        #[command(flatten)]
        common: Common,
        #[arg(long, short)]
        input: Option<PathBuf>,
    },
}

fn base_config(common: &Common) -> Result<PipelineConfig> {
    let mut cfg = match &common.config {
        Some(p) => PipelineConfig::load(p)?,
        None => PipelineConfig::default(),
    };
    if let Some(s) = common.seed {
        cfg.seed = s;
    }
    Ok(cfg)
}

fn require(flag: Option<PathBuf>, fallback: &Option<PathBuf>, name: &str) -> Result<PathBuf> {
    flag.or_else(|| fallback.clone())
        .ok_or_else(|| Error::InvalidSpec(format!("missing --{name} (or `{name}` in the config)")))
}

fn paths(cfg: &mut PipelineConfig, io: InOut) -> Result<(PathBuf, PathBuf)> {
    let input = require(io.input, &cfg.input, "input")?;
    let out = require(io.out, &cfg.output, "output")?;
    cfg.input = Some(input.clone());
    cfg.output = Some(out.clone());
    Ok((input, out))
}

fn check_input(p: &Path) -> Result<()> {
    if p.exists() {
        Ok(())
    } else {
        Err(Error::InvalidSpec(format!("input {} does not exist", p.display())))
    }
}

fn run(command: Command) -> Result<()> {
    match command {
        Command::GenScenes { common, out, count } => {
            let mut cfg = base_config(&common)?;
            let out = require(out, &cfg.output, "output")?;
            cfg.output = Some(out.clone());
            if let Some(n) = count {
                cfg.scenes.count = n;
            }
            let cfg = cfg.resolve()?;
            let written = jobs::gen_scenes(&cfg, &out)?;
            println!("wrote {} scenes to {}", written.len(), out.display());
        }
        Command::Corrupt {
            common,
            io,
            kind,
            ratio,
            sigma,
            mode,
            absolute,
        } => {
            let mut cfg = base_config(&common)?;
            let (input, out) = paths(&mut cfg, io)?;
            if let Some(kind) = kind {
                let mut spec = CorruptionSpec::new(kind, ratio.or(sigma).unwrap_or(kind.severities().1), 0);
                spec.mode = mode.unwrap_or_default();
                spec.signed = !absolute;
                cfg.corruptions = vec![spec];
            } else if ratio.is_some() || sigma.is_some() || mode.is_some() || absolute {
                for spec in &mut cfg.corruptions {
                    if let Some(s) = ratio.or(sigma) {
                        spec.severity = s;
                    }
                    if let Some(m) = mode {
                        spec.mode = m;
                    }
                    spec.signed &= !absolute;
                }
            }
            let cfg = cfg.resolve()?;
            check_input(&input)?;
            let recs = jobs::corrupt(&cfg, &input, &out)?;
            let (a, b): (usize, usize) = recs
                .iter()
                .fold((0, 0), |(a, b), r| (a + r.points_in, b + r.points_out));
            println!("corrupted {} scans: {a} -> {b} points", recs.len());
        }
        Command::Augment {
            common,
            io,
            sigma,
            no_dsj,
            no_asj,
            no_rj,
        } => {
            let mut cfg = base_config(&common)?;
            let (input, out) = paths(&mut cfg, io)?;
            if let Some(s) = sigma {
                cfg.augment.noise_sigma = s;
            }
            cfg.augment.dsj.enabled &= !no_dsj;
            cfg.augment.asj.enabled &= !no_asj;
            cfg.augment.rj.enabled &= !no_rj;
            let cfg = cfg.resolve()?;
            check_input(&input)?;
            let recs = jobs::augment(&cfg, &input, &out)?;
            println!("augmented {} scans", recs.len());
        }
        Command::TrainSurrogate { common, io, epochs, lr } => {
            let mut cfg = base_config(&common)?;
            let (input, out) = paths(&mut cfg, io)?;
            if let Some(e) = epochs {
                cfg.train.epochs = e;
            }
            if let Some(lr) = lr {
                cfg.train.lr = lr;
            }
            let cfg = cfg.resolve()?;
            check_input(&input)?;
            jobs::train_surrogate_job(&cfg, &input, &out)?;
            println!("surrogate written to {}", out.display());
        }
        Command::TrainLpd {
            common,
            io,
            epochs,
            forced_action,
        } => {
            let mut cfg = base_config(&common)?;
            let (input, out) = paths(&mut cfg, io)?;
            if let Some(e) = epochs {
                cfg.train.epochs = e;
            }
            if forced_action.is_some() {
                cfg.lpd.forced_action = forced_action;
            }
            let cfg = cfg.resolve()?;
            check_input(&input)?;
            jobs::train_lpd_job(&cfg, &input, &out)?;
            println!("surrogate and agent written to {}", out.display());
        }
        Command::Eval { common, io, model } => {
            let mut cfg = base_config(&common)?;
            let (input, out) = paths(&mut cfg, io)?;
            let cfg = cfg.resolve()?;
            check_input(&input)?;
            let cm = jobs::eval_job(&cfg, &model, &input, &out)?;
            match cm.miou() {
                Ok(m) => println!("mIoU {m:.4} over {} points", cm.total()),
                Err(_) => println!("no class present in {} points", cm.total()),
            }
        }
        Command::ExportPly {
            common,
            model,
            scan,
            out,
        } => {
            let cfg = base_config(&common)?.resolve()?;
            check_input(&scan)?;
            jobs::export_ply_job(&cfg, &model, &scan, &out)?;
        }
        Command::Stats { common, input } => {
            let cfg = base_config(&common)?;
            let input = require(input, &cfg.input, "input")?;
            let cfg = cfg.resolve()?;
            check_input(&input)?;
            println!("{}", jobs::stats_json(&jobs::stats(&cfg, &input)?));
        }
    }
    Ok(())
}

fn threads(command: &Command) -> Option<usize> {
    let c = match command {
        Command::GenScenes { common, .. }
        | Command::Corrupt { common, .. }
        | Command::Augment { common, .. }
        | Command::TrainSurrogate { common, .. }
        | Command::TrainLpd { common, .. }
        | Command::Eval { common, .. }
        | Command::ExportPly { common, .. }
        | Command::Stats { common, .. } => common,
    };
    c.threads
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    if let Some(n) = threads(&cli.command) {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(1);
        }
    }
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
