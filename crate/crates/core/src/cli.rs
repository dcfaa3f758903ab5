//! Command-line front end: config resolution, seed precedence, dispatch and
//! output directories.

use std::fs;
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Parser, Subcommand, ValueEnum};
use sha2::{Digest, Sha256};

use crate::analysis::{self, run_session, DistanceSource, Experiment, Scheme, SweepOutput, Table};
use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::link::write_history_csv;
use crate::mobility::{simulate_pair, write_pair_csv, NanomachineState};

pub const SEED_ENV: &str = "MMC_SEED";
pub const DEFAULT_SEED: u64 = 42;

#[derive(Debug, Parser)]
#[command(
    name = "mmc",
    version,
    about = "Mobile molecular communication experiments"
)]
pub struct Cli {
    /// TOML config; defaults apply to everything it omits.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Overrides the environment and the config seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Root of the output tree.
    #[arg(long, global = true, default_value = "out")]
    pub out: PathBuf,
    /// Bits per sweep point (or filter steps for tracking runs).
    #[arg(long, global = true)]
    pub trials: Option<u64>,
    /// Worker threads; all cores when omitted.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Subcommand)]
pub enum Command {
    /// Positions and drift velocities of both terminals.
    Trajectory,
    /// True, measured and predicted distances from the filter.
    Estimate,
    /// Optimal threshold against distance for every scheme.
    ThresholdSweep,
    /// BER against a fixed threshold at the operating distance.
    BerVsThreshold,
    /// BER against distance for every scheme.
    BerVsDistance,
    /// Per-slot log of one mobile session.
    Session {
        #[arg(long, value_enum, default_value_t = SessionScheme::Pc)]
        scheme: SessionScheme,
        #[arg(long, value_enum, default_value_t = SessionSource::EkfFeedback)]
        source: SessionSource,
        /// Constant level for `--scheme constant`.
        #[arg(long, default_value_t = 1e5)]
        level: f64,
    },
    /// Data behind one of the figures.
    Reproduce {
        #[arg(value_enum)]
        figure: Figure,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SessionScheme {
    Pc,
    Constant,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SessionSource {
    True,
    EkfFeedback,
    EkfUpdate,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Figure {
    Fig6,
    Fig7,
    Fig8,
    Fig9,
    Fig10,
    Fig11,
}

impl Command {
    pub fn name(&self) -> String {
        match self {
            Command::Trajectory => "trajectory".into(),
            Command::Estimate => "estimate".into(),
            Command::ThresholdSweep => "threshold-sweep".into(),
            Command::BerVsThreshold => "ber-vs-threshold".into(),
            Command::BerVsDistance => "ber-vs-distance".into(),
            Command::Session { .. } => "session".into(),
            Command::Reproduce { figure } => format!("{figure:?}").to_lowercase(),
        }
    }
}

/// Flag, then environment, then config, then the fixed default.
pub fn resolve_seed(flag: Option<u64>, env: Option<&str>, config: Option<u64>) -> Result<u64> {
    if let Some(s) = flag {
        return Ok(s);
    }
    if let Some(v) = env.filter(|v| !v.trim().is_empty()) {
        return v
            .trim()
            .parse()
            .map_err(|_| Error::Config(format!("{SEED_ENV}={v:?} is not an unsigned integer")));
    }
    Ok(config.unwrap_or(DEFAULT_SEED))
}

/// Fresh `root/<experiment>/<timestamp>-<seed>` directory; a numeric suffix
/// keeps runs started within the same second apart.
pub fn output_dir(root: &Path, experiment: &str, seed: u64) -> Result<PathBuf> {
    let stamp = chrono::Local::now().format("%Y%m%dT%H%M%S");
    let parent = root.join(experiment);
    fs::create_dir_all(&parent)?;
    let base = format!("{stamp}-{seed}");
    let mut dir = parent.join(&base);
    let mut n = 1;
    while dir.exists() {
        dir = parent.join(format!("{base}-{n}"));
        n += 1;
    }
    fs::create_dir(&dir)?;
    Ok(dir)
}

fn git_describe() -> String {
    std::process::Command::new("git")
        .args(["describe", "--always", "--dirty"])
        .output()
        .ok()
        .filter(|o| o.status.success())
        .map(|o| String::from_utf8_lossy(&o.stdout).trim().to_string())
        .unwrap_or_else(|| "unknown".into())
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

fn write_table(dir: &Path, name: &str, t: &Table) -> Result<PathBuf> {
    let path = dir.join(name);
    t.write_csv(BufWriter::new(fs::File::create(&path)?))?;
    Ok(path)
}

fn select(t: &Table, cols: &[&str]) -> Table {
    let idx: Vec<usize> = cols
        .iter()
        .map(|c| t.columns.iter().position(|x| x == c).expect("known column"))
        .collect();
    Table {
        columns: cols.iter().map(|c| c.to_string()).collect(),
        rows: t
            .rows
            .iter()
            .map(|r| idx.iter().map(|&i| r[i]).collect())
            .collect(),
    }
}

/// Where one dispatch wrote its files.
pub struct Outcome {
    pub dir: PathBuf,
    pub csv: PathBuf,
}

/// Applies the command-line overrides and validates the result.
pub fn resolve_config(cli: &Cli) -> Result<(RunConfig, u64)> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    let env = std::env::var(SEED_ENV).ok();
    let seed = resolve_seed(cli.seed, env.as_deref(), cfg.experiment.seed)?;
    cfg.experiment.seed = Some(seed);
    if let Some(t) = cli.trials {
        cfg.experiment.trials = t;
        cfg.experiment.steps = t as usize;
    }
    cfg.validate()?;
    Ok((cfg, seed))
}

fn sweep_output(
    cmd: &Command,
    cfg: &RunConfig,
    seed: u64,
) -> Result<(Csv, serde_json::Value, serde_json::Value)> {
    let run = |e| -> Result<SweepOutput> { analysis::sweep(e, cfg, seed) };
    let pack = |o: SweepOutput| {
        let results = serde_json::to_value(&o.results).expect("results serialize");
        (Csv::Table(o.table), o.summary, results)
    };
    Ok(match cmd {
        Command::Trajectory => {
            let p = cfg.params();
            let (tx0, rx0) = cfg.initial.positions();
            let mut r1 = analysis::stream_rng(seed, 0, 0);
            let mut r2 = analysis::stream_rng(seed, 0, 1);
            let run = simulate_pair(
                cfg.experiment.steps,
                NanomachineState::transmitter(tx0, &p),
                NanomachineState::receiver(rx0, &p),
                &p,
                &mut r1,
                &mut r2,
            );
            let mut buf = Vec::new();
            write_pair_csv(&mut buf, &run)?;
            return Ok((
                Csv::Raw(buf),
                serde_json::json!({ "steps": cfg.experiment.steps }),
                serde_json::json!([]),
            ));
        }
        Command::Session {
            scheme,
            source,
            level,
        } => {
            let s = match scheme {
                SessionScheme::Pc => Scheme::PowerControl,
                SessionScheme::Constant => Scheme::Constant(*level),
            };
            let src = match source {
                SessionSource::True => DistanceSource::True,
                SessionSource::EkfFeedback => DistanceSource::EkfFeedback,
                SessionSource::EkfUpdate => DistanceSource::EkfUpdate,
            };
            let r = run_session(cfg, s, src, cfg.experiment.trials as usize, seed)?;
            let mut buf = Vec::new();
            write_history_csv(&mut buf, &r.history)?;
            let summary = serde_json::json!({
                "scheme": s.label(),
                "distance_source": src.label(),
                "ber": r.ber,
                "ber_analytic": r.analytic,
                "bits": r.history.slots.len(),
            });
            return Ok((Csv::Raw(buf), summary, serde_json::json!([])));
        }
        Command::Estimate
        | Command::Reproduce {
            figure: Figure::Fig6,
        } => {
            let o = run(Experiment::DistancePrediction)?;
            let t = select(&o.table, &["k", "d_true", "d_measured", "d_predicted"]);
            pack(SweepOutput { table: t, ..o })
        }
        Command::Reproduce {
            figure: Figure::Fig7,
        } => {
            let o = run(Experiment::DistancePrediction)?;
            let t = select(&o.table, &["k", "err_measured", "err_predicted"]);
            pack(SweepOutput { table: t, ..o })
        }
        Command::ThresholdSweep
        | Command::Reproduce {
            figure: Figure::Fig8,
        } => pack(run(Experiment::ThresholdVsDistance)?),
        Command::Reproduce {
            figure: Figure::Fig9,
        } => pack(run(Experiment::NtxVsDistance)?),
        Command::BerVsThreshold
        | Command::Reproduce {
            figure: Figure::Fig10,
        } => pack(run(Experiment::BerVsThreshold)?),
        Command::BerVsDistance
        | Command::Reproduce {
            figure: Figure::Fig11,
        } => pack(run(Experiment::BerVsDistance)?),
    })
}

/// Numeric sweep table or CSV already rendered by a module writer.
enum Csv {
    Table(Table),
    Raw(Vec<u8>),
}

/// Runs one subcommand and writes `<name>.csv`, `config.toml` and
/// `manifest.json` into a fresh output directory.
pub fn dispatch(cli: &Cli) -> Result<Outcome> {
    let (cfg, seed) = resolve_config(cli)?;
    if let Some(n) = cli.threads {
        // A pool may already exist when called twice in one process.
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global();
    }
    let name = cli.command.name();
    let start = Instant::now();
    let (table, summary, results) = sweep_output(&cli.command, &cfg, seed)?;
    let wall = start.elapsed().as_secs_f64();

    let dir = output_dir(&cli.out, &name, seed)?;
    let file = format!("{name}.csv");
    let csv = match table {
        Csv::Raw(bytes) => {
            let path = dir.join(&file);
            fs::write(&path, bytes)?;
            path
        }
        Csv::Table(t) => write_table(&dir, &file, &t)?,
    };
    let resolved = cfg.to_toml();
    fs::write(dir.join("config.toml"), &resolved)?;
    let manifest = serde_json::json!({
        "experiment": name,
        "csv": file,
        "config": "config.toml",
        "config_sha256": hex(&Sha256::digest(resolved.as_bytes())),
        "seed": seed,
        "git_describe": git_describe(),
        "wall_time_s": wall,
        "threads": rayon::current_num_threads(),
        "summary": summary,
        "results": results,
    });
    fs::write(
        dir.join("manifest.json"),
        serde_json::to_string_pretty(&manifest)?,
    )?;
    Ok(Outcome { dir, csv })
}

/// Process entry point; returns the exit status.
pub fn main_with(args: impl IntoIterator<Item = std::ffi::OsString>) -> i32 {
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match dispatch(&cli) {
        Ok(o) => {
            println!("{}", o.csv.display());
            0
        }
        Err(e) => {
            eprintln!("error: {}", e.to_string().replace('\n', " "));
            1
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seed_precedence() {
        assert_eq!(resolve_seed(Some(1), Some("2"), Some(3)).unwrap(), 1);
        assert_eq!(resolve_seed(None, Some("2"), Some(3)).unwrap(), 2);
        assert_eq!(resolve_seed(None, None, Some(3)).unwrap(), 3);
        assert_eq!(resolve_seed(None, Some(" "), None).unwrap(), DEFAULT_SEED);
        assert!(resolve_seed(None, Some("x"), None).is_err());
    }

    #[test]
    fn output_dirs_do_not_collide() {
        let root = tempfile::tempdir().unwrap();
        let a = output_dir(root.path(), "fig8", 7).unwrap();
        let b = output_dir(root.path(), "fig8", 7).unwrap();
        assert_ne!(a, b);
        assert!(a.starts_with(root.path().join("fig8")));
        assert!(a.file_name().unwrap().to_str().unwrap().contains("-7"));
    }

    #[test]
    fn parses_reproduce() {
        let c = Cli::try_parse_from(["mmc", "reproduce", "fig8", "--seed", "5"]).unwrap();
        assert_eq!(c.seed, Some(5));
        assert_eq!(c.command.name(), "fig8");
    }
}
