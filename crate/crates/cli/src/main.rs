use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Arg, ArgMatches, Args, Command, FromArgMatches, Parser, Subcommand};
use respscreen_core::audio_features::SpectrogramKind;
use respscreen_core::dataset::{synth_corpus, SynthParams};
use respscreen_core::pipeline::{
    cmd_embed, cmd_evaluate, cmd_features, cmd_import, cmd_run, cmd_sweep, report_text, RunConfig, CONFIG_KEYS,
};
use respscreen_core::Error;

#[derive(Parser)]
#[command(name = "respscreen", version, about = "Respiratory-sound COVID-19 screening pipeline")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate a synthetic corpus and its manifest.
    Synth {
        #[arg(long, default_value_t = 7)]
        seed: u64,
        #[arg(long = "n_dev", default_value_t = 120)]
        n_dev: usize,
        #[arg(long = "n_test", default_value_t = 60)]
        n_test: usize,
        #[arg(long = "positive_rate", default_value_t = 0.25)]
        positive_rate: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Write one spectrogram dump per manifest record.
    Features {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long, default_value = "logmel")]
        frontend: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Compute baseline embeddings for every record into one CSV.
    Embed {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long, default_value = "logmel")]
        frontend: String,
        #[arg(long)]
        out: PathBuf,
        #[arg(long = "cache_dir")]
        cache_dir: Option<PathBuf>,
    },
    /// Validate external embedding CSVs against a manifest.
    #[command(name = "import-embeddings")]
    ImportEmbeddings {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long = "out_dir")]
        out_dir: PathBuf,
        #[arg(required = true)]
        files: Vec<PathBuf>,
    },
    /// Train on Dev and evaluate on Test.
    Run {
        #[command(flatten)]
        config: ConfigArgs,
    },
    /// Run every (rho, oversample_m) cell of a grid.
    Sweep {
        #[command(flatten)]
        config: ConfigArgs,
        /// Comma-separated drop fractions.
        #[arg(long = "rho_grid", default_value = "0,0.1,0.2,0.3,0.4,0.5,0.6,0.7,0.8,0.9")]
        rho_grid: String,
        /// Comma-separated oversampling factors; `none` skips oversampling.
        #[arg(long = "m_grid", default_value = "none,2,3,4,5")]
        m_grid: String,
    },
    /// Score a predictions CSV.
    Evaluate {
        #[arg(long)]
        predictions: PathBuf,
        #[command(flatten)]
        config: ConfigArgs,
        /// Also write the report as JSON.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

/// `--config FILE` plus one `--<key> VALUE` flag per config key.
#[derive(Debug, Clone, Default)]
struct ConfigArgs {
    file: Option<PathBuf>,
    overrides: Vec<(&'static str, String)>,
}

impl FromArgMatches for ConfigArgs {
    fn from_arg_matches(m: &ArgMatches) -> Result<Self, clap::Error> {
        let mut out = ConfigArgs::default();
        out.update_from_arg_matches(m)?;
        Ok(out)
    }

    fn update_from_arg_matches(&mut self, m: &ArgMatches) -> Result<(), clap::Error> {
        if let Some(f) = m.get_one::<PathBuf>("config") {
            self.file = Some(f.clone());
        }
        for k in CONFIG_KEYS {
            if let Some(v) = m.get_one::<String>(k) {
                self.overrides.push((k, v.clone()));
            }
        }
        Ok(())
    }
}

impl Args for ConfigArgs {
    fn augment_args(cmd: Command) -> Command {
        let mut cmd = cmd.arg(
            Arg::new("config")
                .long("config")
                .value_name("FILE")
                .value_parser(clap::value_parser!(PathBuf))
                .help("key=value config file"),
        );
        for k in CONFIG_KEYS {
            cmd = cmd.arg(Arg::new(*k).long(*k).value_name("VALUE"));
        }
        cmd
    }

    fn augment_args_for_update(cmd: Command) -> Command {
        Self::augment_args(cmd)
    }
}

enum Failure {
    Usage(String),
    Core(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Core(e)
    }
}

impl ConfigArgs {
    fn resolve(&self) -> Result<RunConfig, Failure> {
        let mut cfg = match &self.file {
            Some(f) => RunConfig::from_file(f)?,
            None => RunConfig::default(),
        };
        for (k, v) in &self.overrides {
            cfg.set(k, v).map_err(|e| Failure::Usage(format!("--{k}: {e}")))?;
        }
        Ok(cfg)
    }
}

fn parse_kind(s: &str) -> Result<SpectrogramKind, Failure> {
    s.parse().map_err(|e: Error| Failure::Usage(format!("--frontend: {e}")))
}

fn parse_rho_grid(s: &str) -> Result<Vec<f64>, Failure> {
    s.split(',')
        .map(|t| {
            t.trim()
                .parse()
                .map_err(|_| Failure::Usage(format!("--rho_grid: bad value {t:?}")))
        })
        .collect()
}

fn parse_m_grid(s: &str) -> Result<Vec<Option<usize>>, Failure> {
    s.split(',')
        .map(|t| match t.trim() {
            "none" | "1" => Ok(None),
            t => t
                .parse()
                .map(Some)
                .map_err(|_| Failure::Usage(format!("--m_grid: bad value {t:?}"))),
        })
        .collect()
}

fn write_out(path: &Path, text: String) -> Result<(), Failure> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    std::fs::write(path, text).map_err(|e| Error::io(path, e).into())
}

fn execute(cmd: Cmd) -> Result<(), Failure> {
    match cmd {
        Cmd::Synth {
            seed,
            n_dev,
            n_test,
            positive_rate,
            out,
        } => {
            let manifest = synth_corpus(&SynthParams::new(seed, n_dev, n_test, positive_rate), &out)?;
            println!("{}", manifest.display());
        }
        Cmd::Features { manifest, frontend, out } => {
            let s = cmd_features(&manifest, parse_kind(&frontend)?, &out)?;
            for (path, reason) in &s.failed {
                eprintln!("warning: {}: {reason}", path.display());
            }
            println!("written={} skipped={} failed={}", s.written, s.skipped, s.failed.len());
        }
        Cmd::Embed {
            manifest,
            frontend,
            out,
            cache_dir,
        } => {
            let n = cmd_embed(&manifest, parse_kind(&frontend)?, &out, cache_dir.as_deref())?;
            println!("{n} vectors written to {}", out.display());
        }
        Cmd::ImportEmbeddings {
            manifest,
            out_dir,
            files,
        } => {
            for s in cmd_import(&files, &manifest, &out_dir)? {
                let mods: Vec<&str> = s.modalities.iter().map(|m| m.as_str()).collect();
                println!(
                    "{}: dim={} rows={} modalities={} missing={} -> {}",
                    s.source,
                    s.dim,
                    s.rows,
                    mods.join("+"),
                    s.missing.len(),
                    s.written.display()
                );
                for (subject, m) in &s.missing {
                    eprintln!("warning: {}: no {m} vector for {subject}", s.source);
                }
            }
        }
        Cmd::Run { config } => {
            let cfg = config.resolve()?;
            let outcome = cmd_run(&cfg)?;
            print!("{}", report_text(&outcome.report));
        }
        Cmd::Sweep {
            config,
            rho_grid,
            m_grid,
        } => {
            let cfg = config.resolve()?;
            let rhos = parse_rho_grid(&rho_grid)?;
            let ms = parse_m_grid(&m_grid)?;
            cfg.validate()?;
            let rows = cmd_sweep(&cfg, &rhos, &ms)?;
            for r in &rows {
                let m = r.oversample_m.map_or("none".into(), |m| m.to_string());
                match (&r.result, r.auc()) {
                    (Ok(_), Some(auc)) => println!("rho={} m={m} auc={auc:.4}", r.rho),
                    (Ok(_), None) => println!("rho={} m={m} auc=n/a", r.rho),
                    (Err(e), _) => println!("rho={} m={m} error: {e}", r.rho),
                }
            }
            println!("{}", cfg.out_dir.join("sweep.csv").display());
        }
        Cmd::Evaluate {
            predictions,
            config,
            out,
        } => {
            let cfg = config.resolve()?;
            let report = cmd_evaluate(&predictions, &cfg)?;
            print!("{}", report.to_text());
            if let Some(out) = out {
                let mut json = report.to_json();
                json.push('\n');
                write_out(&out, json)?;
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match std::panic::catch_unwind(|| execute(cli.cmd)) {
        Ok(Ok(())) => ExitCode::SUCCESS,
        Ok(Err(Failure::Usage(msg))) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Ok(Err(Failure::Core(e))) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_data_error() { 2 } else { 3 })
        }
        Err(_) => ExitCode::from(3),
    }
}
