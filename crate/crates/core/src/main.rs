use clap::Parser;
use std::path::PathBuf;
use std::process::ExitCode;

use neurofab::config::{self, Diagnostic};
use neurofab::run::{self, RunError};

/// Run one emulator experiment described by a JSON configuration.
#[derive(Debug, Parser)]
#[command(name = "neurofab", version)]
struct Cli {
    /// Run configuration (JSON).
    #[arg(long, value_name = "PATH")]
    config: PathBuf,
    /// Output directory; must not exist or be empty. Overrides `output_dir`.
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Master seed; overrides the configuration.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads (0 = all cores). Does not affect results.
    #[arg(long, default_value_t = 0)]
    jobs: usize,
    /// Check the configuration and exit.
    #[arg(long)]
    validate_only: bool,
}

fn report(diags: &[Diagnostic]) {
    for d in diags {
        eprintln!("config error: {d}");
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();

    if cli.validate_only {
        let diags = match std::fs::read_to_string(&cli.config) {
            Ok(text) => match config::parse(&text) {
                Ok(mut cfg) => {
                    if cli.seed.is_some() {
                        cfg.seed = cli.seed;
                    }
                    config::validate(&cfg)
                }
                Err(d) => d,
            },
            Err(e) => vec![Diagnostic {
                path: String::new(),
                message: format!("cannot read {}: {e}", cli.config.display()),
            }],
        };
        if diags.is_empty() {
            println!("ok");
            return ExitCode::SUCCESS;
        }
        report(&diags);
        return ExitCode::from(1);
    }

    let result = run::load_config(&cli.config, cli.seed).and_then(|cfg| {
        let out = cli
            .out
            .clone()
            .or_else(|| cfg.output_dir.as_ref().map(PathBuf::from))
            .ok_or_else(|| RunError::config("output_dir", "no output directory (set output_dir or --out)"))?;
        let summary = run::execute(&cfg, &out, cli.jobs)?;
        Ok((out, summary))
    });
    match result {
        Ok((out, summary)) => {
            log::info!("wrote {} file(s) to {}", summary.files.len(), out.display());
            ExitCode::SUCCESS
        }
        Err(e) => {
            match &e {
                RunError::Config(d) => report(d),
                other => eprintln!("error: {other}"),
            }
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
