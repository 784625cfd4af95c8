use clap::{Parser, Subcommand};
use nphgsd_cli::config::{Overrides, RunConfig};
use nphgsd_cli::{run, CliError, Command, Format, OutputFile};
use std::path::PathBuf;
use std::process::ExitCode;

/// Group sequential designs under non-proportional hazards.
#[derive(Parser)]
#[command(name = "nphgsd", version)]
struct Cli {
    #[command(subcommand)]
    command: Sub,
}

#[derive(Subcommand)]
enum Sub {
    /// Solve the sample size for the target power and report bounds.
    Design(Args),
    /// Bounds and crossing probabilities at a given sample size.
    Power(Args),
    /// Average hazard ratio and expected events over time.
    Expect(Args),
    /// Monte Carlo operating characteristics.
    Simulate(Args),
    /// Power and type I error over the reference scenarios.
    Scenarios(Args),
}

#[derive(clap::Args)]
struct Args {
    #[arg(long)]
    config: PathBuf,
    /// Output directory; the main report goes to stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Write only this format (both when writing to a directory).
    #[arg(long, value_enum)]
    format: Option<Format>,
    #[arg(long)]
    workers: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Check the configuration and exit.
    #[arg(long)]
    validate_only: bool,
}

fn emit(files: &[OutputFile], out: Option<PathBuf>, format: Option<Format>) -> Result<(), CliError> {
    let io = |e: std::io::Error| CliError::Io(e.to_string());
    match out {
        Some(dir) => {
            std::fs::create_dir_all(&dir).map_err(io)?;
            for f in files.iter().filter(|f| format.is_none_or(|fmt| f.format == fmt)) {
                let path = dir.join(&f.name);
                std::fs::write(&path, &f.contents).map_err(io)?;
                eprintln!("wrote {}", path.display());
            }
        }
        None => {
            let want = format.unwrap_or(Format::Csv);
            if let Some(f) = files.iter().find(|f| f.format == want) {
                print!("{}", f.contents);
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (cmd, args) = match cli.command {
        Sub::Design(a) => (Command::Design, a),
        Sub::Power(a) => (Command::Power, a),
        Sub::Expect(a) => (Command::Expect, a),
        Sub::Simulate(a) => (Command::Simulate, a),
        Sub::Scenarios(a) => (Command::Scenarios, a),
    };
    let result = (|| {
        let text = std::fs::read_to_string(&args.config)
            .map_err(|e| CliError::Io(format!("{}: {e}", args.config.display())))?;
        let cfg = RunConfig::parse(&text)?;
        let ov = Overrides { seed: args.seed, workers: args.workers };
        for w in cfg.validate(cmd, ov)? {
            eprintln!("warning: {w}");
        }
        if args.validate_only {
            println!("{}: config is valid", cmd.name());
            return Ok(());
        }
        let out = args.out.or_else(|| cfg.output.as_ref().and_then(|o| o.path.clone()).map(PathBuf::from));
        let format = args.format.or_else(|| cfg.output.as_ref().and_then(|o| o.format));
        let files = run(cmd, &cfg, ov)?;
        emit(&files, out, format)
    })();
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
