use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;
use fracmono_cli::{run, write_error, Kind, RunOptions};

#[derive(Debug, Parser)]
#[command(name = "fracmono", version, about = "Run a fractional monotonicity experiment")]
struct Args {
    kind: Kind,
    #[arg(long)]
    config: PathBuf,
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Overrides the seed in the config.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads; defaults to the number of cores.
    #[arg(long)]
    threads: Option<usize>,
}

fn main() -> ExitCode {
    let args = Args::parse();
    if let Some(n) = args.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("fracmono: cannot start thread pool: {e}");
            return ExitCode::from(1);
        }
    }
    let opts = RunOptions {
        kind: args.kind,
        config: args.config,
        out: args.out,
        seed: args.seed,
    };
    match run(&opts) {
        Ok(_) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("fracmono: {e}");
            if let Err(io) = write_error(&opts.out, &e) {
                eprintln!("fracmono: cannot write error record: {io}");
            }
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
