use std::io;
use std::process::ExitCode;

use clap::Parser;
use flowloss_cli::{execute, thread_cap, Cli};

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = thread_cap().and_then(|cap| {
        if let Some(n) = cap {
            rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build_global()?;
        }
        execute(
            &cli.command,
            &mut io::stdout().lock(),
            &mut io::stderr().lock(),
        )
    });
    match result {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
