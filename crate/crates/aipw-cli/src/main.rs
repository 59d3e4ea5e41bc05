use clap::Parser;

use aipw_cli::{run, Cli};

fn main() {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        // Help/version exit 0, usage errors exit 2.
        Err(e) => e.exit(),
    };
    match run(cli) {
        Ok(report) => println!("{report}"),
        Err(err) => {
            eprintln!("error: {err}");
            std::process::exit(err.exit_code());
        }
    }
}
