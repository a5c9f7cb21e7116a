mod args;
mod run;

use clap::error::ErrorKind;
use clap::{CommandFactory, Parser};

use args::{Cli, Command};

fn main() {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) => e.exit(),
        Err(e) => {
            let _ = e.print();
            if !e.to_string().contains("Usage:") {
                eprintln!("\n{}", Cli::command().render_usage());
            }
            std::process::exit(2);
        }
    };
    let result = match cli.command {
        Command::Data(cmd) => run::data(cmd),
        Command::Train(args) => run::train(args),
        Command::Cv(args) => run::cv(args),
        Command::Simulate(args) => run::simulate_cmd(args),
        Command::Serve(args) => run::serve(args),
    };
    if let Err(e) = result {
        eprintln!("error: {e}");
        std::process::exit(e.exit_code());
    }
}
