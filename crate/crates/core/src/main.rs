use clap::error::ErrorKind;
use clap::Parser;

use magflow::cli::{main_with, Cli};

fn main() {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion | ErrorKind::DisplayHelpOnMissingArgumentOrSubcommand => 0,
                // bad flags are configuration errors
                _ => 1,
            };
            let _ = e.print();
            std::process::exit(code);
        }
    };
    std::process::exit(main_with(cli));
}
