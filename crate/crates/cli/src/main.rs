use clap::Parser;

fn main() {
    // clap exits with code 2 on usage errors.
    let cli = restyle_cli::Cli::parse();
    match restyle_cli::execute(&cli) {
        Ok(report) => print!("{report}"),
        Err(err) => {
            eprintln!("{err}");
            std::process::exit(1);
        }
    }
}
