use clap::Parser;

fn main() -> std::process::ExitCode {
    let cli = bailharness::cli::Cli::parse();
    match bailharness::cli::execute(cli) {
        Ok(()) => std::process::ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            std::process::ExitCode::FAILURE
        }
    }
}
