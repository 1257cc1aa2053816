use clap::Parser;

fn main() {
    let cli = match msmle::cli::Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // usage errors are config errors; 2 is reserved for numerical failures
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            std::process::exit(code);
        }
    };
    if let Err(e) = msmle::cli::run(cli) {
        eprintln!("error: {e}");
        std::process::exit(e.exit_code());
    }
}
