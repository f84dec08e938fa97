use clap::Parser;

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = osu_cli::Cli::parse();
    let code = match osu_cli::run(cli) {
        Ok(()) => osu_cli::ExitCode::Ok,
        Err(e) => {
            eprintln!("error: {}", e.message);
            e.code
        }
    };
    std::process::exit(code as i32);
}
