use clap::Parser;

fn main() {
    env_logger::Builder::from_env(env_logger::Env::new().filter("BVSS_LOG")).init();
    let cli = bvss::cli::Cli::parse();
    std::process::exit(bvss::cli::run(cli));
}
