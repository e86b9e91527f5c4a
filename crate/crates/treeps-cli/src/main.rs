fn main() {
    env_logger::init();
    std::process::exit(treeps_cli::run_from(std::env::args()));
}
