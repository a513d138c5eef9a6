fn main() {
    env_logger::init();
    std::process::exit(eta::cli::run_from(std::env::args_os()));
}
