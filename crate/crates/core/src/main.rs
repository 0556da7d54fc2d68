fn main() {
    adaptive_conformal::cli::init_logging();
    std::process::exit(adaptive_conformal::cli::run_command(std::env::args_os()));
}
