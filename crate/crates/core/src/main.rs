fn main() {
    barrier_mdp::cli::init_logging();
    std::process::exit(barrier_mdp::cli::run(std::env::args_os()));
}
