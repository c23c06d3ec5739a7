fn main() {
    std::process::exit(gaitgp::cli::run(std::env::args_os()));
}
