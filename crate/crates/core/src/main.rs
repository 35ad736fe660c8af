fn main() {
    std::process::exit(epsense::cli::run(std::env::args_os()));
}
