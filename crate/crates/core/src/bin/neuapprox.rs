fn main() {
    std::process::exit(neuapprox::cli::run(std::env::args_os()));
}
