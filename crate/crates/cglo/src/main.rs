fn main() {
    std::process::exit(cglo::cli::run(std::env::args_os()));
}
