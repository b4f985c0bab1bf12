fn main() {
    std::process::exit(ctrlgen::cli::run(std::env::args_os()));
}
