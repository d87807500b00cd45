fn main() {
    std::process::exit(saabkit::cli::run(std::env::args_os()));
}
