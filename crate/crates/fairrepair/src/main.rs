fn main() {
    std::process::exit(fairrepair::cli::run(std::env::args_os()));
}
