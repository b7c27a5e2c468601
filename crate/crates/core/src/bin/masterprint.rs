fn main() {
    std::process::exit(masterprint::cli::run(std::env::args_os()));
}
