fn main() {
    std::process::exit(kpuf::cli::run(std::env::args_os()));
}
