fn main() {
    std::process::exit(icadenoise_cli::run(std::env::args_os()));
}
