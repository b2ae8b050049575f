fn main() {
    std::process::exit(plainusr_cli::run(std::env::args_os()));
}
