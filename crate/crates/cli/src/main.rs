fn main() {
    std::process::exit(sama_cli::run(std::env::args_os()));
}
