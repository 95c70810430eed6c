fn main() {
    std::process::exit(twist_cli::run(std::env::args_os()));
}
