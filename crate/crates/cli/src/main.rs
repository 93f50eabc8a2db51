fn main() {
    std::process::exit(mvkit_cli::run_command(std::env::args_os()));
}
