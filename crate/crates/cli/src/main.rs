fn main() {
    std::process::exit(flowgan_cli::run_command(std::env::args_os()));
}
