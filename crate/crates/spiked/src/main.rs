fn main() {
    std::process::exit(spiked::cli::run_cli(std::env::args_os()));
}
