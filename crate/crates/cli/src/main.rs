fn main() {
    std::process::exit(esfma_cli::run_from_args(std::env::args_os()));
}
