fn main() {
    std::process::exit(hcma_cli::main_with_args(std::env::args_os()));
}
