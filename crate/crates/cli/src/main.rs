fn main() {
    std::process::exit(folkgen_cli::cli::main_with_args(std::env::args_os()));
}
