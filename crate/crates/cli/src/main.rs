fn main() {
    std::process::exit(calmort_cli::main_with_args(std::env::args_os()));
}
