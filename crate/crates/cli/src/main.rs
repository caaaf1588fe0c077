fn main() {
    std::process::exit(catalyst_cli::main_with_args(std::env::args_os()));
}
