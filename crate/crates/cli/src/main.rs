fn main() {
    std::process::exit(boop_cli::main_with_args(std::env::args_os()));
}
