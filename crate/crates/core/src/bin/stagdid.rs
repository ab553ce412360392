fn main() {
    std::process::exit(stagdid::cli::main_with_args(std::env::args_os()));
}
