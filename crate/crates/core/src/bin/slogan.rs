fn main() {
    std::process::exit(slogan::cli::main_with_args(std::env::args_os()));
}
