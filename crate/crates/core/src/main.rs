fn main() {
    std::process::exit(modelprint::cli::main_with_args(std::env::args_os()));
}
