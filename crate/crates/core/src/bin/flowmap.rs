fn main() {
    std::process::exit(flowmap::cli::main_with_args(std::env::args_os()));
}
