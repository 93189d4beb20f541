fn main() {
    std::process::exit(ccwave::cli::main_with_args(std::env::args_os()));
}
