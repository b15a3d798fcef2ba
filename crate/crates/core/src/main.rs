fn main() {
    std::process::exit(frailcp::cli::main_with_args(std::env::args_os()));
}
