fn main() {
    std::process::exit(vnls::cli::main_with_args(std::env::args_os()));
}
