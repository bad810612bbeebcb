fn main() {
    std::process::exit(duet::cli::main_with_args(std::env::args_os()));
}
