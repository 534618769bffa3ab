fn main() {
    std::process::exit(crydet::cli::main_with_args(std::env::args_os()));
}
