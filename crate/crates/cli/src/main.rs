fn main() {
    std::process::exit(netcausal_cli::main_with_args(std::env::args_os()));
}
