fn main() {
    std::process::exit(crimelab_cli::main_with_args(std::env::args_os()));
}
