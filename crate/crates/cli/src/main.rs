fn main() {
    std::process::exit(v2i_cli::main_with_args(std::env::args_os()));
}
