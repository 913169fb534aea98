fn main() {
    std::process::exit(jointlca::cli::main_with_args(std::env::args_os()));
}
