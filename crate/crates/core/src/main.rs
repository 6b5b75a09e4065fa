fn main() {
    std::process::exit(rankssm::cli::main_with_args(std::env::args_os()));
}
