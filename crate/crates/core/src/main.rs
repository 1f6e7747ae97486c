fn main() {
    std::process::exit(spawnlab::cli::main_with_args(std::env::args_os()));
}
