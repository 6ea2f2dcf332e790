fn main() {
    std::process::exit(banditlab_cli::main_with(std::env::args_os()));
}
