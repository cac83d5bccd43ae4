fn main() {
    std::process::exit(cgpo_cli::run(std::env::args_os()));
}
