fn main() {
    std::process::exit(difno_cli::run(std::env::args_os()));
}
