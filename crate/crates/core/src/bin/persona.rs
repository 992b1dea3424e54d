fn main() {
    std::process::exit(persona::cli::run(std::env::args_os()));
}
