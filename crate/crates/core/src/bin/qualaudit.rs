fn main() {
    std::process::exit(qualaudit::cli::run(std::env::args_os()));
}
