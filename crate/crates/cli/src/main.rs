fn main() {
    std::process::exit(nedmp_cli::app::run(std::env::args_os()));
}
