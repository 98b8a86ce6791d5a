fn main() {
    std::process::exit(satrestore_cli::run(std::env::args_os()));
}
