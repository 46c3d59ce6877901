fn main() {
    std::process::exit(chatmt::cli::run(std::env::args_os()));
}
