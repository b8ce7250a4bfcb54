fn main() {
    std::process::exit(svcox::cli::run(std::env::args_os()));
}
