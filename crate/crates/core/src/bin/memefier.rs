fn main() {
    std::process::exit(memefier::cli::run(std::env::args_os()));
}
