fn main() {
    std::process::exit(acnet::cli::run(std::env::args_os()));
}
