fn main() {
    std::process::exit(sinmotion::cli::main_with(std::env::args_os()));
}
