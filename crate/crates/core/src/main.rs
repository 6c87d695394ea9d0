fn main() {
    std::process::exit(approxmax::cli::main_with(std::env::args_os()));
}
