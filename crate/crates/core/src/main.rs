fn main() {
    std::process::exit(ghzverify::cli::main_with_args(std::env::args_os()));
}
