fn main() {
    std::process::exit(ltr::cli::main_with_args(std::env::args_os()));
}
