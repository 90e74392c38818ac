fn main() {
    std::process::exit(fermirg::cli::main_with(std::env::args_os()));
}
