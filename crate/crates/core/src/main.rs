fn main() {
    std::process::exit(d2t::cli::main_with_args(std::env::args_os()));
}
