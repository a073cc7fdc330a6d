fn main() {
    std::process::exit(hjb_homog::cli::main_with(std::env::args_os()));
}
