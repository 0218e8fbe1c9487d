fn main() {
    std::process::exit(glitchloc::cli::main_with_args(std::env::args_os()));
}
