fn main() {
    std::process::exit(hopper_cli::run(std::env::args_os()));
}
