fn main() {
    std::process::exit(consreg_cli::run(std::env::args_os()));
}
