fn main() {
    std::process::exit(adnet_cli::run(std::env::args_os()));
}
