fn main() {
    std::process::exit(diskcover_cli::run(std::env::args_os()));
}
