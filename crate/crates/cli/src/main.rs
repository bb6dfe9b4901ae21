fn main() {
    std::process::exit(lidarpost_cli::run(std::env::args_os()));
}
