fn main() {
    std::process::exit(mtsim::cli::run(std::env::args_os()));
}
