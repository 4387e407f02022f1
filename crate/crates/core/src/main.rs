fn main() {
    std::process::exit(arsv_core::cli::run(std::env::args_os()));
}
