fn main() {
    std::process::exit(tarnn::cli::run_from(std::env::args_os()));
}
