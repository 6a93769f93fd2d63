fn main() {
    std::process::exit(tdmor::cli::run(std::env::args_os()));
}
