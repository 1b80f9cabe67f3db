fn main() {
    std::process::exit(enf_cascade::cli::run(std::env::args_os()));
}
