fn main() {
    std::process::exit(brainhg::cli::run(std::env::args_os()));
}
