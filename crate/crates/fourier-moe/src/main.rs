fn main() {
    std::process::exit(fourier_moe::cli::run(std::env::args_os()));
}
