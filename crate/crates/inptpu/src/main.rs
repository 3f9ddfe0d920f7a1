fn main() {
    std::process::exit(inptpu::cli::run());
}
