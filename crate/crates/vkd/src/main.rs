fn main() {
    std::process::exit(vkd::cli::run(std::env::args_os()));
}
