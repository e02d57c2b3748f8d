fn main() {
    std::process::exit(ttuda::cli::main_with_args(std::env::args_os()));
}
