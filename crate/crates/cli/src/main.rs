fn main() {
    std::process::exit(lexmine_cli::dispatch(std::env::args_os()));
}
