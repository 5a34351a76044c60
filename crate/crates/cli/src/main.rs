fn main() {
    std::process::exit(editfollower_cli::dispatch(std::env::args_os()));
}
