fn main() {
    std::process::exit(myodrift_core::cli::dispatch(std::env::args_os()));
}
