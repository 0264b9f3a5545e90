fn main() {
    std::process::exit(leakdetect_cli::parse_and_dispatch(std::env::args_os()));
}
