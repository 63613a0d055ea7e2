fn main() {
    if let Err(e) = cbw::cli::init_logging() {
        eprintln!("error: {e}");
        std::process::exit(e.exit_code());
    }
    std::process::exit(cbw::cli::run_from_args(std::env::args_os()));
}
