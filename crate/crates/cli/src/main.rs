fn main() {
    env_logger::init();
    std::process::exit(cswm_cli::cli_main(std::env::args_os()));
}
