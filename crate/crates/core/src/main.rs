fn main() {
    env_logger::init();
    std::process::exit(splatflow::cli::dispatch(std::env::args_os()));
}
