fn main() {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("MICRONNET_LOG", "warn"))
        .format_timestamp(None)
        .init();
    std::process::exit(micronnet::cli::run_from(std::env::args_os()));
}
