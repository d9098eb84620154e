fn main() {
    std::process::exit(battery_prognostics::cli::run(std::env::args_os()));
}
