fn main() {
    std::process::exit(hydro_core::app::run_cli(std::env::args_os()));
}
