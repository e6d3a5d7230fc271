fn main() {
    std::process::exit(warehouse_sim::cli::run(std::env::args_os()));
}
