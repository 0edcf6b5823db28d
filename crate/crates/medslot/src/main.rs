fn main() {
    std::process::exit(medslot::cli::run(std::env::args_os()));
}
