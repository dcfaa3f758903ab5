fn main() {
    std::process::exit(mmc_core::cli::main_with(std::env::args_os()));
}
