fn main() {
    std::process::exit(dsem_sheaf::cli::run(std::env::args_os()));
}
