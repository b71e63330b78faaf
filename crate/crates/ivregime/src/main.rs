fn main() {
    std::process::exit(ivregime::cli::main_from(std::env::args_os()));
}
