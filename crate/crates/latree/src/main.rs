fn main() {
    let argv: Vec<String> = std::env::args().collect();
    std::process::exit(latree::cli::run_command(&argv));
}
