fn main() {
    std::process::exit(dsgq::cli::cli_main(std::env::args_os()));
}
