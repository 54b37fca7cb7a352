fn main() {
    std::process::exit(colabel::cli::cli_main(std::env::args_os()));
}
