fn main() {
    std::process::exit(ddl_cli::run(std::env::args_os()));
}
