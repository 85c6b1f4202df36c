fn main() {
    std::process::exit(flowedit_cli::run(std::env::args_os()));
}
