fn main() {
    std::process::exit(looplab_cli::run(std::env::args_os()));
}
