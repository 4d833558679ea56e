fn main() {
    std::process::exit(mono3d_cli::run(std::env::args_os()));
}
