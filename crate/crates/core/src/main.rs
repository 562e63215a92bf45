fn main() {
    std::process::exit(inertia_id::cli::run(std::env::args_os()));
}
