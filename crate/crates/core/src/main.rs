fn main() {
    std::process::exit(cogsched::cli::dispatch(std::env::args_os()));
}
