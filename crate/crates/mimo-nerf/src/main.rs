fn main() {
    std::process::exit(mimo_nerf::cli::run_from_args(std::env::args_os()));
}
