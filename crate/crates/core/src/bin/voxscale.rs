fn main() {
    std::process::exit(voxscale::cli::run(std::env::args_os()));
}
