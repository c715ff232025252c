fn main() {
    std::process::exit(scene_adapt::cli::main_with_args(std::env::args_os()));
}
