fn main() {
    std::process::exit(panoptic_core::harness::cli::run(std::env::args_os()));
}
