fn main() {
    std::process::exit(vdrive::harness::cli::run(std::env::args_os()));
}
