fn main() {
    std::process::exit(ewc_lab::harness::cli::run(std::env::args_os()));
}
