fn main() {
    std::process::exit(fgprop::cli::run(std::env::args_os()));
}
