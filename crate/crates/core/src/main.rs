fn main() {
    std::process::exit(bridgesampler::cli::main_with_args(std::env::args_os()));
}
