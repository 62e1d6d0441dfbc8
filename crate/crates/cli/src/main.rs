fn main() {
    std::process::exit(spikelab::main_with_args(std::env::args_os()));
}
