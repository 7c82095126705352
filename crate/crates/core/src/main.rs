fn main() {
    std::process::exit(nounprobe::cli::main());
}
