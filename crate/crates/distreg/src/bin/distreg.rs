fn main() {
    let args: Vec<String> = std::env::args().skip(1).collect();
    std::process::exit(distreg::cli::main_from_args(&args));
}
