fn main() {
    std::process::exit(moe_scaling::cli::run(std::env::args_os()));
}
