fn main() {
    std::process::exit(undercrowd::cli::main());
}
