fn main() {
    std::process::exit(obknn::cli::main());
}
