fn main() {
    std::process::exit(pas::cli::main_entry());
}
