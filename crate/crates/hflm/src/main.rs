fn main() {
    std::process::exit(hflm::cli::main_entry());
}
