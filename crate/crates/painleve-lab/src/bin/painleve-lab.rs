fn main() {
    std::process::exit(painleve_lab::cli::main_entry());
}
