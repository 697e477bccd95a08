fn main() {
    std::process::exit(pathoprobe::cli::main_entry());
}
