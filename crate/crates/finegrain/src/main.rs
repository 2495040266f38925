fn main() {
    std::process::exit(finegrain::cli::main_entry());
}
