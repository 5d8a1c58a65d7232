fn main() {
    std::process::exit(ska_shmem::cli::main_entry());
}
