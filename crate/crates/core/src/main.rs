fn main() {
    std::process::exit(aeromesh::cli::run());
}
