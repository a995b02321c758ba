fn main() -> std::process::ExitCode {
    daal::cli::main_entry()
}
