fn main() -> std::process::ExitCode {
    mtle::cli::main()
}
