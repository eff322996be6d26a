fn main() -> std::process::ExitCode {
    fdisac::cli::main()
}
