fn main() -> std::process::ExitCode {
    impulse::cli::main()
}
