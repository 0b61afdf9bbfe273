fn main() -> std::process::ExitCode {
    ctquant::cli::main()
}
