fn main() -> std::process::ExitCode {
    maxslope::cli::main()
}
