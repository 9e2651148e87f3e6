fn main() -> std::process::ExitCode {
    duks_sim::cli::main()
}
