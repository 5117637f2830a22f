fn main() -> std::process::ExitCode {
    nlpd_tmo::cli::main()
}
