fn main() -> std::process::ExitCode {
    parasim::cli::main_with_args(std::env::args_os())
}
