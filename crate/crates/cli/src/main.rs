fn main() -> std::process::ExitCode {
    fbhdr_cli::main_with(std::env::args_os())
}
