fn main() -> std::process::ExitCode {
    dams::cli::run(std::env::args_os())
}
