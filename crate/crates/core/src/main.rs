fn main() -> std::process::ExitCode {
    prach_sentinel::cli::run(std::env::args_os())
}
