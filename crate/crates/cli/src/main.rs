fn main() -> std::process::ExitCode {
    let code = vps_cli::cli_main(std::env::args_os());
    std::process::ExitCode::from(code as u8)
}
