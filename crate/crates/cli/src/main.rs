fn main() {
    let ctx = headwise_cli::Context::from_env();
    let code = headwise_cli::run(std::env::args_os(), &ctx, &mut std::io::stdout());
    std::process::exit(code);
}
