fn main() {
    let code = gsm_diffusion::cli::main(std::env::args_os());
    std::process::exit(code);
}
