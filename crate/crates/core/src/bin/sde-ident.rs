fn main() {
    std::process::exit(sde_ident::cli::run(std::env::args_os()));
}
