fn main() {
    std::process::exit(coordgame::cli::main_with(std::env::args_os()));
}
