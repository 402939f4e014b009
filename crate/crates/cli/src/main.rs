fn main() -> std::process::ExitCode {
    dico::app::main()
}
