fn main() -> std::process::ExitCode {
    contract_qa_service::cli::main()
}
