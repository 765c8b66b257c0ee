fn main() -> std::process::ExitCode {
    akdv::cli::main()
}
