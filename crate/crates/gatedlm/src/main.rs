use gatedlm::cli;

fn main() {
    std::process::exit(cli::run());
}
