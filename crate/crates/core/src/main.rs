fn main() {
    std::process::exit(antisym_rnn::cli::run(std::env::args_os()));
}
