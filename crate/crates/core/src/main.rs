fn main() {
    std::process::exit(rnn_replicator::cli::run_from_args(std::env::args_os()));
}
