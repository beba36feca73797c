fn main() { std::process::exit(tweetgeo::cli::main_with_args(std::env::args_os())) }
