use clap::Parser;

fn main() {
    let args = hdp::cli::TrainArgs::parse();
    if let Err(err) = hdp::cli::run_train(&args) {
        eprintln!("error: {err:#}");
        std::process::exit(1);
    }
}
