use clap::Parser;
use wtstream_server::cli::{run, Cli, Command};

#[tokio::main]
async fn main() {
    let cli = Cli::parse();
    if matches!(cli.command, Command::Serve(_) | Command::FixtureServer { .. }) {
        tracing_subscriber::fmt().with_writer(std::io::stderr).init();
    }
    if let Err(e) = run(cli).await {
        eprintln!("wtstream: {e}");
        std::process::exit(1);
    }
}
