use clap::Parser;

fn main() {
    // clap would exit with 2 on usage errors, which is reserved for rejections.
    let cli = match collective_steer_cli::Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            std::process::exit(if e.use_stderr() { 1 } else { 0 });
        }
    };
    std::process::exit(collective_steer_cli::run(cli));
}
