use mirror_unet::cli::{self, exit_code_for, parse_cli, USAGE};

fn main() {
    let argv: Vec<String> = std::env::args().skip(1).collect();
    if argv.is_empty() || argv[0] == "--help" || argv[0] == "help" {
        eprintln!("{USAGE}");
        std::process::exit(if argv.is_empty() { 2 } else { 0 });
    }
    let cmd = match parse_cli(&argv) {
        Ok(cmd) => cmd,
        Err(err) => {
            eprintln!("error: {err}");
            eprintln!("{USAGE}");
            std::process::exit(2);
        }
    };
    if let Err(err) = cli::run(cmd) {
        eprintln!("error: {err}");
        std::process::exit(exit_code_for(&err));
    }
}
