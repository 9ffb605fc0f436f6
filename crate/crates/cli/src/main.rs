//! `denoiser` command-line front end. Exit codes: 0 success, 1 for any
//! configuration problem (bad flags, bad config file, missing inputs),
//! 2 for failures during execution.

mod commands;
mod schema;

use schema::Cmd;

fn main() {
    std::process::exit(real_main());
}

fn real_main() -> i32 {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let Some(first) = args.first() else {
        eprint!("{}", schema::global_help());
        return 1;
    };
    if matches!(first.as_str(), "--help" | "-h" | "help") {
        print!("{}", schema::global_help());
        return 0;
    }
    let Some(cmd) = Cmd::parse(first) else {
        eprintln!("unknown command `{first}`\n");
        eprint!("{}", schema::global_help());
        return 1;
    };
    let rest = &args[1..];
    if rest.iter().any(|a| a == "--help" || a == "-h") {
        print!("{}", schema::command_help(cmd));
        return 0;
    }
    let run = match schema::parse_args(cmd, rest) {
        Ok(run) => run,
        Err(e) => {
            eprintln!("config error: {e}");
            return 1;
        }
    };
    let plan = match commands::plan(&run) {
        Ok(plan) => plan,
        Err(e) => {
            eprintln!("config error: {e}");
            return 1;
        }
    };
    match commands::execute(plan) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            2
        }
    }
}
