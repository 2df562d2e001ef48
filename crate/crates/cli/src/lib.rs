//! Command implementations behind the `tgmr` binary.

pub mod ablate;
pub mod args;
pub mod commands;
pub mod run_info;
pub mod svg;

pub use args::{Cli, Command};

/// 2 for invalid input (arguments, config, data), 1 for everything else.
pub fn exit_code(err: &anyhow::Error) -> i32 {
    for cause in err.chain() {
        if let Some(e) = cause.downcast_ref::<tgmr_core::Error>() {
            return if e.is_validation() { 2 } else { 1 };
        }
        if cause.downcast_ref::<clap::Error>().is_some() {
            return 2;
        }
    }
    1
}

pub fn run(cli: Cli) -> anyhow::Result<()> {
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    }
    match cli.command {
        Command::GenData(a) => commands::gen_data(&a),
        Command::Train(a) => commands::train(&a).map(|_| ()),
        Command::Predict(a) => commands::predict(&a),
        Command::Eval(a) => commands::eval(&a).map(|_| ()),
        Command::Ablate(a) => ablate::ablate(&a).map(|_| ()),
    }
}
