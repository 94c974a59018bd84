//! The `looplab` command line: one subcommand per experiment, deterministic
//! file outputs and a key=value manifest beside each run.

mod cli;
mod commands;
pub mod experiments;
mod output;
mod settings;

use std::ffi::OsString;

use clap::{CommandFactory, FromArgMatches};
use looplab_core::netcore::NetError;
use looplab_core::trainer::TrainError;

pub use cli::Cli;
pub use output::num;
pub use settings::parse_kv;

use commands::Status;
use output::write_atomic;

/// A bad flag, flag value or configuration file.
#[derive(Debug)]
pub struct UsageError(pub String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

pub const EXIT_OK: i32 = 0;
pub const EXIT_VERIFICATION: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

fn is_usage(e: &anyhow::Error) -> bool {
    e.chain().any(|c| {
        c.is::<UsageError>()
            || matches!(c.downcast_ref::<NetError>(), Some(NetError::Config(_)))
            || matches!(
                c.downcast_ref::<TrainError>(),
                Some(TrainError::Config(_) | TrainError::Net(NetError::Config(_)))
            )
    })
}

/// Runs one invocation and returns its exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString>,
{
    let argv: Vec<OsString> = args.into_iter().map(Into::into).collect();
    // Later occurrences of a flag replace earlier ones, which is how
    // explicit flags override the spliced-in config file.
    let cmd = Cli::command()
        .args_override_self(true)
        .mut_subcommands(|s| s.args_override_self(true));
    let argv = match settings::expand_argv(&cmd, argv) {
        Ok(a) => a,
        Err(e) => {
            eprintln!("error: {e}");
            return EXIT_USAGE;
        }
    };
    let matches = match cmd.clone().try_get_matches_from(&argv) {
        Ok(m) => m,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    let parsed = match Cli::from_arg_matches(&matches) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return EXIT_USAGE;
        }
    };
    let Some((name, sub_matches)) = matches.subcommand() else {
        return EXIT_USAGE;
    };
    let flags = cmd
        .find_subcommand(name)
        .map(|sub| settings::resolved_flags(sub, sub_matches))
        .unwrap_or_default();
    let outcome = match commands::execute(parsed.command) {
        Ok(o) => o,
        Err(e) => {
            eprintln!("error: {e:#}");
            return if is_usage(&e) {
                EXIT_USAGE
            } else {
                EXIT_VERIFICATION
            };
        }
    };
    for line in &outcome.lines {
        println!("{line}");
    }
    if outcome.status == Status::VerificationFailed {
        eprintln!("verification failed; no output files written");
        return EXIT_VERIFICATION;
    }
    for f in &outcome.files {
        if let Err(e) = write_atomic(&f.path, &f.bytes) {
            eprintln!("error: cannot write {}: {e}", f.path.display());
            return EXIT_VERIFICATION;
        }
    }
    if let Some(first) = outcome.files.first() {
        let outputs: Vec<(String, &std::path::Path)> = outcome
            .files
            .iter()
            .map(|f| (f.label.clone(), f.path.as_path()))
            .collect();
        let mut path = first.path.clone().into_os_string();
        path.push(".manifest");
        let text = settings::manifest(name, &flags, &outputs);
        if let Err(e) = write_atomic(path.as_ref(), text.as_bytes()) {
            eprintln!("error: cannot write manifest: {e}");
            return EXIT_VERIFICATION;
        }
    }
    match outcome.status {
        Status::Aborted => EXIT_VERIFICATION,
        _ => EXIT_OK,
    }
}
