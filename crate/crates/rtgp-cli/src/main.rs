//! `rtgp`: end-to-end command line for scalar-on-image regression with a
//! relaxed-thresholded Gaussian process prior.
//!
//! Exit status: 0 on success, 1 on usage or configuration errors, 2 on
//! data/format errors, 3 on numerical errors.

use std::process::ExitCode;

use clap::Parser;

mod cli;
mod commands;
mod resolve;

fn main() -> ExitCode {
    let parsed = match cli::Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                print!("{e}");
                return ExitCode::SUCCESS;
            }
            eprint!("{e}");
            return ExitCode::from(1);
        }
    };
    match commands::dispatch(parsed) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(exit_code(&err))
        }
    }
}

fn exit_code(err: &rtgp_core::Error) -> u8 {
    use rtgp_core::Error;
    match err {
        Error::InvalidArgument(_) | Error::Config(_) => 1,
        Error::Format { .. } | Error::Version { .. } | Error::Io(_) => 2,
        Error::Numerical(_) => 3,
    }
}
