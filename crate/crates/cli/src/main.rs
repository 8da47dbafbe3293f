use std::process::ExitCode;

use clap::Parser;
use xmonsim_cli::commands::{execute, resolve, Cli};
use xmonsim_cli::config::RunConfig;
use xmonsim_cli::output::{emit, to_json, Format};

fn exit_code(err: &anyhow::Error) -> u8 {
    let nonconvergence = err
        .chain()
        .any(|e| matches!(e.downcast_ref::<xmonsim::Error>(), Some(xmonsim::Error::NonConvergence(_))));
    if nonconvergence {
        2
    } else {
        1
    }
}

fn run(cli: &Cli) -> anyhow::Result<()> {
    if let Some(t) = cli.threads {
        rayon::ThreadPoolBuilder::new().num_threads(t.max(1)).build_global()?;
    }
    let base = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    let cfg = resolve(cli, base)?;
    let outcome = execute(cli, &cfg)?;
    if let Some(s) = &outcome.summary {
        eprint!("{s}");
        if !s.ends_with('\n') {
            eprintln!();
        }
    }
    let text = match cli.format {
        Format::Json => to_json(&outcome.name, &cfg, &outcome.result)?,
        Format::Csv => match &outcome.table {
            Some(t) => t.to_csv()?,
            None => anyhow::bail!("{} has no CSV form", outcome.name),
        },
    };
    emit(&text, cli.out.as_deref())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
