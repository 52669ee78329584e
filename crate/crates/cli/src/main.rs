mod args;
mod evaluate;
mod infer;
mod output;
mod tables;

use std::io::Write;
use std::process::ExitCode;

use clap::Parser;
use exfiqa::{Error, ErrorClass};

use args::{Cli, Command, ImageCommand, WeightsCommand};

fn run(cli: Cli) -> Result<String, Error> {
    match cli.command {
        Command::Infer(a) => infer::run(&a),
        Command::Eval(a) => evaluate::run(&a),
        Command::Flops(a) => tables::flops(&a),
        Command::Weights(WeightsCommand::Inspect(a)) => tables::inspect(&a),
        Command::Weights(WeightsCommand::Synth(a)) => tables::synth_weights(&a),
        Command::Image(ImageCommand::Synth(a)) => tables::synth_image(&a),
    }
}

fn fail(class: ErrorClass, msg: &str) -> ExitCode {
    eprintln!("error[{}]: {}", class.tag(), msg);
    ExitCode::from(class.exit_code() as u8)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let rendered = e.render().to_string();
            let mut lines = rendered.lines();
            let first = lines.next().unwrap_or("invalid arguments");
            let code = fail(ErrorClass::Usage, first.trim_start_matches("error: "));
            for line in lines.filter(|l| !l.trim().is_empty()) {
                eprintln!("  {line}");
            }
            return code;
        }
    };
    match run(cli) {
        Ok(out) => {
            let mut stdout = std::io::stdout().lock();
            if stdout
                .write_all(out.as_bytes())
                .and_then(|_| stdout.flush())
                .is_err()
            {
                return fail(ErrorClass::Io, "cannot write to stdout");
            }
            ExitCode::SUCCESS
        }
        Err(e) => fail(e.class(), &e.to_string().replace('\n', " ")),
    }
}
