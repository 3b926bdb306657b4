//! Batch driver for the discnet pipeline: phantom generation, manifest
//! validation, splitting, training, evaluation and explanation.

pub mod common;
pub mod config;
mod data;
mod explain;
mod fit;
mod report;

use config::{Key, RunConfig, UsageError};

pub const EXIT_OK: i32 = 0;
pub const EXIT_RUNTIME: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

struct Command {
    name: &'static str,
    about: &'static str,
    keys: &'static [Key],
    run: fn(&mut RunConfig) -> anyhow::Result<()>,
}

const COMMANDS: &[Command] = &[
    Command {
        name: "phantom",
        about: "generate a synthetic cohort (photos + manifest)",
        keys: data::PHANTOM_KEYS,
        run: data::phantom,
    },
    Command {
        name: "validate",
        about: "load a manifest and report exclusions and pairing",
        keys: data::VALIDATE_KEYS,
        run: data::validate,
    },
    Command {
        name: "split",
        about: "assign patients to train/valid/test",
        keys: data::SPLIT_KEYS,
        run: data::split,
    },
    Command {
        name: "train",
        about: "two-phase training; writes model.ckpt and history.csv",
        keys: fit::TRAIN_KEYS,
        run: fit::train,
    },
    Command {
        name: "lr-find",
        about: "learning-rate range test",
        keys: fit::LR_FIND_KEYS,
        run: fit::lr_find,
    },
    Command {
        name: "eval",
        about: "agreement, ROC and LOWESS report with SVG figures",
        keys: report::EVAL_KEYS,
        run: report::eval,
    },
    Command {
        name: "gradcam",
        about: "Grad-CAM heatmaps and overlays for photos",
        keys: explain::GRADCAM_KEYS,
        run: explain::gradcam,
    },
    Command {
        name: "gallery",
        about: "contact sheets of correctly and incorrectly classified photos",
        keys: report::GALLERY_KEYS,
        run: report::gallery,
    },
];

pub fn usage_text() -> String {
    let mut s = String::from("usage: discnet <command> [--config FILE] [--key value ...]\n\ncommands:\n");
    for c in COMMANDS {
        s.push_str(&format!("  {:<10} {}\n", c.name, c.about));
    }
    s.push_str("\nrun `discnet <command> --help` for its keys\n");
    s
}

fn command_help(c: &Command) -> String {
    let mut s = format!("usage: discnet {} [--config FILE] [--key value ...]\n{}\n\n", c.name, c.about);
    for k in c.keys {
        let default = if k.default.is_empty() { String::new() } else { format!(" [{}]", k.default) };
        s.push_str(&format!("  --{:<16} {}{}\n", k.name, k.help, default));
    }
    s
}

/// Runs one subcommand and returns the process exit code.
pub fn run<I, S>(args: I) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<String>,
{
    let args: Vec<String> = args.into_iter().map(Into::into).collect();
    let Some(name) = args.first() else {
        eprint!("{}", usage_text());
        return EXIT_USAGE;
    };
    if name == "--help" || name == "-h" || name == "help" {
        print!("{}", usage_text());
        return EXIT_OK;
    }
    let Some(cmd) = COMMANDS.iter().find(|c| c.name == name) else {
        eprintln!("error: unknown command `{name}`\n");
        eprint!("{}", usage_text());
        return EXIT_USAGE;
    };
    let rest = &args[1..];
    if rest.iter().any(|a| a == "--help" || a == "-h") {
        print!("{}", command_help(cmd));
        return EXIT_OK;
    }
    let result = RunConfig::resolve(cmd.name, cmd.keys, rest).and_then(|mut cfg| (cmd.run)(&mut cfg));
    match result {
        Ok(()) => EXIT_OK,
        Err(e) if e.downcast_ref::<UsageError>().is_some() => {
            eprintln!("error: {e}");
            EXIT_USAGE
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            EXIT_RUNTIME
        }
    }
}
