//! Config schema: one table defines every key, which subcommands accept
//! it, its default, and its help line. The file parser, the flag parser,
//! and `--help` all read this table, so they cannot drift apart.
//!
//! Config files are flat `key = value` lines (`#` comments and blank lines
//! allowed). Flags are `--key value` and win over the file. Unknown keys
//! are errors; keys that exist in the schema but belong to a different
//! subcommand are errors as flags and ignored in files (so one file can
//! serve a whole experiment).

use std::collections::BTreeMap;
use std::fmt::Write as _;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Cmd {
    Train,
    FineTune,
    Denoise,
    Eval,
    Oracle,
    MakeNoisy,
}

impl Cmd {
    pub const ALL: [Cmd; 6] = [
        Cmd::Train,
        Cmd::FineTune,
        Cmd::Denoise,
        Cmd::Eval,
        Cmd::Oracle,
        Cmd::MakeNoisy,
    ];

    pub fn parse(name: &str) -> Option<Cmd> {
        Cmd::ALL.into_iter().find(|c| c.name() == name)
    }

    pub fn name(self) -> &'static str {
        match self {
            Cmd::Train => "train",
            Cmd::FineTune => "fine-tune",
            Cmd::Denoise => "denoise",
            Cmd::Eval => "eval",
            Cmd::Oracle => "oracle",
            Cmd::MakeNoisy => "make-noisy",
        }
    }

    pub fn about(self) -> &'static str {
        match self {
            Cmd::Train => "train a denoising network from scratch",
            Cmd::FineTune => "continue a checkpoint at a new secondary noise scale",
            Cmd::Denoise => "run a checkpoint on one image and write raw/residual/corrected outputs",
            Cmd::Eval => "score a checkpoint over a held-out directory, writing a CSV report",
            Cmd::Oracle => "run the statistical self-checks and print a pass/fail table",
            Cmd::MakeNoisy => "corrupt a directory of clean PNGs, keeping exact float sidecars",
        }
    }
}

pub struct KeyDef {
    pub key: &'static str,
    pub hint: &'static str,
    pub help: &'static str,
    pub applies: &'static [Cmd],
    pub required: &'static [Cmd],
    pub default: Option<&'static str>,
}

use Cmd::{Denoise, Eval, FineTune, MakeNoisy, Oracle, Train};

const TRAINING: &[Cmd] = &[Train, FineTune];
const NOISY: &[Cmd] = &[Train, FineTune, Eval, Denoise, MakeNoisy];
const RULED: &[Cmd] = &[Train, FineTune, Eval, Denoise];
const SEEDED: &[Cmd] = &[Train, FineTune, Eval, MakeNoisy, Oracle];

pub const SCHEMA: &[KeyDef] = &[
    KeyDef {
        key: "config",
        hint: "PATH",
        help: "flat key = value config file; --key value flags override it",
        applies: &Cmd::ALL,
        required: &[],
        default: None,
    },
    KeyDef {
        key: "data_dir",
        hint: "DIR",
        help: "directory of clean training PNGs",
        applies: TRAINING,
        required: TRAINING,
        default: None,
    },
    KeyDef {
        key: "out_dir",
        hint: "DIR",
        help: "where artifacts are written (checkpoints, CSVs, images)",
        applies: &[Train, FineTune, Eval, Denoise, MakeNoisy],
        required: &[Train, FineTune, Eval, MakeNoisy],
        default: None,
    },
    KeyDef {
        key: "noise",
        hint: "gaussian|structured|mask",
        help: "primary corruption model",
        applies: NOISY,
        required: &[],
        default: Some("gaussian"),
    },
    KeyDef {
        key: "sigma",
        hint: "FLOAT",
        help: "primary noise standard deviation (gaussian and structured)",
        applies: NOISY,
        required: &[],
        default: Some("0.1"),
    },
    KeyDef {
        key: "kernel_size",
        hint: "ODD INT",
        help: "structured noise: smoothing kernel width in pixels",
        applies: NOISY,
        required: &[],
        default: Some("21"),
    },
    KeyDef {
        key: "kernel_sigma",
        hint: "FLOAT",
        help: "structured noise: smoothing kernel std in pixels",
        applies: NOISY,
        required: &[],
        default: Some("3"),
    },
    KeyDef {
        key: "drop_prob",
        hint: "FLOAT",
        help: "mask noise: primary drop probability p",
        applies: NOISY,
        required: &[],
        default: Some("0.5"),
    },
    KeyDef {
        key: "alpha",
        hint: "FLOAT",
        help: "secondary-to-primary noise scale (additive kinds)",
        applies: RULED,
        required: &[],
        default: Some("1"),
    },
    KeyDef {
        key: "q",
        hint: "FLOAT",
        help: "mask noise: secondary drop probability",
        applies: RULED,
        required: &[],
        default: None,
    },
    KeyDef {
        key: "patch_size",
        hint: "INT",
        help: "training crop side length",
        applies: TRAINING,
        required: &[],
        default: Some("64"),
    },
    KeyDef {
        key: "batch_size",
        hint: "INT",
        help: "crops per optimizer step",
        applies: TRAINING,
        required: &[],
        default: Some("32"),
    },
    KeyDef {
        key: "total_batches",
        hint: "INT",
        help: "optimizer steps to run",
        applies: TRAINING,
        required: &[],
        default: Some("20000"),
    },
    KeyDef {
        key: "lr_schedule",
        hint: "B:LR,B:LR,...",
        help: "piecewise-constant learning rate starting at batch B \
               (default: 1e-3, dropping to 1e-4 for the last 10%)",
        applies: TRAINING,
        required: &[],
        default: None,
    },
    KeyDef {
        key: "checkpoint_every",
        hint: "INT",
        help: "cadence of intermediate checkpoints (0 = only the final one)",
        applies: TRAINING,
        required: &[],
        default: Some("1000"),
    },
    KeyDef {
        key: "seed",
        hint: "INT",
        help: "root seed; the only entropy source in the program",
        applies: SEEDED,
        required: &[],
        default: Some("0"),
    },
    KeyDef {
        key: "resume_from",
        hint: "PATH",
        help: "continue an interrupted run bit-exactly from this checkpoint",
        applies: &[Train],
        required: &[],
        default: None,
    },
    KeyDef {
        key: "checkpoint",
        hint: "PATH",
        help: "trained checkpoint to load",
        applies: &[FineTune, Eval, Denoise],
        required: &[FineTune, Eval, Denoise],
        default: None,
    },
    KeyDef {
        key: "new_alpha",
        hint: "FLOAT",
        help: "secondary noise scale to fine-tune toward",
        applies: &[FineTune],
        required: &[FineTune],
        default: None,
    },
    KeyDef {
        key: "input",
        hint: "PATH",
        help: "noisy image to denoise (.png, or .fimg for unclipped floats)",
        applies: &[Denoise],
        required: &[Denoise],
        default: None,
    },
    KeyDef {
        key: "test_dir",
        hint: "DIR",
        help: "held-out clean PNGs to score against",
        applies: &[Eval],
        required: &[Eval],
        default: None,
    },
    KeyDef {
        key: "in_dir",
        hint: "DIR",
        help: "clean PNGs to corrupt",
        applies: &[MakeNoisy],
        required: &[MakeNoisy],
        default: None,
    },
    KeyDef {
        key: "mode",
        hint: "doubly-noisy|singly-noisy",
        help: "whether the network input carries the second corruption",
        applies: &[Eval, Denoise],
        required: &[],
        default: Some("doubly-noisy"),
    },
    KeyDef {
        key: "report",
        hint: "PATH",
        help: "evaluation CSV path (default: <out_dir>/eval.csv)",
        applies: &[Eval],
        required: &[],
        default: None,
    },
    KeyDef {
        key: "draws",
        hint: "INT",
        help: "independent noise draws averaged per evaluated image",
        applies: &[Eval],
        required: &[],
        default: Some("1"),
    },
    KeyDef {
        key: "debug_dump",
        hint: "BOOL",
        help: "also write unclipped float tensors next to the PNGs",
        applies: &[Denoise],
        required: &[],
        default: Some("false"),
    },
    KeyDef {
        key: "figures",
        hint: "BOOL",
        help: "write a labeled clean/input/raw/corrected strip per image",
        applies: &[Eval],
        required: &[],
        default: Some("false"),
    },
];

fn find_def(key: &str) -> Option<&'static KeyDef> {
    SCHEMA.iter().find(|s| s.key == key)
}

/// Key-value store resolved from defaults, then the config file, then
/// command-line flags.
#[derive(Debug)]
pub struct RunConfig {
    pub cmd: Cmd,
    values: BTreeMap<&'static str, String>,
}

pub fn parse_args(cmd: Cmd, args: &[String]) -> Result<RunConfig, String> {
    let mut flags: Vec<(String, String)> = Vec::new();
    let mut i = 0;
    while i < args.len() {
        let key = args[i]
            .strip_prefix("--")
            .ok_or_else(|| format!("expected `--key value`, got `{}`", args[i]))?;
        let value = args
            .get(i + 1)
            .ok_or_else(|| format!("flag --{key} is missing its value"))?;
        flags.push((key.to_string(), value.clone()));
        i += 2;
    }

    let mut values: BTreeMap<&'static str, String> = BTreeMap::new();
    for def in SCHEMA {
        if let (Some(default), true) = (def.default, def.applies.contains(&cmd)) {
            values.insert(def.key, default.to_string());
        }
    }

    if let Some((_, path)) = flags.iter().find(|(k, _)| k == "config") {
        let text = std::fs::read_to_string(path)
            .map_err(|e| format!("cannot read config file {path}: {e}"))?;
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| format!("{path}:{}: expected `key = value`", lineno + 1))?;
            let (key, value) = (key.trim(), value.trim());
            let def = find_def(key)
                .ok_or_else(|| format!("{path}:{}: unknown key `{key}`", lineno + 1))?;
            if def.applies.contains(&cmd) {
                values.insert(def.key, value.to_string());
            }
        }
    }

    for (key, value) in &flags {
        if key == "config" {
            continue;
        }
        let def = find_def(key).ok_or_else(|| format!("unknown key `--{key}`"))?;
        if !def.applies.contains(&cmd) {
            return Err(format!("key `--{key}` does not apply to `{}`", cmd.name()));
        }
        values.insert(def.key, value.clone());
    }

    for def in SCHEMA {
        if def.required.contains(&cmd) && !values.contains_key(def.key) {
            return Err(format!(
                "missing required key `{}` for `{}`",
                def.key,
                cmd.name()
            ));
        }
    }

    Ok(RunConfig { cmd, values })
}

impl RunConfig {
    pub fn get(&self, key: &str) -> Option<&str> {
        self.values.get(key).map(|s| s.as_str())
    }

    pub fn string(&self, key: &str) -> Result<String, String> {
        self.get(key)
            .map(str::to_string)
            .ok_or_else(|| format!("missing required key `{key}` for `{}`", self.cmd.name()))
    }

    pub fn f64(&self, key: &str) -> Result<f64, String> {
        self.string(key)?
            .parse()
            .map_err(|_| format!("key `{key}` must be a number, got `{}`", self.string(key).unwrap()))
    }

    pub fn u64(&self, key: &str) -> Result<u64, String> {
        self.string(key)?
            .parse()
            .map_err(|_| format!("key `{key}` must be a non-negative integer, got `{}`", self.string(key).unwrap()))
    }

    pub fn usize(&self, key: &str) -> Result<usize, String> {
        self.u64(key).map(|v| v as usize)
    }

    pub fn bool(&self, key: &str) -> Result<bool, String> {
        match self.string(key)?.as_str() {
            "true" | "1" => Ok(true),
            "false" | "0" => Ok(false),
            other => Err(format!("key `{key}` must be true or false, got `{other}`")),
        }
    }

    pub fn path(&self, key: &str) -> Result<std::path::PathBuf, String> {
        self.string(key).map(std::path::PathBuf::from)
    }
}

/// `B:LR,B:LR,...` with strictly increasing batch indices.
pub fn parse_schedule(s: &str) -> Result<Vec<(u64, f64)>, String> {
    let mut schedule = Vec::new();
    for part in s.split(',') {
        let (batch, lr) = part
            .split_once(':')
            .ok_or_else(|| format!("lr_schedule entry `{part}` is not BATCH:LR"))?;
        let batch: u64 = batch
            .trim()
            .parse()
            .map_err(|_| format!("lr_schedule batch `{batch}` is not an integer"))?;
        let lr: f64 = lr
            .trim()
            .parse()
            .map_err(|_| format!("lr_schedule rate `{lr}` is not a number"))?;
        schedule.push((batch, lr));
    }
    Ok(schedule)
}

pub fn global_help() -> String {
    let mut out = String::from(
        "usage: denoiser <command> [--key value ...]\n\n\
         Self-supervised image denoiser trained on doubly-corrupted data.\n\ncommands:\n",
    );
    for cmd in Cmd::ALL {
        let _ = writeln!(out, "  {:<11} {}", cmd.name(), cmd.about());
    }
    out.push_str("\nRun `denoiser <command> --help` for that command's keys.\n");
    out
}

pub fn command_help(cmd: Cmd) -> String {
    let mut out = format!(
        "usage: denoiser {} [--key value ...]\n\n{}\n\nkeys (settable in the config file or as --key value flags):\n",
        cmd.name(),
        cmd.about()
    );
    for def in SCHEMA {
        if !def.applies.contains(&cmd) {
            continue;
        }
        let status = if def.required.contains(&cmd) {
            "required".to_string()
        } else if let Some(d) = def.default {
            format!("default: {d}")
        } else {
            "optional".to_string()
        };
        let _ = writeln!(out, "  --{} <{}>  [{status}]", def.key, def.hint);
        let _ = writeln!(out, "      {}", def.help);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn args(list: &[&str]) -> Vec<String> {
        list.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn defaults_file_and_flags_layer_in_order() {
        let dir = tempfile::tempdir().unwrap();
        let file = dir.path().join("run.cfg");
        std::fs::write(
            &file,
            "# experiment\nsigma = 0.05\ndata_dir = /data\nout_dir = /out\n",
        )
        .unwrap();
        let cfg = parse_args(
            Cmd::Train,
            &args(&["--config", file.to_str().unwrap(), "--sigma", "0.2"]),
        )
        .unwrap();
        assert_eq!(cfg.get("sigma"), Some("0.2"), "flag beats file");
        assert_eq!(cfg.get("data_dir"), Some("/data"), "file beats nothing");
        assert_eq!(cfg.get("batch_size"), Some("32"), "default fills the rest");
    }

    #[test]
    fn unknown_keys_are_errors_everywhere() {
        let err = parse_args(Cmd::Train, &args(&["--sigmaa", "0.1"])).unwrap_err();
        assert!(err.contains("sigmaa"), "{err}");

        let dir = tempfile::tempdir().unwrap();
        let file = dir.path().join("run.cfg");
        std::fs::write(&file, "data_dir = /d\nout_dir = /o\nsgima = 0.1\n").unwrap();
        let err =
            parse_args(Cmd::Train, &args(&["--config", file.to_str().unwrap()])).unwrap_err();
        assert!(err.contains("sgima") && err.contains(":3"), "{err}");
    }

    #[test]
    fn flags_for_the_wrong_command_are_rejected_but_file_keys_are_shared() {
        let err = parse_args(Cmd::Oracle, &args(&["--patch_size", "64"])).unwrap_err();
        assert!(err.contains("does not apply"), "{err}");

        // A file shared across commands may carry keys this command ignores.
        let dir = tempfile::tempdir().unwrap();
        let file = dir.path().join("run.cfg");
        std::fs::write(&file, "patch_size = 64\nseed = 5\n").unwrap();
        let cfg = parse_args(Cmd::Oracle, &args(&["--config", file.to_str().unwrap()])).unwrap();
        assert_eq!(cfg.get("seed"), Some("5"));
        assert_eq!(cfg.get("patch_size"), None);
    }

    #[test]
    fn missing_required_key_names_it() {
        let err = parse_args(Cmd::Train, &args(&["--out_dir", "/o"])).unwrap_err();
        assert!(err.contains("data_dir"), "{err}");
    }

    #[test]
    fn schedule_strings_parse() {
        assert_eq!(
            parse_schedule("0:1e-3,18000:1e-4").unwrap(),
            vec![(0, 1e-3), (18_000, 1e-4)]
        );
        assert!(parse_schedule("0:1e-3,oops").is_err());
        assert!(parse_schedule("5").is_err());
    }

    #[test]
    fn help_lists_exactly_the_applicable_keys() {
        for cmd in Cmd::ALL {
            let help = command_help(cmd);
            for def in SCHEMA {
                // Match the full flag token (`--key <HINT>`): bare prefixes
                // would collide, e.g. --checkpoint inside --checkpoint_every.
                let mentioned = help.contains(&format!("--{} <", def.key));
                assert_eq!(
                    mentioned,
                    def.applies.contains(&cmd),
                    "{} / --{}",
                    cmd.name(),
                    def.key
                );
            }
        }
    }

    #[test]
    fn typed_getters_report_bad_values() {
        let cfg = parse_args(Cmd::Oracle, &args(&["--seed", "notanumber"])).unwrap();
        let err = cfg.u64("seed").unwrap_err();
        assert!(err.contains("seed") && err.contains("notanumber"), "{err}");
    }
}
