//! Flat `key = value` run configuration with `--key value` overrides.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use anyhow::Context;

pub const RESOLVED_FILE: &str = "config.resolved";

/// A problem with the invocation itself rather than with the data.
#[derive(Debug)]
pub struct UsageError(pub String);

impl fmt::Display for UsageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

pub fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

/// Key accepted by a subcommand, with its default. An empty default means unset.
#[derive(Debug, Clone, Copy)]
pub struct Key {
    pub name: &'static str,
    pub default: &'static str,
    pub help: &'static str,
}

pub const fn key(name: &'static str, default: &'static str, help: &'static str) -> Key {
    Key { name, default, help }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub command: String,
    values: BTreeMap<String, String>,
    pub positional: Vec<String>,
}

fn parse_bool(v: &str) -> Option<bool> {
    match v {
        "true" | "yes" | "1" => Some(true),
        "false" | "no" | "0" => Some(false),
        _ => None,
    }
}

/// Boolean keys only swallow a following token that reads as a boolean.
fn is_bool(keys: &[Key], name: &str) -> bool {
    keys.iter().any(|k| k.name == name && parse_bool(k.default).is_some() && !k.default.chars().all(|c| c.is_ascii_digit()))
}

/// Reads `key = value` lines; `#` starts a comment.
pub fn parse_config_text(text: &str) -> anyhow::Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let Some((k, v)) = line.split_once('=') else {
            return Err(usage(format!("config line {}: expected key = value, got `{raw}`", i + 1)));
        };
        let k = k.trim();
        if k.is_empty() {
            return Err(usage(format!("config line {}: empty key", i + 1)));
        }
        out.push((k.to_string(), v.trim().to_string()));
    }
    Ok(out)
}

impl RunConfig {
    /// Resolves defaults, then the `--config` file, then command-line flags.
    /// Bare `--flag` means `true`. Unknown keys are usage errors.
    pub fn resolve(command: &str, keys: &[Key], args: &[String]) -> anyhow::Result<Self> {
        let mut flags: Vec<(String, String)> = Vec::new();
        let mut positional = Vec::new();
        let mut config_file: Option<String> = None;
        let mut i = 0;
        while i < args.len() {
            let a = &args[i];
            i += 1;
            let Some(body) = a.strip_prefix("--") else {
                positional.push(a.clone());
                continue;
            };
            let (k, v) = match body.split_once('=') {
                Some((k, v)) => (k.to_string(), v.to_string()),
                None => match args.get(i) {
                    Some(next) if !next.starts_with("--") && (!is_bool(keys, body) || parse_bool(next).is_some()) => {
                        i += 1;
                        (body.to_string(), next.clone())
                    }
                    _ => (body.to_string(), "true".to_string()),
                },
            };
            if k == "config" {
                config_file = Some(v);
            } else {
                flags.push((k, v));
            }
        }

        let mut values: BTreeMap<String, String> =
            keys.iter().map(|k| (k.name.to_string(), k.default.to_string())).collect();
        let mut layers = Vec::new();
        if let Some(path) = &config_file {
            let text = std::fs::read_to_string(path).map_err(|e| usage(format!("cannot read config file {path}: {e}")))?;
            layers.push(parse_config_text(&text)?);
        }
        layers.push(flags);
        for (k, v) in layers.into_iter().flatten() {
            match values.get_mut(&k) {
                Some(slot) => *slot = v,
                None => return Err(usage(format!("`{command}` does not accept `{k}`"))),
            }
        }
        Ok(Self {
            command: command.to_string(),
            values,
            positional,
        })
    }

    pub fn set(&mut self, key: &str, value: impl ToString) {
        self.values.insert(key.to_string(), value.to_string());
    }

    pub fn opt(&self, key: &str) -> Option<&str> {
        self.values.get(key).map(String::as_str).filter(|v| !v.is_empty())
    }

    pub fn str(&self, key: &str) -> anyhow::Result<&str> {
        self.opt(key).ok_or_else(|| usage(format!("`{}` needs --{key}", self.command)))
    }

    pub fn path(&self, key: &str) -> anyhow::Result<PathBuf> {
        self.str(key).map(PathBuf::from)
    }

    pub fn opt_path(&self, key: &str) -> Option<PathBuf> {
        self.opt(key).map(PathBuf::from)
    }

    pub fn parse<T: FromStr>(&self, key: &str) -> anyhow::Result<T>
    where
        T::Err: fmt::Display,
    {
        let raw = self.str(key)?;
        raw.parse().map_err(|e| usage(format!("--{key} {raw}: {e}")))
    }

    pub fn parse_opt<T: FromStr>(&self, key: &str) -> anyhow::Result<Option<T>>
    where
        T::Err: fmt::Display,
    {
        match self.opt(key) {
            None => Ok(None),
            Some(_) => self.parse(key).map(Some),
        }
    }

    pub fn flag(&self, key: &str) -> anyhow::Result<bool> {
        let v = self.str(key)?;
        parse_bool(v).ok_or_else(|| usage(format!("--{key}: expected true or false, got `{v}`")))
    }

    /// `key = value` lines in key order.
    pub fn to_text(&self) -> String {
        let mut s = format!("# discnet {}\n", self.command);
        for (k, v) in &self.values {
            s.push_str(&format!("{k} = {v}\n"));
        }
        if !self.positional.is_empty() {
            s.push_str(&format!("# inputs: {}\n", self.positional.join(" ")));
        }
        s
    }

    pub fn write_resolved(&self, dir: &Path) -> anyhow::Result<()> {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        let path = dir.join(RESOLVED_FILE);
        std::fs::write(&path, self.to_text()).with_context(|| format!("writing {}", path.display()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const KEYS: &[Key] = &[key("out", "", ""), key("seed", "0", ""), key("stereo", "false", "")];

    fn args(s: &str) -> Vec<String> {
        s.split_whitespace().map(String::from).collect()
    }

    #[test]
    fn defaults_and_overrides() {
        let c = RunConfig::resolve("x", KEYS, &args("--seed 7 --stereo a.pgm --out=o")).unwrap();
        assert_eq!(c.parse::<u64>("seed").unwrap(), 7);
        assert!(c.flag("stereo").unwrap());
        assert_eq!(c.opt("out"), Some("o"));
        assert_eq!(c.positional, vec!["a.pgm"]);
    }

    #[test]
    fn unknown_key_is_usage_error() {
        let e = RunConfig::resolve("x", KEYS, &args("--bogus 1")).unwrap_err();
        assert!(e.downcast_ref::<UsageError>().is_some());
    }

    #[test]
    fn config_file_then_flags() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.cfg");
        std::fs::write(&path, "# comment\nseed = 3\nout = from_file # trailing\n").unwrap();
        let a = vec!["--config".into(), path.display().to_string(), "--seed".into(), "9".into()];
        let c = RunConfig::resolve("x", KEYS, &a).unwrap();
        assert_eq!(c.opt("seed"), Some("9"));
        assert_eq!(c.opt("out"), Some("from_file"));
    }

    #[test]
    fn resolved_text_round_trips() {
        let c = RunConfig::resolve("x", KEYS, &args("--seed 5 --out d")).unwrap();
        let parsed = parse_config_text(&c.to_text()).unwrap();
        assert_eq!(parsed, vec![("out".into(), "d".into()), ("seed".into(), "5".into()), ("stereo".into(), "false".into())]);
    }

    #[test]
    fn missing_and_malformed_values() {
        let c = RunConfig::resolve("x", KEYS, &args("--seed abc")).unwrap();
        assert!(c.str("out").unwrap_err().downcast_ref::<UsageError>().is_some());
        assert!(c.parse::<u64>("seed").unwrap_err().downcast_ref::<UsageError>().is_some());
        assert!(parse_config_text("novalue").is_err());
    }
}
