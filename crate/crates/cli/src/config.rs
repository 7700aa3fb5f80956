//! Run configuration file: `key = value` lines grouped under `[section]`
//! headers (TOML syntax). Strings are quoted, lists use `[a, b]`.
//!
//! ```text
//! seed = 7
//! threads = 2
//!
//! [cluster]
//! protos = 64
//! init = "farthest"
//!
//! [tracker]
//! capacity = 32
//! ```
//!
//! Top-level keys: `seed`, `threads`, `out_dir`. Every section accepts only
//! the keys listed in [`SECTIONS`]; anything else is a config error.

use std::path::Path;

use toml::{Table, Value};

use crate::error::CliError;

pub const GLOBAL_KEYS: &[&str] = &["seed", "threads", "out_dir"];

pub const SECTIONS: &[(&str, &[&str])] = &[
    ("cluster", &["protos", "iters", "sigma2", "init", "value_mode"]),
    ("attend", &[]),
    ("scene", &["preset", "size", "frames", "noise"]),
    (
        "tracker",
        &[
            "preset",
            "capacity",
            "key_dim",
            "value_dim",
            "projection_seed",
            "frame_protos",
            "em_iters",
            "sigma2",
            "instance_protos",
            "instance_protos_pos",
            "instance_protos_neg",
            "instance_em_iters",
            "instance_sigma2",
            "momentum",
            "bg_factor",
            "attention",
            "fuse_a",
            "fuse_b",
            "initial_logit",
            "assoc_iou",
            "assoc_appearance",
            "appearance_weight",
            "association",
            "erosion",
            "dilation",
            "dropout",
            "sweep",
        ],
    ),
    ("bench", &["mechanisms", "t", "h", "w", "d", "c_v", "n", "em_iters", "heads", "instrumented"]),
];

#[derive(Debug, Clone, Default)]
pub struct FileConfig {
    table: Table,
}

impl FileConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self, CliError> {
        let table: Table = text.parse().map_err(|e| CliError::Usage(format!("config: {e}")))?;
        for (key, value) in &table {
            match value {
                Value::Table(section) => {
                    let allowed = SECTIONS
                        .iter()
                        .find(|(name, _)| name == key)
                        .ok_or_else(|| CliError::Usage(format!("config: unknown section [{key}]")))?
                        .1;
                    if let Some(bad) = section.keys().find(|k| !allowed.contains(&k.as_str())) {
                        return Err(CliError::Usage(format!("config: unknown key '{bad}' in [{key}]")));
                    }
                }
                _ if GLOBAL_KEYS.contains(&key.as_str()) => {}
                _ => return Err(CliError::Usage(format!("config: unknown top-level key '{key}'"))),
            }
        }
        Ok(FileConfig { table })
    }

    fn value(&self, section: Option<&str>, key: &str) -> Option<&Value> {
        match section {
            None => self.table.get(key),
            Some(s) => self.table.get(s)?.as_table()?.get(key),
        }
    }

    fn typed<T>(
        &self,
        section: Option<&str>,
        key: &str,
        what: &str,
        conv: impl Fn(&Value) -> Option<T>,
    ) -> Result<Option<T>, CliError> {
        match self.value(section, key) {
            None => Ok(None),
            Some(v) => conv(v).map(Some).ok_or_else(|| {
                let place = section.map(|s| format!("[{s}] ")).unwrap_or_default();
                CliError::Usage(format!("config: {place}{key} must be {what}, got {v}"))
            }),
        }
    }

    pub fn u64(&self, section: Option<&str>, key: &str) -> Result<Option<u64>, CliError> {
        self.typed(section, key, "a non-negative integer", |v| v.as_integer().and_then(|i| u64::try_from(i).ok()))
    }

    pub fn usize(&self, section: Option<&str>, key: &str) -> Result<Option<usize>, CliError> {
        self.typed(section, key, "a non-negative integer", |v| v.as_integer().and_then(|i| usize::try_from(i).ok()))
    }

    pub fn f64(&self, section: Option<&str>, key: &str) -> Result<Option<f64>, CliError> {
        self.typed(section, key, "a number", |v| v.as_float().or_else(|| v.as_integer().map(|i| i as f64)))
    }

    pub fn bool(&self, section: Option<&str>, key: &str) -> Result<Option<bool>, CliError> {
        self.typed(section, key, "true or false", Value::as_bool)
    }

    pub fn string(&self, section: Option<&str>, key: &str) -> Result<Option<String>, CliError> {
        self.typed(section, key, "a string", |v| v.as_str().map(str::to_owned))
    }

    pub fn u64_list(&self, section: Option<&str>, key: &str) -> Result<Option<Vec<u64>>, CliError> {
        self.typed(section, key, "a list of non-negative integers", |v| {
            v.as_array()?.iter().map(|x| x.as_integer().and_then(|i| u64::try_from(i).ok())).collect()
        })
    }

    /// A single integer or a list of them.
    pub fn usize_list(&self, section: Option<&str>, key: &str) -> Result<Option<Vec<usize>>, CliError> {
        let one = |x: &Value| x.as_integer().and_then(|i| usize::try_from(i).ok());
        self.typed(section, key, "an integer or a list of integers", |v| match v.as_array() {
            Some(xs) => xs.iter().map(one).collect(),
            None => one(v).map(|x| vec![x]),
        })
    }

    pub fn string_list(&self, section: Option<&str>, key: &str) -> Result<Option<Vec<String>>, CliError> {
        self.typed(section, key, "a list of strings", |v| {
            v.as_array()?.iter().map(|x| x.as_str().map(str::to_owned)).collect()
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reads_sections_and_globals() {
        let c = FileConfig::parse("seed = 4\n[cluster]\nprotos = 8\nsigma2 = 1\ninit = \"farthest\"\n[bench]\nt = [2, 4]\n")
            .unwrap();
        assert_eq!(c.u64(None, "seed").unwrap(), Some(4));
        assert_eq!(c.usize(Some("cluster"), "protos").unwrap(), Some(8));
        assert_eq!(c.f64(Some("cluster"), "sigma2").unwrap(), Some(1.0));
        assert_eq!(c.string(Some("cluster"), "init").unwrap().as_deref(), Some("farthest"));
        assert_eq!(c.u64_list(Some("bench"), "t").unwrap(), Some(vec![2, 4]));
        assert_eq!(c.usize(Some("cluster"), "iters").unwrap(), None);
        assert_eq!(c.usize(Some("tracker"), "capacity").unwrap(), None);
        let c = FileConfig::parse("[tracker]\ncapacity = 4\n[bench]\nt = [1, 32]\n").unwrap();
        assert_eq!(c.usize_list(Some("tracker"), "capacity").unwrap(), Some(vec![4]));
        assert_eq!(c.usize_list(Some("bench"), "t").unwrap(), Some(vec![1, 32]));
    }

    #[test]
    fn rejects_unknown_and_mistyped() {
        assert!(FileConfig::parse("[nope]\na = 1\n").is_err());
        assert!(FileConfig::parse("[cluster]\nprotoz = 1\n").is_err());
        assert!(FileConfig::parse("colour = 1\n").is_err());
        assert!(FileConfig::parse("seed = \n").is_err());
        let c = FileConfig::parse("[cluster]\nprotos = -3\n").unwrap();
        assert!(c.usize(Some("cluster"), "protos").is_err());
    }
}
