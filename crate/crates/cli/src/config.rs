//! Flag / config-file merging and shared option groups.
//!
//! Every command's flags are `Option`s. A JSON config file can supply any of
//! them under the same (snake_case) names; flags win over the file, and the
//! command fills in defaults for whatever is still unset.

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, ValueEnum};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use nyskoop::kernels::KernelSpec;

use crate::error::{CliError, CliResult};

/// Overlays the non-null flag values onto the config file and deserializes
/// the result. Keys the command does not know are rejected.
pub fn resolve<T: Serialize + DeserializeOwned>(flags: &T, config: Option<&Path>) -> CliResult<T> {
    let Some(path) = config else {
        return Ok(clone_via_json(flags)?);
    };
    let text = fs::read_to_string(path).map_err(|e| CliError::data(format!("{}: {e}", path.display())))?;
    let file: Value =
        serde_json::from_str(&text).map_err(|e| CliError::usage(format!("config {}: {e}", path.display())))?;
    let Value::Object(mut merged) = file else {
        return Err(CliError::usage(format!("config {} must be a JSON object", path.display())));
    };
    let Value::Object(cli) = to_value(flags)? else {
        unreachable!("argument structs serialize to objects");
    };
    if let Some(unknown) = merged.keys().find(|k| !cli.contains_key(*k)) {
        return Err(CliError::usage(format!("unknown config key '{unknown}'")));
    }
    for (k, v) in cli {
        if !v.is_null() {
            merged.insert(k, v);
        }
    }
    serde_json::from_value(Value::Object(merged)).map_err(|e| CliError::usage(format!("config {}: {e}", path.display())))
}

fn to_value<T: Serialize>(v: &T) -> CliResult<Value> {
    serde_json::to_value(v).map_err(|e| CliError::usage(e.to_string()))
}

fn clone_via_json<T: Serialize + DeserializeOwned>(v: &T) -> CliResult<T> {
    serde_json::from_value(to_value(v)?).map_err(|e| CliError::usage(e.to_string()))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum KernelFamily {
    Rbf,
    Linear,
    Poly,
}

#[derive(Args, Debug, Clone, Default, Serialize, Deserialize)]
pub struct KernelArgs {
    /// Kernel family [default: rbf]
    #[arg(long, value_enum)]
    pub kernel: Option<KernelFamily>,
    /// RBF bandwidth [default: 1.0]
    #[arg(long)]
    pub sigma: Option<f64>,
    /// Polynomial degree [default: 2]
    #[arg(long)]
    pub degree: Option<u32>,
    /// Polynomial offset [default: 1.0]
    #[arg(long)]
    pub offset: Option<f64>,
}

impl KernelArgs {
    pub fn spec(&self) -> CliResult<KernelSpec> {
        let family = self.kernel.unwrap_or(KernelFamily::Rbf);
        let stray = |name: &str| CliError::usage(format!("--{name} does not apply to the {family:?} kernel"));
        let spec = match family {
            KernelFamily::Rbf => {
                if self.degree.is_some() {
                    return Err(stray("degree"));
                }
                if self.offset.is_some() {
                    return Err(stray("offset"));
                }
                KernelSpec::Rbf { sigma: self.sigma.unwrap_or(1.0) }
            }
            KernelFamily::Linear => {
                if self.sigma.is_some() {
                    return Err(stray("sigma"));
                }
                if self.degree.is_some() {
                    return Err(stray("degree"));
                }
                if self.offset.is_some() {
                    return Err(stray("offset"));
                }
                KernelSpec::Linear
            }
            KernelFamily::Poly => {
                if self.sigma.is_some() {
                    return Err(stray("sigma"));
                }
                KernelSpec::Polynomial { degree: self.degree.unwrap_or(2), offset: self.offset.unwrap_or(1.0) }
            }
        };
        spec.validate()?;
        Ok(spec)
    }
}

/// `"1,2,3"` into a list.
pub fn parse_list<T: std::str::FromStr>(text: &str, what: &str) -> CliResult<Vec<T>> {
    let items: Vec<&str> = text.split(',').map(str::trim).filter(|s| !s.is_empty()).collect();
    if items.is_empty() {
        return Err(CliError::usage(format!("--{what} must not be empty")));
    }
    items
        .into_iter()
        .map(|s| s.parse().map_err(|_| CliError::usage(format!("--{what}: cannot parse '{s}'"))))
        .collect()
}

/// `"a,b;c,d"` into a square matrix.
pub fn parse_matrix(text: &str, what: &str) -> CliResult<Vec<Vec<f64>>> {
    let rows = text
        .split(';')
        .map(|row| parse_list::<f64>(row, what))
        .collect::<CliResult<Vec<_>>>()?;
    if rows.iter().any(|r| r.len() != rows.len()) {
        return Err(CliError::usage(format!("--{what} must be a square matrix written as 'a,b;c,d'")));
    }
    Ok(rows)
}

pub fn require<T>(v: Option<T>, name: &str) -> CliResult<T> {
    v.ok_or_else(|| CliError::usage(format!("--{name} is required")))
}

/// Fails before any computation if the output file cannot be created.
pub fn check_output(path: &Path) -> CliResult<()> {
    let parent = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
        _ => PathBuf::from("."),
    };
    if !parent.is_dir() {
        return Err(CliError::data(format!("cannot write {}: directory does not exist", path.display())));
    }
    if path.is_dir() {
        return Err(CliError::data(format!("cannot write {}: is a directory", path.display())));
    }
    Ok(())
}

pub fn check_input(path: &Path) -> CliResult<()> {
    if !path.is_file() {
        return Err(CliError::data(format!("cannot read {}: no such file", path.display())));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[derive(Debug, Default, Serialize, Deserialize, PartialEq)]
    struct Demo {
        a: Option<u32>,
        b: Option<String>,
    }

    #[test]
    fn flags_override_config() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.json");
        fs::write(&path, r#"{"a": 1, "b": "file"}"#).unwrap();
        let flags = Demo { a: Some(7), b: None };
        let out = resolve(&flags, Some(&path)).unwrap();
        assert_eq!(out, Demo { a: Some(7), b: Some("file".into()) });
        assert_eq!(resolve(&flags, None).unwrap(), flags);
    }

    #[test]
    fn unknown_keys_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.json");
        fs::write(&path, r#"{"a": 1, "zzz": 2}"#).unwrap();
        assert!(matches!(resolve(&Demo::default(), Some(&path)), Err(CliError::Usage(_))));
        fs::write(&path, "[1]").unwrap();
        assert!(matches!(resolve(&Demo::default(), Some(&path)), Err(CliError::Usage(_))));
    }

    #[test]
    fn kernel_flags() {
        let k = KernelArgs { kernel: Some(KernelFamily::Poly), degree: Some(3), ..Default::default() };
        assert_eq!(k.spec().unwrap(), KernelSpec::Polynomial { degree: 3, offset: 1.0 });
        let bad = KernelArgs { kernel: Some(KernelFamily::Linear), sigma: Some(1.0), ..Default::default() };
        assert!(bad.spec().is_err());
        let bad = KernelArgs { sigma: Some(-1.0), ..Default::default() };
        assert!(matches!(bad.spec(), Err(CliError::Usage(_))));
    }

    #[test]
    fn lists_and_matrices() {
        assert_eq!(parse_list::<usize>("1, 2,3", "n").unwrap(), vec![1, 2, 3]);
        assert!(parse_list::<usize>("1,x", "n").is_err());
        assert!(parse_list::<usize>("", "n").is_err());
        assert_eq!(parse_matrix("1,2;3,4", "m").unwrap(), vec![vec![1.0, 2.0], vec![3.0, 4.0]]);
        assert!(parse_matrix("1,2;3", "m").is_err());
    }
}
