//! Run configuration files.
//!
//! A run is described by one TOML document:
//!
//! ```toml
//! [data]
//! format = "mnist"                      # or "cifar10"
//! train = ["train-images-idx3-ubyte.gz", "train-labels-idx1-ubyte.gz"]
//! test = ["t10k-images-idx3-ubyte.gz", "t10k-labels-idx1-ubyte.gz"]
//!
//! [output]
//! dir = "runs/p2"
//!
//! [eval]
//! passes = 2
//! iterations = 5
//!
//! [train]                               # mirrors `TrainConfig`
//! topology = "28x28-12c5-2a-64c5-2a-10o"
//! seed = 1
//! i_rate = 100.0
//!
//! [train.lif]
//! v_th = 1.2
//! ```
//!
//! For `mnist`, `train` and `test` each list an image file then a label
//! file; for `cifar10` they list batch files. Relative paths resolve against
//! the config file's directory.
//!
//! `[data]` and `data.train` are required. Every other key may be omitted;
//! [`load_str`] fills it from the built-in defaults and reports one notice
//! per filled key. Unknown keys are errors.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use toml::{Table, Value};

use crate::data::{read_cifar10, read_idx_dataset, Dataset};
use crate::error::{Error, Result};
use crate::trainer::TrainConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DataFormat {
    Mnist,
    Cifar10,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    pub format: DataFormat,
    pub train: Vec<PathBuf>,
    #[serde(default)]
    pub test: Vec<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    pub dir: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalConfig {
    pub passes: usize,
    pub iterations: usize,
    /// Evaluate on the first `test_images` test items; all when omitted.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub test_images: Option<usize>,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            passes: 2,
            iterations: 5,
            test_images: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub data: DataConfig,
    pub output: OutputConfig,
    pub eval: EvalConfig,
    pub train: TrainConfig,
}

/// A parsed config plus the keys that were filled from defaults.
#[derive(Debug, Clone)]
pub struct Loaded {
    pub config: RunConfig,
    pub notices: Vec<String>,
}

fn defaults() -> Table {
    let mut t = Table::new();
    let out = OutputConfig {
        dir: "runs/default".into(),
    };
    t.insert("output".into(), Value::try_from(out).expect("serializable"));
    t.insert(
        "eval".into(),
        Value::try_from(EvalConfig::default()).expect("serializable"),
    );
    t.insert(
        "train".into(),
        Value::try_from(TrainConfig::default()).expect("serializable"),
    );
    t
}

fn fill(doc: &mut Table, defaults: &Table, prefix: &str, notices: &mut Vec<String>) {
    for (k, dv) in defaults {
        let key = if prefix.is_empty() {
            k.clone()
        } else {
            format!("{prefix}.{k}")
        };
        match (doc.get_mut(k), dv) {
            (None, _) => {
                notices.push(format!("{key} not set, using default {}", render(dv)));
                doc.insert(k.clone(), dv.clone());
            }
            (Some(Value::Table(sub)), Value::Table(dsub)) => fill(sub, dsub, &key, notices),
            _ => {}
        }
    }
}

fn render(v: &Value) -> String {
    match v {
        Value::Table(_) => "section".into(),
        other => other.to_string(),
    }
}

/// Parse a config document. Relative data and output paths are resolved
/// against `base`.
pub fn load_str(text: &str, base: &Path) -> Result<Loaded> {
    let mut doc: Table = text
        .parse()
        .map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
    let data = doc
        .get("data")
        .ok_or_else(|| Error::Config("missing [data] section".into()))?;
    if data.get("train").is_none() {
        return Err(Error::Config("missing data.train".into()));
    }
    let mut notices = Vec::new();
    fill(&mut doc, &defaults(), "", &mut notices);
    let mut config: RunConfig = Value::Table(doc)
        .try_into()
        .map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
    let resolve = |p: &mut PathBuf| {
        if p.is_relative() {
            *p = base.join(&*p);
        }
    };
    config.data.train.iter_mut().for_each(resolve);
    config.data.test.iter_mut().for_each(resolve);
    resolve(&mut config.output.dir);
    config.validate()?;
    Ok(Loaded { config, notices })
}

/// Read and parse a config file.
pub fn load(path: impl AsRef<Path>) -> Result<Loaded> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    load_str(&text, path.parent().unwrap_or(Path::new(".")))
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        let need = |files: &[PathBuf], what: &str| -> Result<()> {
            match (self.data.format, files.len()) {
                (DataFormat::Mnist, 2) => Ok(()),
                (DataFormat::Mnist, n) => Err(Error::Config(format!(
                    "data.{what} for mnist lists an image and a label file, got {n} paths"
                ))),
                (DataFormat::Cifar10, 0) => Err(Error::Config(format!("data.{what} lists no batch files"))),
                (DataFormat::Cifar10, _) => Ok(()),
            }
        };
        need(&self.data.train, "train")?;
        if !self.data.test.is_empty() {
            need(&self.data.test, "test")?;
        }
        if self.eval.passes == 0 || self.eval.iterations == 0 {
            return Err(Error::Config("eval.passes and eval.iterations must be >= 1".into()));
        }
        self.train.validate().map_err(|e| match e {
            Error::Config(m) => Error::Config(m),
            other => Error::Config(other.to_string()),
        })
    }

    pub fn load_train(&self) -> Result<Dataset> {
        self.load_split(&self.data.train)
    }

    /// The test split, cut to `eval.test_images` when set.
    pub fn load_test(&self) -> Result<Dataset> {
        if self.data.test.is_empty() {
            return Err(Error::Config("data.test is not set".into()));
        }
        let test = self.load_split(&self.data.test)?;
        Ok(match self.eval.test_images {
            Some(n) => test.head(n),
            None => test,
        })
    }

    fn load_split(&self, files: &[PathBuf]) -> Result<Dataset> {
        match self.data.format {
            DataFormat::Mnist => read_idx_dataset(&files[0], &files[1]),
            DataFormat::Cifar10 => read_cifar10(files),
        }
    }

    pub fn checkpoint_path(&self) -> PathBuf {
        self.output.dir.join("checkpoint.bin")
    }
}
