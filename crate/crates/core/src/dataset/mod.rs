//! Image manifests and everything that produces them: the name-to-class
//! mapping, stratified splitting, the synthetic two-domain generator, and
//! the per-channel mean preprocessing.

mod image;
mod mapping;
mod split;
mod stopwords;
pub mod synthetic;

use std::collections::HashSet;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use thiserror::Error;

pub use image::{compute_mean_rgb, load_rgb, preprocess, save_rgb, RgbImage};
pub use mapping::{map_to_classes, tokenize_name, ClassMapping, MatchStatus};
pub use split::{split_manifest, Fractions};
pub use stopwords::{default_stopwords, read_stopwords};
pub use synthetic::{generate_synthetic, Domain, SyntheticConfig, SHAPES};

use crate::tensor::Tensor;

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: unreadable image: {reason}")]
    Image { path: PathBuf, reason: String },
    #[error("{path}:{line}: {reason}")]
    Parse {
        path: PathBuf,
        line: usize,
        reason: String,
    },
    #[error("class `{class}` has {count} records, needs at least {needed}")]
    ClassTooSmall {
        class: String,
        count: usize,
        needed: usize,
    },
    #[error("invalid split fractions: {0}")]
    Fractions(String),
    #[error("empty training split")]
    EmptyTrain,
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("manifest: {0}")]
    Manifest(String),
}

pub type Result<T> = std::result::Result<T, DatasetError>;

pub(crate) fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> DatasetError + '_ {
    move |source| DatasetError::Io {
        path: path.to_path_buf(),
        source,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Val, Split::Test];

    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Split {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            other => Err(format!("unknown split `{other}`")),
        }
    }
}

/// One manifest row. `split` is `None` only before splitting.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Record {
    pub id: String,
    /// Relative to the manifest's directory.
    pub path: PathBuf,
    pub class_name: String,
    pub split: Option<Split>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DatasetManifest {
    pub records: Vec<Record>,
    pub class_names: Vec<String>,
    /// Directory relative paths resolve against.
    pub root: PathBuf,
}

const HEADER: &str = "id\tpath\tclass\tsplit";

impl DatasetManifest {
    /// Checks id uniqueness and class membership. With `require_split`,
    /// every record must carry a split.
    pub fn new(records: Vec<Record>, class_names: Vec<String>, root: PathBuf, require_split: bool) -> Result<Self> {
        let mut ids = HashSet::new();
        for r in &records {
            if !ids.insert(r.id.as_str()) {
                return Err(DatasetError::Manifest(format!("duplicate id `{}`", r.id)));
            }
            if !class_names.contains(&r.class_name) {
                return Err(DatasetError::Manifest(format!(
                    "record `{}` has unknown class `{}`",
                    r.id, r.class_name
                )));
            }
            if require_split && r.split.is_none() {
                return Err(DatasetError::Manifest(format!("record `{}` has no split", r.id)));
            }
        }
        Ok(Self {
            records,
            class_names,
            root,
        })
    }

    /// Reads a manifest TSV. Class order is first appearance unless a
    /// `# classes:` comment line lists it explicitly.
    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(io_err(path))?;
        let parse_err = |line: usize, reason: String| DatasetError::Parse {
            path: path.to_path_buf(),
            line,
            reason,
        };
        let mut lines = text.lines().enumerate();
        let mut declared: Option<Vec<String>> = None;
        let mut header_seen = false;
        let mut records = Vec::new();
        for (i, line) in &mut lines {
            if let Some(rest) = line.strip_prefix("# classes:") {
                declared = Some(rest.split('\t').map(str::trim).filter(|s| !s.is_empty()).map(String::from).collect());
                continue;
            }
            if !header_seen {
                if line != HEADER {
                    return Err(parse_err(i + 1, format!("expected header `{HEADER}`")));
                }
                header_seen = true;
                continue;
            }
            if line.is_empty() {
                continue;
            }
            let cols: Vec<&str> = line.split('\t').collect();
            if cols.len() != 4 {
                return Err(parse_err(i + 1, format!("expected 4 columns, found {}", cols.len())));
            }
            let split = match cols[3] {
                "" | "-" => None,
                s => Some(s.parse::<Split>().map_err(|e| parse_err(i + 1, e))?),
            };
            records.push(Record {
                id: cols[0].to_string(),
                path: PathBuf::from(cols[1]),
                class_name: cols[2].to_string(),
                split,
            });
        }
        if !header_seen {
            return Err(parse_err(1, "missing header".into()));
        }
        let class_names = declared.unwrap_or_else(|| {
            let mut seen = Vec::<String>::new();
            for r in &records {
                if !seen.contains(&r.class_name) {
                    seen.push(r.class_name.clone());
                }
            }
            seen
        });
        let root = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Self::new(records, class_names, root, false)
    }

    pub fn to_tsv(&self) -> String {
        let mut out = format!("# classes:\t{}\n{HEADER}\n", self.class_names.join("\t"));
        for r in &self.records {
            out.push_str(&format!(
                "{}\t{}\t{}\t{}\n",
                r.id,
                r.path.to_string_lossy(),
                r.class_name,
                r.split.map_or("-", Split::as_str)
            ));
        }
        out
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent() {
            if !dir.as_os_str().is_empty() {
                std::fs::create_dir_all(dir).map_err(io_err(dir))?;
            }
        }
        std::fs::write(path, self.to_tsv()).map_err(io_err(path))
    }

    pub fn class_index(&self, name: &str) -> Option<usize> {
        self.class_names.iter().position(|c| c == name)
    }

    pub fn in_split(&self, split: Split) -> impl Iterator<Item = &Record> {
        self.records.iter().filter(move |r| r.split == Some(split))
    }

    pub fn resolve(&self, record: &Record) -> PathBuf {
        self.root.join(&record.path)
    }

    /// Per-channel pixel mean of `split`, on the [0,1] scale.
    pub fn mean_rgb(&self, split: Split) -> Result<Vec<f32>> {
        let images = self
            .in_split(split)
            .map(|r| load_rgb(&self.resolve(r)))
            .collect::<Result<Vec<_>>>()?;
        compute_mean_rgb(&images)
    }

    /// Loads and preprocesses every record of `split` (all records when
    /// `None`). Labels index into `class_names`.
    pub fn load(&self, split: Option<Split>, mean_rgb: &[f32]) -> Result<ImageSet> {
        let mut set = ImageSet::default();
        for r in self.records.iter().filter(|r| split.is_none() || r.split == split) {
            let img = load_rgb(&self.resolve(r))?;
            set.ids.push(r.id.clone());
            set.images.push(preprocess(&img, mean_rgb)?);
            set.labels.push(self.class_index(&r.class_name).expect("validated class"));
        }
        Ok(set)
    }
}

/// Preprocessed images with their class indices.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ImageSet {
    pub ids: Vec<String>,
    pub images: Vec<Tensor>,
    pub labels: Vec<usize>,
}

impl ImageSet {
    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }
}
