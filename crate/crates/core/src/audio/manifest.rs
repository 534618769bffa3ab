use std::collections::HashSet;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Label {
    Cry,
    Other,
}

impl Label {
    pub fn as_str(self) -> &'static str {
        match self {
            Label::Cry => "cry",
            Label::Other => "other",
        }
    }

    pub fn is_cry(self) -> bool {
        self == Label::Cry
    }

    /// 1 for cry (abnormal / positive), 0 otherwise.
    pub fn as_target(self) -> u8 {
        self.is_cry() as u8
    }

    pub fn from_target(y: u8) -> Self {
        if y != 0 {
            Label::Cry
        } else {
            Label::Other
        }
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Label {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "cry" => Ok(Label::Cry),
            "other" => Ok(Label::Other),
            _ => Err(format!("unknown label {s:?} (expected cry or other)")),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
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
            _ => Err(format!("unknown split {s:?} (expected train, val or test)")),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ManifestEntry {
    pub path: PathBuf,
    pub label: Label,
    pub split: Split,
}

#[derive(Clone, Debug, PartialEq, Eq, Default)]
pub struct DatasetManifest {
    pub entries: Vec<ManifestEntry>,
}

impl DatasetManifest {
    pub fn new(entries: Vec<ManifestEntry>) -> Result<Self> {
        let mut seen = HashSet::new();
        for e in &entries {
            if !seen.insert(&e.path) {
                return Err(Error::Validation(format!(
                    "duplicate path {}",
                    e.path.display()
                )));
            }
        }
        Ok(DatasetManifest { entries })
    }

    pub fn split(&self, split: Split) -> impl Iterator<Item = &ManifestEntry> {
        self.entries.iter().filter(move |e| e.split == split)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Training needs non-empty train and val splits.
    pub fn require_splits(&self, splits: &[Split]) -> Result<()> {
        for s in splits {
            if self.split(*s).next().is_none() {
                return Err(Error::Validation(format!("split {s} is empty")));
            }
        }
        Ok(())
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("path,label,split\n");
        for e in &self.entries {
            s.push_str(&format!("{},{},{}\n", e.path.display(), e.label, e.split));
        }
        s
    }
}

/// Parses a `path,label,split` CSV. Relative paths are resolved against the
/// manifest's directory.
pub fn load_manifest(path: &Path) -> Result<DatasetManifest> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
    let base = path.parent().unwrap_or(Path::new(""));
    parse_manifest(&text, path, base)
}

pub fn parse_manifest(text: &str, origin: &Path, base: &Path) -> Result<DatasetManifest> {
    let parse_err = |line: u64, msg: String| Error::Parse {
        path: origin.to_path_buf(),
        line,
        msg,
    };
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_reader(text.as_bytes());
    let headers = rdr
        .headers()
        .map_err(|e| parse_err(1, e.to_string()))?
        .clone();
    let names: Vec<&str> = headers.iter().map(str::trim).collect();
    if names != ["path", "label", "split"] {
        return Err(parse_err(
            1,
            format!("expected header path,label,split, got {}", names.join(",")),
        ));
    }
    let mut entries = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line());
            parse_err(line, e.to_string())
        })?;
        let line = rec.position().map_or(0, |p| p.line());
        let field = |i: usize| rec.get(i).unwrap_or("").trim();
        if field(0).is_empty() {
            return Err(parse_err(line, "empty path".into()));
        }
        let label = field(1).parse::<Label>().map_err(|m| parse_err(line, m))?;
        let split = field(2).parse::<Split>().map_err(|m| parse_err(line, m))?;
        let p = PathBuf::from(field(0));
        let path = if p.is_relative() { base.join(p) } else { p };
        entries.push(ManifestEntry { path, label, split });
    }
    DatasetManifest::new(entries)
}
