use std::collections::HashSet;
use std::path::{Path, PathBuf};

use super::FeatureBag;
use crate::audio::{read_cryf, write_cryf, Label};
use crate::error::{Error, Result};

/// Name of the bag metadata table inside a feature directory.
pub const BAG_META_FILE: &str = "bags.csv";

/// One row of `bags.csv`: `source,label,n_frames`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BagMeta {
    pub source: String,
    pub label: Label,
    pub n_frames: usize,
}

/// The CRYF file holding the frames of `source`.
pub fn feature_path(dir: &Path, source: &str) -> PathBuf {
    dir.join(format!("{source}.cryf"))
}

fn check_source(source: &str) -> Result<()> {
    if source.is_empty() || source.contains(['/', '\\']) || source == "." || source == ".." {
        return Err(Error::Validation(format!(
            "invalid bag source id '{source}'"
        )));
    }
    Ok(())
}

pub fn write_bag_meta(path: &Path, rows: &[BagMeta]) -> Result<()> {
    let ctx = || format!("writing {}", path.display());
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_err(e, ctx()))?;
    w.write_record(["source", "label", "n_frames"])
        .map_err(|e| csv_err(e, ctx()))?;
    for r in rows {
        w.write_record([r.source.as_str(), r.label.as_str(), &r.n_frames.to_string()])
            .map_err(|e| csv_err(e, ctx()))?;
    }
    w.flush().map_err(|e| Error::io(ctx(), e))
}

pub fn read_bag_meta(path: &Path) -> Result<Vec<BagMeta>> {
    let mut r = csv::Reader::from_path(path)
        .map_err(|e| csv_err(e, format!("reading {}", path.display())))?;
    let parse = |line: u64, msg: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        msg,
    };
    let headers = r.headers().map_err(|e| parse(1, e.to_string()))?.clone();
    if headers.iter().collect::<Vec<_>>() != ["source", "label", "n_frames"] {
        return Err(parse(1, "expected header source,label,n_frames".into()));
    }
    let mut rows = Vec::new();
    let mut seen = HashSet::new();
    for rec in r.records() {
        let rec = rec.map_err(|e| parse(e.position().map_or(0, |p| p.line()), e.to_string()))?;
        let line = rec.position().map_or(0, |p| p.line());
        let source = rec[0].to_string();
        check_source(&source).map_err(|e| parse(line, e.to_string()))?;
        if !seen.insert(source.clone()) {
            return Err(parse(line, format!("duplicate source '{source}'")));
        }
        let label: Label = rec[1].parse().map_err(|e: String| parse(line, e))?;
        let n_frames: usize = rec[2]
            .parse()
            .map_err(|_| parse(line, format!("bad frame count '{}'", &rec[2])))?;
        rows.push(BagMeta {
            source,
            label,
            n_frames,
        });
    }
    Ok(rows)
}

/// Writes one CRYF per bag plus `bags.csv`.
pub fn write_bag_dir(dir: &Path, bags: &[FeatureBag]) -> Result<()> {
    std::fs::create_dir_all(dir)
        .map_err(|e| Error::io(format!("creating {}", dir.display()), e))?;
    let mut rows = Vec::with_capacity(bags.len());
    for b in bags {
        check_source(b.source())?;
        write_cryf(&feature_path(dir, b.source()), b.features())?;
        rows.push(BagMeta {
            source: b.source().to_string(),
            label: b.label(),
            n_frames: b.segments(),
        });
    }
    write_bag_meta(&dir.join(BAG_META_FILE), &rows)
}

/// Loads every bag listed in `dir/bags.csv`, checking frame counts and a
/// common feature width.
pub fn load_bag_dir(dir: &Path) -> Result<Vec<FeatureBag>> {
    let meta = read_bag_meta(&dir.join(BAG_META_FILE))?;
    let mut bags = Vec::with_capacity(meta.len());
    let mut dim = None;
    for m in meta {
        let path = feature_path(dir, &m.source);
        let features = read_cryf(&path)?;
        if features.shape()[0] != m.n_frames {
            return Err(Error::Validation(format!(
                "{}: {} frames on disk, metadata says {}",
                path.display(),
                features.shape()[0],
                m.n_frames
            )));
        }
        let d = features.shape()[1];
        if *dim.get_or_insert(d) != d {
            return Err(Error::Dimension(format!(
                "{}: feature width {d} differs from {}",
                path.display(),
                dim.unwrap_or(d)
            )));
        }
        bags.push(FeatureBag::new(features, m.label, m.source)?);
    }
    Ok(bags)
}

fn csv_err(e: csv::Error, context: String) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(context, io),
        other => Error::Format(format!("{context}: {other:?}")),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffcore::Tensor;

    #[test]
    fn dir_round_trip() {
        let tmp = tempfile::tempdir().unwrap();
        let bags = vec![
            FeatureBag::new(Tensor::from_fn(&[5, 3], |i| i as f32), Label::Cry, "a").unwrap(),
            FeatureBag::new(Tensor::from_fn(&[2, 3], |i| -(i as f32)), Label::Other, "b").unwrap(),
        ];
        write_bag_dir(tmp.path(), &bags).unwrap();
        let text = std::fs::read_to_string(tmp.path().join(BAG_META_FILE)).unwrap();
        assert_eq!(text, "source,label,n_frames\na,cry,5\nb,other,2\n");
        assert_eq!(load_bag_dir(tmp.path()).unwrap(), bags);
    }

    #[test]
    fn inconsistent_metadata_rejected() {
        let tmp = tempfile::tempdir().unwrap();
        let bags = vec![FeatureBag::new(Tensor::zeros(&[3, 2]), Label::Cry, "a").unwrap()];
        write_bag_dir(tmp.path(), &bags).unwrap();
        let meta = tmp.path().join(BAG_META_FILE);
        std::fs::write(&meta, "source,label,n_frames\na,cry,4\n").unwrap();
        assert!(matches!(
            load_bag_dir(tmp.path()),
            Err(Error::Validation(_))
        ));
        std::fs::write(&meta, "source,label,n_frames\na,maybe,3\n").unwrap();
        assert!(matches!(
            load_bag_dir(tmp.path()),
            Err(Error::Parse { line: 2, .. })
        ));
        std::fs::write(&meta, "source,label,n_frames\n../a,cry,3\n").unwrap();
        assert!(load_bag_dir(tmp.path()).is_err());
    }
}
