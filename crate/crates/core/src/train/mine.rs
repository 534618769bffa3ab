use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::audio::Label;
use crate::error::{Error, Result};
use crate::mil::{topk_by_magnitude, FeatureBag};
use crate::model::AnomalyHead;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Origin {
    #[serde(rename = "positive-bag")]
    PositiveBag,
    #[serde(rename = "negative-bag")]
    NegativeBag,
}

impl Origin {
    pub fn as_str(self) -> &'static str {
        match self {
            Origin::PositiveBag => "positive-bag",
            Origin::NegativeBag => "negative-bag",
        }
    }
}

impl fmt::Display for Origin {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Origin {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "positive-bag" => Ok(Origin::PositiveBag),
            "negative-bag" => Ok(Origin::NegativeBag),
            other => Err(Error::Validation(format!("unknown origin '{other}'"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MinedRecord {
    pub source: String,
    pub frame_index: usize,
    pub frame_start_s: f64,
    pub score: f64,
    pub label: Label,
    pub origin: Origin,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct MinedDataset {
    pub records: Vec<MinedRecord>,
}

impl MinedDataset {
    pub fn for_source<'a>(&'a self, source: &'a str) -> impl Iterator<Item = &'a MinedRecord> + 'a {
        self.records.iter().filter(move |r| r.source == source)
    }
}

/// Scores every frame of every file with the head and keeps the `t`
/// highest-scoring frames per file, highest first (lower frame index on
/// ties). Frames inherit their file's label.
pub fn mine_topt(
    head: &AnomalyHead,
    files: &[FeatureBag],
    t: usize,
    hop_s: f64,
) -> Result<MinedDataset> {
    if t == 0 {
        return Err(Error::Config("t must be >= 1".into()));
    }
    let mut records = Vec::new();
    for f in files {
        let scores = head.forward(f.features())?.scores;
        let keep = if scores.len() < t {
            log::warn!(
                "{}: only {} frames, keeping all (t = {t})",
                f.source(),
                scores.len()
            );
            scores.len()
        } else {
            t
        };
        let origin = if f.is_abnormal() {
            Origin::PositiveBag
        } else {
            Origin::NegativeBag
        };
        for i in topk_by_magnitude(&scores, keep)? {
            records.push(MinedRecord {
                source: f.source().to_string(),
                frame_index: i,
                frame_start_s: i as f64 * hop_s,
                score: scores[i] as f64,
                label: f.label(),
                origin,
            });
        }
    }
    Ok(MinedDataset { records })
}

#[derive(Serialize, Deserialize)]
struct Row {
    source: String,
    frame_start_s: f64,
    score: f64,
    label: String,
    origin: Origin,
}

pub fn write_mined_csv(path: &Path, data: &MinedDataset) -> Result<()> {
    let mut text = String::from("source,frame_start_s,score,label,origin\n");
    for r in &data.records {
        text.push_str(&format!(
            "{},{:.3},{},{},{}\n",
            r.source, r.frame_start_s, r.score, r.label, r.origin
        ));
    }
    std::fs::write(path, text).map_err(|e| Error::io(format!("writing {}", path.display()), e))
}

/// Reads a mined CSV; frame indices are recovered with `hop_s`.
pub fn read_mined_csv(path: &Path, hop_s: f64) -> Result<MinedDataset> {
    let mut r = csv::Reader::from_path(path)
        .map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
    let mut records = Vec::new();
    for row in r.deserialize::<Row>() {
        let row = row.map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: e.position().map_or(0, |p| p.line()),
            msg: e.to_string(),
        })?;
        let label = row.label.parse().map_err(Error::Validation)?;
        records.push(MinedRecord {
            source: row.source,
            frame_index: (row.frame_start_s / hop_s).round() as usize,
            frame_start_s: row.frame_start_s,
            score: row.score,
            label,
            origin: row.origin,
        });
    }
    Ok(MinedDataset { records })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffcore::Tensor;

    /// A head whose score is sigmoid(feature[0]) once hidden layers pass
    /// the first input through unchanged.
    fn passthrough_head() -> AnomalyHead {
        let mut h = AnomalyHead::new(1, 0).unwrap();
        for (name, t) in h.params_mut().iter_mut() {
            t.data_mut().fill(0.0);
            match name {
                "head.fc1.weight" | "head.fc2.weight" | "head.score.weight" => {
                    t.data_mut()[0] = 1.0
                }
                _ => {}
            }
        }
        h
    }

    fn file(scores: &[f32], label: Label, name: &str) -> FeatureBag {
        // logit values chosen so sigmoid ordering equals the input ordering
        let x: Vec<f32> = scores.iter().map(|p| (p / (1.0 - p)).ln()).collect();
        FeatureBag::new(Tensor::new(&[x.len(), 1], x).unwrap(), label, name).unwrap()
    }

    #[test]
    fn keeps_top_two_in_score_order() {
        let h = passthrough_head();
        let m = mine_topt(&h, &[file(&[0.6, 0.9, 0.8], Label::Cry, "a")], 2, 1.0).unwrap();
        let idx: Vec<usize> = m.records.iter().map(|r| r.frame_index).collect();
        assert_eq!(idx, vec![1, 2]);
        assert!(m.records[0].score > m.records[1].score);
        assert!(m
            .records
            .iter()
            .all(|r| r.origin == Origin::PositiveBag && r.label == Label::Cry));
    }

    #[test]
    fn ties_and_short_files() {
        let h = passthrough_head();
        let m = mine_topt(
            &h,
            &[
                file(&[0.7; 4], Label::Other, "b"),
                file(&[0.7], Label::Cry, "c"),
            ],
            2,
            1.0,
        )
        .unwrap();
        let b: Vec<usize> = m.for_source("b").map(|r| r.frame_index).collect();
        assert_eq!(b, vec![0, 1]);
        assert_eq!(m.for_source("c").count(), 1);
        assert_eq!(
            m.for_source("b").next().unwrap().origin,
            Origin::NegativeBag
        );
    }

    #[test]
    fn csv_round_trip() {
        let tmp = tempfile::tempdir().unwrap();
        let p = tmp.path().join("m.csv");
        let h = passthrough_head();
        let m = mine_topt(&h, &[file(&[0.2, 0.9, 0.4, 0.8], Label::Cry, "a")], 2, 1.0).unwrap();
        write_mined_csv(&p, &m).unwrap();
        let text = std::fs::read_to_string(&p).unwrap();
        assert!(text.starts_with("source,frame_start_s,score,label,origin\na,1.000,"));
        assert_eq!(read_mined_csv(&p, 1.0).unwrap(), m);
    }

    proptest::proptest! {
        #[test]
        fn keeps_min_of_t_and_frame_count(
            lens in proptest::collection::vec(1usize..12, 1..6), t in 1usize..8, seed in 0u64..50
        ) {
            let head = AnomalyHead::new(3, seed).unwrap();
            let files: Vec<FeatureBag> = lens
                .iter()
                .enumerate()
                .map(|(i, &n)| {
                    let x = Tensor::from_fn(&[n, 3], |j| ((j * 7 + i * 3) % 11) as f32 / 5.0 - 1.0);
                    let label = if i % 2 == 0 { Label::Cry } else { Label::Other };
                    FeatureBag::new(x, label, format!("f{i}")).unwrap()
                })
                .collect();
            let m = mine_topt(&head, &files, t, 1.0).unwrap();
            for (i, &n) in lens.iter().enumerate() {
                proptest::prop_assert_eq!(m.for_source(&format!("f{i}")).count(), n.min(t));
            }
            proptest::prop_assert_eq!(m.records.len(), lens.iter().map(|&n| n.min(t)).sum::<usize>());
        }
    }
}
