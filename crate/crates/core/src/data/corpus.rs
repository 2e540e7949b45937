//! Molecule collections with optional scalar labels and a train/val/test
//! split. On disk a corpus is an XYZ file whose comment lines carry
//! `key=value` tokens, e.g. `energy=-3.2 dipole=0.04 split=train`.

use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use thiserror::Error;

use super::xyz::{parse_xyz_frames, write_xyz_frames, XyzError, XyzFrame};
use crate::geometry::Conformation;
use crate::rng::Rng;

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error(transparent)]
    Xyz(#[from] XyzError),
    #[error("corpus I/O on {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("label {name:?} has {found} values for {expected} molecules")]
    LabelCount { name: String, expected: usize, found: usize },
    #[error("corpus has no label {0:?}")]
    MissingLabel(String),
    #[error("frame {frame}: {message}")]
    Comment { frame: usize, message: String },
    #[error("corpus is empty")]
    Empty,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Split {
    Train,
    Val,
    Test,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        })
    }
}

impl FromStr for Split {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            other => Err(format!("unknown split {other:?}")),
        }
    }
}

/// Molecules, named label columns of matching length, and one split tag per
/// molecule.
#[derive(Clone, Debug, PartialEq)]
pub struct Corpus {
    molecules: Vec<Conformation>,
    labels: Vec<(String, Vec<f64>)>,
    splits: Vec<Split>,
}

impl Corpus {
    /// Every molecule starts in the training split.
    pub fn new(molecules: Vec<Conformation>) -> Self {
        let splits = vec![Split::Train; molecules.len()];
        Corpus { molecules, labels: Vec::new(), splits }
    }

    pub fn len(&self) -> usize {
        self.molecules.len()
    }

    pub fn is_empty(&self) -> bool {
        self.molecules.is_empty()
    }

    pub fn molecules(&self) -> &[Conformation] {
        &self.molecules
    }

    pub fn molecule(&self, index: usize) -> &Conformation {
        &self.molecules[index]
    }

    /// Adds or replaces a label column.
    pub fn set_label(&mut self, name: &str, values: Vec<f64>) -> Result<(), CorpusError> {
        if values.len() != self.len() {
            return Err(CorpusError::LabelCount { name: name.into(), expected: self.len(), found: values.len() });
        }
        match self.labels.iter_mut().find(|(n, _)| n == name) {
            Some(slot) => slot.1 = values,
            None => self.labels.push((name.to_string(), values)),
        }
        Ok(())
    }

    pub fn label(&self, name: &str) -> Option<&[f64]> {
        self.labels.iter().find(|(n, _)| n == name).map(|(_, v)| v.as_slice())
    }

    pub fn require_label(&self, name: &str) -> Result<&[f64], CorpusError> {
        self.label(name).ok_or_else(|| CorpusError::MissingLabel(name.to_string()))
    }

    pub fn label_names(&self) -> impl Iterator<Item = &str> {
        self.labels.iter().map(|(n, _)| n.as_str())
    }

    pub fn splits(&self) -> &[Split] {
        &self.splits
    }

    /// Indices in `split`, ascending.
    pub fn indices(&self, split: Split) -> Vec<usize> {
        self.splits.iter().enumerate().filter(|(_, s)| **s == split).map(|(i, _)| i).collect()
    }

    /// Seeded shuffle into `round(train·n)` training and `round(val·n)`
    /// validation molecules; the rest are test.
    pub fn assign_splits(&mut self, seed: u64, train: f64, val: f64) {
        let n = self.len();
        let mut order: Vec<usize> = (0..n).collect();
        Rng::new(seed).shuffle(&mut order);
        let n_train = ((train * n as f64).round() as usize).min(n);
        let n_val = ((val * n as f64).round() as usize).min(n - n_train);
        for (rank, &i) in order.iter().enumerate() {
            self.splits[i] = if rank < n_train {
                Split::Train
            } else if rank < n_train + n_val {
                Split::Val
            } else {
                Split::Test
            };
        }
    }

    /// The molecules at `indices`, with their labels and splits.
    pub fn subset(&self, indices: &[usize]) -> Corpus {
        Corpus {
            molecules: indices.iter().map(|&i| self.molecules[i].clone()).collect(),
            labels: self.labels.iter().map(|(n, v)| (n.clone(), indices.iter().map(|&i| v[i]).collect())).collect(),
            splits: indices.iter().map(|&i| self.splits[i]).collect(),
        }
    }

    pub fn to_xyz(&self) -> String {
        let frames: Vec<XyzFrame> = self
            .molecules
            .iter()
            .enumerate()
            .map(|(i, m)| {
                let mut comment: Vec<String> = self.labels.iter().map(|(n, v)| format!("{n}={:e}", v[i])).collect();
                comment.push(format!("split={}", self.splits[i]));
                XyzFrame { comment: comment.join(" "), conformation: m.clone() }
            })
            .collect();
        write_xyz_frames(&frames)
    }

    /// Parses an XYZ corpus. A label column is kept only when every frame
    /// carries it; frames without a split tag are training molecules.
    pub fn from_xyz(text: &str) -> Result<Self, CorpusError> {
        let frames = parse_xyz_frames(text)?;
        let mut parsed: Vec<Vec<(String, f64)>> = Vec::with_capacity(frames.len());
        let mut splits = Vec::with_capacity(frames.len());
        for (k, f) in frames.iter().enumerate() {
            let mut row = Vec::new();
            let mut split = Split::Train;
            for tok in f.comment.split_whitespace() {
                let Some((key, value)) = tok.split_once('=') else { continue };
                if key == "split" {
                    split = value.parse().map_err(|message| CorpusError::Comment { frame: k, message })?;
                } else if let Ok(x) = value.parse::<f64>() {
                    row.push((key.to_string(), x));
                }
            }
            parsed.push(row);
            splits.push(split);
        }
        let mut corpus = Corpus { molecules: frames.into_iter().map(|f| f.conformation).collect(), labels: Vec::new(), splits };
        if let Some(first) = parsed.first() {
            for (name, _) in first {
                let column: Option<Vec<f64>> =
                    parsed.iter().map(|row| row.iter().find(|(n, _)| n == name).map(|(_, v)| *v)).collect();
                if let Some(values) = column {
                    corpus.set_label(name, values)?;
                }
            }
        }
        Ok(corpus)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, CorpusError> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|source| CorpusError::Io { path: path.display().to_string(), source })?;
        Corpus::from_xyz(&text)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), CorpusError> {
        let path = path.as_ref();
        fs::write(path, self.to_xyz()).map_err(|source| CorpusError::Io { path: path.display().to_string(), source })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn corpus(n: usize) -> Corpus {
        let mols = (0..n).map(|i| Conformation::new(vec![1, 8], vec![[0.0; 3], [1.0 + i as f64, 0.0, 0.0]]).unwrap()).collect();
        Corpus::new(mols)
    }

    #[test]
    fn splits_are_disjoint_and_exhaustive() {
        let mut c = corpus(50);
        c.assign_splits(3, 0.8, 0.1);
        let (tr, va, te) = (c.indices(Split::Train), c.indices(Split::Val), c.indices(Split::Test));
        assert_eq!((tr.len(), va.len(), te.len()), (40, 5, 5));
        let mut all: Vec<usize> = tr.into_iter().chain(va).chain(te).collect();
        all.sort_unstable();
        assert_eq!(all, (0..50).collect::<Vec<_>>());
    }

    #[test]
    fn label_count_is_checked() {
        let mut c = corpus(3);
        assert!(matches!(c.set_label("energy", vec![1.0]), Err(CorpusError::LabelCount { .. })));
        c.set_label("energy", vec![1.0, 2.0, 3.0]).unwrap();
        assert_eq!(c.label("energy"), Some(&[1.0, 2.0, 3.0][..]));
        assert!(c.require_label("dipole").is_err());
    }

    #[test]
    fn xyz_round_trip_keeps_labels_and_splits() {
        let mut c = corpus(10);
        c.set_label("energy", (0..10).map(|i| -0.1 * i as f64).collect()).unwrap();
        c.set_label("dipole", (0..10).map(|i| 0.01 * i as f64).collect()).unwrap();
        c.assign_splits(1, 0.6, 0.2);
        let back = Corpus::from_xyz(&c.to_xyz()).unwrap();
        assert_eq!(back, c);
    }
}
