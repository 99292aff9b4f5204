//! Synthetic and bundled datasets. Every generator is a pure function of its
//! arguments and seed.

use std::collections::HashSet;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::Inputs;
use crate::rng::RngStream;
use crate::tensor::Tensor;

/// Component means of the 2-D Gaussian mixture.
pub const MIXTURE_MEANS: [[f64; 2]; 3] = [[0.0, 0.0], [3.0, 3.0], [-3.0, 3.0]];
/// Isotropic standard deviation of each component.
pub const MIXTURE_STDS: [f64; 3] = [0.5, 1.0, 1.5];

const DIGITS_CSV: &str = include_str!("../../data/digits.csv");

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DatasetKind {
    GaussianMixture,
    UniqueCount,
    Digits,
}

#[derive(Clone, Debug, PartialEq)]
pub enum DataInputs {
    /// `[n, features]`
    Dense(Tensor),
    Sequences { tokens: Vec<Vec<usize>>, vocab: usize },
}

/// Labelled classification data.
#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticDataset {
    pub kind: DatasetKind,
    pub inputs: DataInputs,
    /// Class indices.
    pub targets: Vec<usize>,
    pub classes: usize,
    pub seed: u64,
}

/// An owned minibatch.
#[derive(Clone, Debug)]
pub struct Batch {
    data: BatchData,
    pub targets: Vec<usize>,
}

#[derive(Clone, Debug)]
enum BatchData {
    Dense(Tensor),
    Tokens(Vec<Vec<usize>>),
}

impl Batch {
    pub fn inputs(&self) -> Inputs<'_> {
        match &self.data {
            BatchData::Dense(t) => Inputs::Dense(t),
            BatchData::Tokens(t) => Inputs::Tokens(t),
        }
    }
}

/// Number of distinct values in `seq`.
pub fn count_unique(seq: &[usize]) -> usize {
    seq.iter().collect::<HashSet<_>>().len()
}

impl SyntheticDataset {
    pub fn len(&self) -> usize {
        self.targets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.targets.is_empty()
    }

    pub fn batch(&self, idx: &[usize]) -> Batch {
        let data = match &self.inputs {
            DataInputs::Dense(t) => BatchData::Dense(t.select_rows(idx)),
            DataInputs::Sequences { tokens, .. } => {
                BatchData::Tokens(idx.iter().map(|&i| tokens[i].clone()).collect())
            }
        };
        Batch {
            data,
            targets: idx.iter().map(|&i| self.targets[i]).collect(),
        }
    }

    /// Copy with every sequence cut to at most `max_len` tokens. Unique-count
    /// targets are recomputed for the shorter sequences; dense data is
    /// returned unchanged.
    pub fn truncated(&self, max_len: usize) -> Self {
        let DataInputs::Sequences { tokens, vocab } = &self.inputs else {
            return self.clone();
        };
        let tokens: Vec<Vec<usize>> = tokens
            .iter()
            .map(|s| s[..s.len().min(max_len)].to_vec())
            .collect();
        let targets = match self.kind {
            DatasetKind::UniqueCount => tokens.iter().map(|s| count_unique(s) - 1).collect(),
            _ => self.targets.clone(),
        };
        Self {
            inputs: DataInputs::Sequences {
                tokens,
                vocab: *vocab,
            },
            targets,
            ..self.clone()
        }
    }

    /// Comma-separated dump: `label,f0,f1,...` for dense data and
    /// `label,t0,t1,...` for sequences.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut out = Vec::new();
        let width = match &self.inputs {
            DataInputs::Dense(t) => t.last_dim(),
            DataInputs::Sequences { tokens, .. } => tokens.iter().map(Vec::len).max().unwrap_or(0),
        };
        let prefix = if matches!(self.inputs, DataInputs::Dense(_)) { "x" } else { "t" };
        let header: Vec<String> = std::iter::once("label".to_string())
            .chain((0..width).map(|i| format!("{prefix}{i}")))
            .collect();
        writeln!(out, "{}", header.join(",")).expect("write to Vec");
        for i in 0..self.len() {
            let fields: Vec<String> = match &self.inputs {
                DataInputs::Dense(t) => t.row(i).iter().map(|v| v.to_string()).collect(),
                DataInputs::Sequences { tokens, .. } => tokens[i].iter().map(usize::to_string).collect(),
            };
            writeln!(out, "{},{}", self.targets[i], fields.join(",")).expect("write to Vec");
        }
        std::fs::write(path, out).map_err(|e| Error::io(path, e))
    }
}

/// `n_per_class` samples from each of three isotropic Gaussians, labelled by
/// component. Dimensions past the second have zero mean.
pub fn gen_gaussian_mixture(seed: u64, n_per_class: usize, dim: usize) -> Result<SyntheticDataset> {
    if n_per_class == 0 || dim < 2 {
        return Err(Error::InvalidArgument(format!(
            "gaussian mixture needs n >= 1 and dim >= 2, got n={n_per_class} dim={dim}"
        )));
    }
    let mut rng = RngStream::new(seed);
    let mut data = Vec::with_capacity(3 * n_per_class * dim);
    let mut targets = Vec::with_capacity(3 * n_per_class);
    for (class, (mean, std)) in MIXTURE_MEANS.iter().zip(MIXTURE_STDS).enumerate() {
        for _ in 0..n_per_class {
            for d in 0..dim {
                let mu = mean.get(d).copied().unwrap_or(0.0);
                data.push(mu + std * rng.normal());
            }
            targets.push(class);
        }
    }
    Ok(SyntheticDataset {
        kind: DatasetKind::GaussianMixture,
        inputs: DataInputs::Dense(Tensor::matrix(3 * n_per_class, dim, data)?),
        targets,
        classes: 3,
        seed,
    })
}

/// `n` sequences of `length` iid uniform tokens from `0..values`; the class is
/// the number of distinct tokens minus one.
pub fn gen_unique_count(seed: u64, n: usize, length: usize, values: usize) -> Result<SyntheticDataset> {
    if length == 0 || values == 0 || n == 0 {
        return Err(Error::InvalidArgument(format!(
            "unique-count needs n, length and values >= 1, got n={n} length={length} values={values}"
        )));
    }
    let mut rng = RngStream::new(seed);
    let tokens: Vec<Vec<usize>> = (0..n)
        .map(|_| (0..length).map(|_| rng.below(values)).collect())
        .collect();
    let targets = tokens.iter().map(|s| count_unique(s) - 1).collect();
    Ok(SyntheticDataset {
        kind: DatasetKind::UniqueCount,
        inputs: DataInputs::Sequences { tokens, vocab: values },
        targets,
        classes: length.min(values),
        seed,
    })
}

/// The bundled 8x8 handwritten digits (1797 images, pixels scaled to
/// `[0, 1]`), shuffled with `seed` and split into `(train, eval)` with
/// `eval_size` images held out.
pub fn digits(seed: u64, eval_size: usize) -> Result<(SyntheticDataset, SyntheticDataset)> {
    let mut rows: Vec<(usize, Vec<f64>)> = Vec::new();
    for (i, line) in DIGITS_CSV.lines().enumerate().skip(1) {
        let mut fields = line.split(',');
        let parse_err = |m: String| Error::parse(format!("digits line {}", i + 1), m);
        let label = fields
            .next()
            .ok_or_else(|| parse_err("empty".into()))?
            .parse::<usize>()
            .map_err(|e| parse_err(e.to_string()))?;
        let pixels = fields
            .map(|v| v.parse::<f64>().map(|p| p / 16.0).map_err(|e| parse_err(e.to_string())))
            .collect::<Result<Vec<_>>>()?;
        rows.push((label, pixels));
    }
    if eval_size == 0 || eval_size >= rows.len() {
        return Err(Error::InvalidArgument(format!(
            "eval_size must be in 1..{}, got {eval_size}",
            rows.len()
        )));
    }
    let mut rng = RngStream::new(seed);
    rng.shuffle(&mut rows);
    let (eval_rows, train_rows) = rows.split_at(eval_size);
    let build = |part: &[(usize, Vec<f64>)]| -> Result<SyntheticDataset> {
        let data: Vec<f64> = part.iter().flat_map(|(_, p)| p.iter().copied()).collect();
        Ok(SyntheticDataset {
            kind: DatasetKind::Digits,
            inputs: DataInputs::Dense(Tensor::matrix(part.len(), 64, data)?),
            targets: part.iter().map(|(l, _)| *l).collect(),
            classes: 10,
            seed,
        })
    };
    Ok((build(train_rows)?, build(eval_rows)?))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mixture_is_balanced_and_reproducible() {
        let d = gen_gaussian_mixture(4, 100, 2).unwrap();
        assert_eq!(d.len(), 300);
        for c in 0..3 {
            assert_eq!(d.targets.iter().filter(|&&t| t == c).count(), 100);
        }
        assert_eq!(d, gen_gaussian_mixture(4, 100, 2).unwrap());
        assert_ne!(d, gen_gaussian_mixture(5, 100, 2).unwrap());
        assert!(gen_gaussian_mixture(4, 0, 2).is_err());
    }

    #[test]
    fn unique_count_targets() {
        assert_eq!(count_unique(&[3, 3, 3]), 1);
        assert_eq!(count_unique(&[0, 1, 2]), 3);
        let d = gen_unique_count(1, 50, 10, 6).unwrap();
        assert_eq!(d.classes, 6);
        let DataInputs::Sequences { tokens, .. } = &d.inputs else { unreachable!() };
        for (s, &t) in tokens.iter().zip(&d.targets) {
            assert_eq!(s.len(), 10);
            assert!(s.iter().all(|&v| v < 6));
            assert_eq!(t + 1, count_unique(s));
        }
        assert_eq!(d, gen_unique_count(1, 50, 10, 6).unwrap());
    }

    #[test]
    fn truncation_recomputes_targets() {
        let d = gen_unique_count(2, 20, 10, 6).unwrap();
        let t = d.truncated(3);
        let DataInputs::Sequences { tokens, .. } = &t.inputs else { unreachable!() };
        for (s, &c) in tokens.iter().zip(&t.targets) {
            assert_eq!(s.len(), 3);
            assert_eq!(c + 1, count_unique(s));
        }
    }

    #[test]
    fn digits_split() {
        let (train, eval) = digits(0, 297).unwrap();
        assert_eq!(train.len() + eval.len(), 1797);
        assert_eq!(eval.len(), 297);
        let DataInputs::Dense(x) = &train.inputs else { unreachable!() };
        assert_eq!(x.shape()[1], 64);
        assert!(x.data().iter().all(|v| (0.0..=1.0).contains(v)));
        assert!(train.targets.iter().all(|&t| t < 10));
    }
}
