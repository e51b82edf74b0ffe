//! Datasets: the 2-D random-walk generator, CSV ingestion/export,
//! stratified splits, and feature standardization.
//!
//! CSV schema: header `sample_id,t,label,f0,...,f{d-1}`, rows sorted by
//! (sample_id, t), t running 1..=T, label constant within a sample. Floats
//! are written with 17 significant digits so a write/read round trip is
//! exact.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use crate::cells::SequenceView;
use crate::checkpoint::fmt_f64;
use crate::error::{Error, Result};
use crate::rng::Xoshiro256;

/// N labelled sequences of uniform length T with d features per step.
#[derive(Debug, Clone, PartialEq)]
pub struct SequenceDataset {
    features: Vec<f64>, // row-major N x T x d
    labels: Vec<usize>,
    seq_len: usize,
    feature_dim: usize,
    class_count: usize,
}

impl SequenceDataset {
    pub fn new(
        features: Vec<f64>,
        labels: Vec<usize>,
        seq_len: usize,
        feature_dim: usize,
        class_count: usize,
    ) -> Result<Self> {
        if seq_len == 0 || feature_dim == 0 {
            return Err(Error::InvalidArgument(
                "sequence length and feature dim must be positive".into(),
            ));
        }
        if features.len() != labels.len() * seq_len * feature_dim {
            return Err(Error::ShapeMismatch(format!(
                "feature buffer length {} != {} samples x {} x {}",
                features.len(),
                labels.len(),
                seq_len,
                feature_dim
            )));
        }
        if !features.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite("dataset features".into()));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= class_count) {
            return Err(Error::InvalidArgument(format!(
                "label {bad} exceeds class count {class_count}"
            )));
        }
        Ok(SequenceDataset {
            features,
            labels,
            seq_len,
            feature_dim,
            class_count,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn seq_len(&self) -> usize {
        self.seq_len
    }

    pub fn feature_dim(&self) -> usize {
        self.feature_dim
    }

    pub fn class_count(&self) -> usize {
        self.class_count
    }

    pub fn label(&self, i: usize) -> usize {
        self.labels[i]
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn sample(&self, i: usize) -> SequenceView<'_> {
        let stride = self.seq_len * self.feature_dim;
        SequenceView::new(
            &self.features[i * stride..(i + 1) * stride],
            self.seq_len,
            self.feature_dim,
        )
    }

    /// New dataset holding `indices` in the given order.
    pub fn subset(&self, indices: &[usize]) -> SequenceDataset {
        let stride = self.seq_len * self.feature_dim;
        let mut features = Vec::with_capacity(indices.len() * stride);
        let mut labels = Vec::with_capacity(indices.len());
        for &i in indices {
            features.extend_from_slice(&self.features[i * stride..(i + 1) * stride]);
            labels.push(self.labels[i]);
        }
        SequenceDataset {
            features,
            labels,
            seq_len: self.seq_len,
            feature_dim: self.feature_dim,
            class_count: self.class_count,
        }
    }

    /// Per-class sample counts.
    pub fn class_histogram(&self) -> Vec<usize> {
        let mut h = vec![0usize; self.class_count];
        for &l in &self.labels {
            h[l] += 1;
        }
        h
    }
}

/// 2-D random walks with Gaussian steps: X_0 = (0, 0) and
/// X_t = X_{t−1} + σ_c ε with ε ~ N(0, I). Class 0 uses `sigma0`, class 1
/// `sigma1`; the stored features are the positions X_1..X_T. Class-0
/// walks come first, then class-1; both blocks are generated walk by
/// walk, timestep by timestep, x coordinate before y.
pub fn gen_random_walks(
    n_per_class: usize,
    seq_len: usize,
    sigma0: f64,
    sigma1: f64,
    seed: u64,
) -> Result<SequenceDataset> {
    if seq_len == 0 {
        return Err(Error::InvalidArgument("seq_len must be at least 1".into()));
    }
    if !(sigma0 > 0.0 && sigma1 > 0.0) {
        return Err(Error::InvalidArgument("sigmas must be positive".into()));
    }
    if n_per_class == 0 {
        return Err(Error::InvalidArgument("n_per_class must be at least 1".into()));
    }
    let mut rng = Xoshiro256::stream(seed, 0);
    let d = 2usize;
    let mut features = Vec::with_capacity(2 * n_per_class * seq_len * d);
    let mut labels = Vec::with_capacity(2 * n_per_class);
    for (class, sigma) in [(0usize, sigma0), (1usize, sigma1)] {
        for _ in 0..n_per_class {
            let (mut x, mut y) = (0.0f64, 0.0f64);
            for _ in 0..seq_len {
                x += sigma * rng.next_gaussian();
                y += sigma * rng.next_gaussian();
                features.push(x);
                features.push(y);
            }
            labels.push(class);
        }
    }
    SequenceDataset::new(features, labels, seq_len, d, 2)
}

/// Stratified split: per class, a seeded shuffle then the first
/// round(frac · n_c) samples go to the train side. Disjoint and
/// exhaustive; class balance is preserved to ±1.
pub fn split(
    ds: &SequenceDataset,
    train_frac: f64,
    seed: u64,
) -> Result<(SequenceDataset, SequenceDataset)> {
    if !(train_frac > 0.0 && train_frac < 1.0) {
        return Err(Error::InvalidArgument(
            "train_frac must lie strictly between 0 and 1".into(),
        ));
    }
    let mut rng = Xoshiro256::stream(seed, 2);
    let mut train_idx = Vec::new();
    let mut test_idx = Vec::new();
    for class in 0..ds.class_count() {
        let mut members: Vec<usize> = (0..ds.len()).filter(|&i| ds.label(i) == class).collect();
        if members.len() < 2 {
            return Err(Error::InvalidArgument(format!(
                "class {class} has {} samples; need at least 2 to split",
                members.len()
            )));
        }
        rng.shuffle(&mut members);
        let n_train = ((train_frac * members.len() as f64).round() as usize)
            .clamp(1, members.len() - 1);
        train_idx.extend_from_slice(&members[..n_train]);
        test_idx.extend_from_slice(&members[n_train..]);
    }
    Ok((ds.subset(&train_idx), ds.subset(&test_idx)))
}

pub fn write_csv(ds: &SequenceDataset, mut w: impl Write) -> std::io::Result<()> {
    write!(w, "sample_id,t,label")?;
    for f in 0..ds.feature_dim() {
        write!(w, ",f{f}")?;
    }
    writeln!(w)?;
    for i in 0..ds.len() {
        let sample = ds.sample(i);
        for t in 0..ds.seq_len() {
            write!(w, "{},{},{}", i, t + 1, ds.label(i))?;
            for v in sample.step(t) {
                write!(w, ",{}", fmt_f64(*v))?;
            }
            writeln!(w)?;
        }
    }
    Ok(())
}

pub fn write_csv_file(ds: &SequenceDataset, path: &Path) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_csv(ds, &mut w)?;
    w.flush()?;
    Ok(())
}

fn format_err(line: usize, message: impl Into<String>) -> Error {
    Error::Format {
        line,
        message: message.into(),
    }
}

/// Parses the sequence CSV schema. Errors name the offending line (and
/// sample where applicable): ragged lengths, out-of-order rows, label
/// changes within a sample, and non-numeric fields are all rejected.
pub fn load_csv(reader: impl BufRead) -> Result<SequenceDataset> {
    let mut lines = reader.lines();
    let header = lines
        .next()
        .ok_or_else(|| format_err(1, "empty file"))?
        .map_err(Error::Io)?;
    let cols: Vec<&str> = header.trim_end().split(',').collect();
    if cols.len() < 4 || cols[0] != "sample_id" || cols[1] != "t" || cols[2] != "label" {
        return Err(format_err(
            1,
            "header must be sample_id,t,label,f0,...,f{d-1}",
        ));
    }
    let d = cols.len() - 3;
    for (j, col) in cols[3..].iter().enumerate() {
        if *col != format!("f{j}") {
            return Err(format_err(1, format!("feature column {j} must be named f{j}")));
        }
    }

    struct Current {
        id: usize,
        label: usize,
        rows: usize,
    }
    let mut features: Vec<f64> = Vec::new();
    let mut labels: Vec<usize> = Vec::new();
    let mut seq_len: Option<usize> = None;
    let mut current: Option<Current> = None;
    let mut next_id = 0usize;
    let mut line_no = 1usize;

    let finish_sample = |cur: &Current, seq_len: &mut Option<usize>, line_no: usize| {
        match *seq_len {
            None => {
                *seq_len = Some(cur.rows);
                Ok(())
            }
            Some(t) if t == cur.rows => Ok(()),
            Some(t) => Err(format_err(
                line_no,
                format!(
                    "sample {} has {} timesteps, expected {} (ragged sequence lengths)",
                    cur.id, cur.rows, t
                ),
            )),
        }
    };

    for line in lines {
        let line = line.map_err(Error::Io)?;
        line_no += 1;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.trim_end().split(',').collect();
        if fields.len() != 3 + d {
            return Err(format_err(
                line_no,
                format!("expected {} fields, found {}", 3 + d, fields.len()),
            ));
        }
        let id: usize = fields[0]
            .parse()
            .map_err(|_| format_err(line_no, format!("invalid sample_id {:?}", fields[0])))?;
        let t: usize = fields[1]
            .parse()
            .map_err(|_| format_err(line_no, format!("invalid timestep {:?}", fields[1])))?;
        let label: usize = fields[2]
            .parse()
            .map_err(|_| format_err(line_no, format!("unknown label {:?}", fields[2])))?;

        match &mut current {
            Some(cur) if cur.id == id => {
                if label != cur.label {
                    return Err(format_err(
                        line_no,
                        format!("sample {id} changes label from {} to {label}", cur.label),
                    ));
                }
                if t != cur.rows + 1 {
                    return Err(format_err(
                        line_no,
                        format!("sample {id}: timestep {t} out of order (expected {})", cur.rows + 1),
                    ));
                }
                cur.rows += 1;
            }
            _ => {
                if let Some(cur) = current.take() {
                    finish_sample(&cur, &mut seq_len, line_no)?;
                }
                if id != next_id {
                    return Err(format_err(
                        line_no,
                        format!("sample_id {id} out of order (expected {next_id})"),
                    ));
                }
                if t != 1 {
                    return Err(format_err(
                        line_no,
                        format!("sample {id} must start at t = 1, found t = {t}"),
                    ));
                }
                labels.push(label);
                current = Some(Current { id, label, rows: 1 });
                next_id += 1;
            }
        }
        for raw in &fields[3..] {
            let v: f64 = raw
                .parse()
                .map_err(|_| format_err(line_no, format!("non-numeric field {raw:?}")))?;
            if !v.is_finite() {
                return Err(format_err(line_no, format!("non-finite feature {raw:?}")));
            }
            features.push(v);
        }
    }
    let cur = current.ok_or_else(|| format_err(line_no, "no data rows"))?;
    finish_sample(&cur, &mut seq_len, line_no)?;

    let class_count = labels.iter().copied().max().unwrap() + 1;
    SequenceDataset::new(features, labels, seq_len.unwrap(), d, class_count)
}

pub fn load_csv_file(path: &Path) -> Result<SequenceDataset> {
    load_csv(BufReader::new(File::open(path)?))
}

/// Per-feature affine statistics derived from a training split.
#[derive(Debug, Clone)]
pub struct Standardization {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
    /// Features whose training std was ~0 and were left unscaled.
    pub skipped: Vec<usize>,
}

/// Standardizes both splits with statistics from the train split only.
/// Constant features are left unscaled and flagged.
pub fn standardize(
    train: &SequenceDataset,
    test: &SequenceDataset,
) -> Result<(SequenceDataset, SequenceDataset, Standardization)> {
    if train.feature_dim() != test.feature_dim() {
        return Err(Error::ShapeMismatch(
            "train/test feature dimensions differ".into(),
        ));
    }
    let d = train.feature_dim();
    let count = (train.len() * train.seq_len()) as f64;
    if count == 0.0 {
        return Err(Error::InvalidArgument("empty training split".into()));
    }
    let mut mean = vec![0.0; d];
    for chunk in train.features.chunks(d) {
        for (m, v) in mean.iter_mut().zip(chunk) {
            *m += v;
        }
    }
    for m in &mut mean {
        *m /= count;
    }
    let mut var = vec![0.0; d];
    for chunk in train.features.chunks(d) {
        for ((s, v), m) in var.iter_mut().zip(chunk).zip(&mean) {
            *s += (v - m) * (v - m);
        }
    }
    let mut std = vec![0.0; d];
    let mut skipped = Vec::new();
    for j in 0..d {
        let s = (var[j] / count).sqrt();
        if s <= 1e-12 {
            skipped.push(j);
            std[j] = 1.0; // leave the feature unscaled
            mean[j] = 0.0;
        } else {
            std[j] = s;
        }
    }

    let apply = |ds: &SequenceDataset| {
        let mut out = ds.clone();
        for chunk in out.features.chunks_mut(d) {
            for ((v, m), s) in chunk.iter_mut().zip(&mean).zip(&std) {
                *v = (*v - m) / s;
            }
        }
        out
    };
    Ok((
        apply(train),
        apply(test),
        Standardization { mean, std, skipped },
    ))
}
