//! Versioned text checkpoints.
//!
//! Format:
//!
//! ```text
//! ernn-ckpt v1
//! <cell_kind> <n> <d> <T> <K> <C> <activation>
//! U <n> <n>
//! ... one line of space-separated floats per row ...
//! V <n> <n>
//! W <n> <d>
//! b <n>
//! eta <T> <K>
//! cw <C> <n>
//! cb <C>
//! ```
//!
//! Floats are printed with 17 significant digits (`{:.16e}`), which
//! round-trips every finite f64 exactly.

use std::collections::VecDeque;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use crate::cells::{Activation, CellKind, ErnnParams};
use crate::error::{Error, Result};
use crate::linalg::{DenseMatrix, DenseVector};

pub const CHECKPOINT_HEADER: &str = "ernn-ckpt v1";

/// 17-significant-digit float formatting shared by the checkpoint and
/// dataset writers.
pub(crate) fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}

fn write_row(w: &mut impl Write, row: &[f64]) -> std::io::Result<()> {
    let mut first = true;
    for v in row {
        if !first {
            w.write_all(b" ")?;
        }
        w.write_all(fmt_f64(*v).as_bytes())?;
        first = false;
    }
    w.write_all(b"\n")
}

fn write_matrix(w: &mut impl Write, label: &str, m: &DenseMatrix) -> std::io::Result<()> {
    writeln!(w, "{} {} {}", label, m.rows(), m.cols())?;
    for i in 0..m.rows() {
        write_row(w, m.row(i))?;
    }
    Ok(())
}

fn write_vector(w: &mut impl Write, label: &str, v: &DenseVector) -> std::io::Result<()> {
    writeln!(w, "{} {}", label, v.len())?;
    write_row(w, v)
}

pub fn save_checkpoint(params: &ErnnParams, w: &mut impl Write) -> Result<()> {
    writeln!(w, "{CHECKPOINT_HEADER}")?;
    writeln!(
        w,
        "{} {} {} {} {} {} {}",
        params.cell_kind.name(),
        params.hidden_dim(),
        params.input_dim(),
        params.seq_len(),
        params.inner_steps(),
        params.class_count(),
        params.activation.name()
    )?;
    write_matrix(w, "U", &params.u)?;
    write_matrix(w, "V", &params.v)?;
    write_matrix(w, "W", &params.w)?;
    write_vector(w, "b", &params.b)?;
    write_matrix(w, "eta", &params.eta)?;
    write_matrix(w, "cw", &params.classifier_weights)?;
    write_vector(w, "cb", &params.classifier_bias)?;
    Ok(())
}

pub fn save_checkpoint_file(params: &ErnnParams, path: &Path) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    save_checkpoint(params, &mut w)?;
    w.flush()?;
    Ok(())
}

struct LineReader<R> {
    inner: R,
    line_no: usize,
}

impl<R: BufRead> LineReader<R> {
    fn next_line(&mut self) -> Result<String> {
        let mut buf = String::new();
        let n = self.inner.read_line(&mut buf)?;
        if n == 0 {
            return Err(Error::Format {
                line: self.line_no + 1,
                message: "unexpected end of file".into(),
            });
        }
        self.line_no += 1;
        Ok(buf.trim_end_matches(['\n', '\r']).to_string())
    }

    fn fail<T>(&self, message: impl Into<String>) -> Result<T> {
        Err(Error::Format {
            line: self.line_no,
            message: message.into(),
        })
    }
}

fn parse_floats(r: &LineReader<impl BufRead>, line: &str, expect: usize) -> Result<Vec<f64>> {
    let mut out = Vec::with_capacity(expect);
    for tok in line.split_whitespace() {
        let v: f64 = tok
            .parse()
            .map_err(|_| Error::Format {
                line: r.line_no,
                message: format!("invalid float {tok:?}"),
            })?;
        if !v.is_finite() {
            return Err(Error::Format {
                line: r.line_no,
                message: format!("non-finite value {tok:?}"),
            });
        }
        out.push(v);
    }
    if out.len() != expect {
        return Err(Error::Format {
            line: r.line_no,
            message: format!("expected {} values, found {}", expect, out.len()),
        });
    }
    Ok(out)
}

fn read_matrix(
    r: &mut LineReader<impl BufRead>,
    label: &str,
    rows: usize,
    cols: usize,
) -> Result<DenseMatrix> {
    let header = r.next_line()?;
    let parts: Vec<&str> = header.split_whitespace().collect();
    if parts.len() != 3 || parts[0] != label {
        return r.fail(format!("expected block '{label} {rows} {cols}', found {header:?}"));
    }
    let (pr, pc): (usize, usize) = match (parts[1].parse(), parts[2].parse()) {
        (Ok(a), Ok(b)) => (a, b),
        _ => return r.fail("invalid block dimensions"),
    };
    if (pr, pc) != (rows, cols) {
        return r.fail(format!(
            "block {label} has dims {pr}x{pc}, expected {rows}x{cols}"
        ));
    }
    let mut data = Vec::with_capacity(rows * cols);
    for _ in 0..rows {
        let line = r.next_line()?;
        data.extend(parse_floats(r, &line, cols)?);
    }
    DenseMatrix::from_vec(rows, cols, data)
}

fn read_vector(r: &mut LineReader<impl BufRead>, label: &str, len: usize) -> Result<DenseVector> {
    let header = r.next_line()?;
    let parts: Vec<&str> = header.split_whitespace().collect();
    if parts.len() != 2 || parts[0] != label {
        return r.fail(format!("expected block '{label} {len}', found {header:?}"));
    }
    if parts[1].parse::<usize>() != Ok(len) {
        return r.fail(format!("block {label} has wrong length, expected {len}"));
    }
    let line = r.next_line()?;
    DenseVector::from_vec(parse_floats(r, &line, len)?)
}

pub fn load_checkpoint(reader: impl BufRead) -> Result<ErnnParams> {
    let mut r = LineReader {
        inner: reader,
        line_no: 0,
    };
    let header = r.next_line()?;
    if header != CHECKPOINT_HEADER {
        return r.fail(format!(
            "unknown checkpoint header {header:?}, expected {CHECKPOINT_HEADER:?}"
        ));
    }
    let meta = r.next_line()?;
    let parts: Vec<&str> = meta.split_whitespace().collect();
    if parts.len() != 7 {
        return r.fail("metadata line must be: cell_kind n d T K C activation");
    }
    let cell_kind = match CellKind::parse(parts[0]) {
        Some(k) => k,
        None => return r.fail(format!("unknown cell kind {:?}", parts[0])),
    };
    let dims: Vec<usize> = parts[1..6]
        .iter()
        .map(|p| p.parse::<usize>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|_| Error::Format {
            line: r.line_no,
            message: "invalid model dimensions".into(),
        })?;
    let (n, d, t_len, k_steps, classes) = (dims[0], dims[1], dims[2], dims[3], dims[4]);
    if [n, d, t_len, k_steps, classes].contains(&0) {
        return r.fail("model dimensions must be positive");
    }
    let activation = match Activation::parse(parts[6]) {
        Some(a) => a,
        None => return r.fail(format!("unknown activation {:?}", parts[6])),
    };

    let u = read_matrix(&mut r, "U", n, n)?;
    let v = read_matrix(&mut r, "V", n, n)?;
    let w = read_matrix(&mut r, "W", n, d)?;
    let b = read_vector(&mut r, "b", n)?;
    let eta = read_matrix(&mut r, "eta", t_len, k_steps)?;
    let cw = read_matrix(&mut r, "cw", classes, n)?;
    let cb = read_vector(&mut r, "cb", classes)?;

    let params = ErnnParams {
        cell_kind,
        activation,
        u,
        v,
        w,
        b,
        eta,
        classifier_weights: cw,
        classifier_bias: cb,
    };
    params.validate().map_err(|e| Error::Format {
        line: r.line_no,
        message: format!("invalid checkpoint contents: {e}"),
    })?;
    Ok(params)
}

pub fn load_checkpoint_file(path: &Path) -> Result<ErnnParams> {
    load_checkpoint(BufReader::new(File::open(path)?))
}

/// Per-epoch snapshot store with a bounded in-memory window.
///
/// Snapshots beyond `cap` spill oldest-first to checkpoint files in a
/// temporary directory that lives as long as the store; `get` loads
/// spilled entries back transparently, so the parameter-trajectory
/// diagnostic can walk the full history regardless of epoch count.
pub struct CheckpointStore {
    cap: usize,
    spilled: usize,
    spill_dir: Option<tempfile::TempDir>,
    mem: VecDeque<ErnnParams>,
}

impl CheckpointStore {
    pub fn new(cap: usize) -> Self {
        CheckpointStore {
            cap: cap.max(1),
            spilled: 0,
            spill_dir: None,
            mem: VecDeque::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.spilled + self.mem.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn spill_path(&self, index: usize) -> std::path::PathBuf {
        self.spill_dir
            .as_ref()
            .expect("spill dir exists when entries are spilled")
            .path()
            .join(format!("epoch_{index:06}.ckpt"))
    }

    pub fn push(&mut self, params: ErnnParams) -> Result<()> {
        self.mem.push_back(params);
        if self.mem.len() > self.cap {
            if self.spill_dir.is_none() {
                self.spill_dir = Some(tempfile::tempdir()?);
            }
            let oldest = self.mem.pop_front().expect("non-empty");
            let path = self.spill_path(self.spilled);
            save_checkpoint_file(&oldest, &path)?;
            self.spilled += 1;
        }
        Ok(())
    }

    /// Snapshot after epoch `index` (0-based insertion order).
    pub fn get(&self, index: usize) -> Result<ErnnParams> {
        if index < self.spilled {
            load_checkpoint_file(&self.spill_path(index))
        } else {
            self.mem
                .get(index - self.spilled)
                .cloned()
                .ok_or_else(|| Error::InvalidArgument(format!("checkpoint index {index} out of range")))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cells::ModelConfig;
    use proptest::prelude::*;

    fn sample_params(seed: u64, cell: CellKind) -> ErnnParams {
        let mut cfg = ModelConfig::new(cell, 4, 3, 5);
        cfg.inner_steps = match cell {
            CellKind::FastRnn | CellKind::VanillaRnn => 1,
            _ => 2,
        };
        cfg.class_count = 3;
        cfg.seed = seed;
        ErnnParams::init(&cfg).unwrap()
    }

    #[test]
    fn round_trip_is_exact() {
        for cell in [
            CellKind::VanillaRnn,
            CellKind::ErnnToy,
            CellKind::ErnnExemplar,
            CellKind::FastRnn,
        ] {
            let p = sample_params(21, cell);
            let mut buf = Vec::new();
            save_checkpoint(&p, &mut buf).unwrap();
            let q = load_checkpoint(buf.as_slice()).unwrap();
            assert_eq!(p, q);
        }
    }

    #[test]
    fn rejects_bad_header() {
        let err = load_checkpoint("ernn-ckpt v9\n".as_bytes()).unwrap_err();
        match err {
            Error::Format { line, .. } => assert_eq!(line, 1),
            other => panic!("expected Format, got {other}"),
        }
    }

    #[test]
    fn rejects_truncated_block() {
        let p = sample_params(3, CellKind::ErnnExemplar);
        let mut buf = Vec::new();
        save_checkpoint(&p, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let truncated: String = text.lines().take(5).map(|l| format!("{l}\n")).collect();
        assert!(matches!(
            load_checkpoint(truncated.as_bytes()),
            Err(Error::Format { .. })
        ));
    }

    #[test]
    fn rejects_fastrnn_with_nonzero_u() {
        let p = sample_params(3, CellKind::FastRnn);
        let mut buf = Vec::new();
        save_checkpoint(&p, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        // Corrupt one U entry; the frozen-U contract must reject the file.
        let mut lines: Vec<String> = text.lines().map(String::from).collect();
        lines[3] = lines[3].replacen("0.0000000000000000e0", "1.0000000000000000e0", 1);
        let garbled = lines.join("\n") + "\n";
        assert!(matches!(
            load_checkpoint(garbled.as_bytes()),
            Err(Error::Format { .. })
        ));
    }

    #[test]
    fn store_spills_and_reloads_in_order() {
        let mut store = CheckpointStore::new(3);
        let mut expected = Vec::new();
        for e in 0..10u64 {
            let p = sample_params(e, CellKind::ErnnToy);
            expected.push(p.clone());
            store.push(p).unwrap();
        }
        assert_eq!(store.len(), 10);
        for (i, want) in expected.iter().enumerate() {
            assert_eq!(&store.get(i).unwrap(), want, "index {i}");
        }
        assert!(store.get(10).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(16))]
        #[test]
        fn random_params_round_trip(seed in 0u64..1000) {
            let mut p = sample_params(seed, CellKind::ErnnExemplar);
            // Perturb with awkward magnitudes to stress the formatter.
            let mut rng = crate::rng::Xoshiro256::seed_from(seed ^ 0xFFFF);
            for id in crate::cells::ALL_TENSORS {
                for v in p.tensor_mut(id) {
                    *v = rng.next_gaussian() * 10f64.powi((rng.next_below(13) as i32) - 6);
                }
            }
            let mut buf = Vec::new();
            save_checkpoint(&p, &mut buf).unwrap();
            let q = load_checkpoint(buf.as_slice()).unwrap();
            prop_assert_eq!(p, q);
        }
    }
}
