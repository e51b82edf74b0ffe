//! Training-dynamics diagnostics: parameter-trajectory distances,
//! per-timestep class discriminability, the learned η table with
//! least-squares trend lines, and contraction-norm statistics of the
//! inner fixed-point step.

use std::io::Write;

use crate::cells::{forward_sequence, CellKind, ErnnParams, ALL_TENSORS};
use crate::checkpoint::CheckpointStore;
use crate::data::SequenceDataset;
use crate::error::{Error, Result};
use crate::linalg::{spectral_norm, DenseMatrix};

fn params_distance(a: &ErnnParams, b: &ErnnParams) -> Result<f64> {
    let mut acc = 0.0;
    for id in ALL_TENSORS {
        let (xa, xb) = (a.tensor(id), b.tensor(id));
        if xa.len() != xb.len() {
            return Err(Error::ShapeMismatch(format!(
                "checkpoint tensor {id:?} changed shape between epochs"
            )));
        }
        acc += xa
            .iter()
            .zip(xb)
            .map(|(p, q)| (p - q) * (p - q))
            .sum::<f64>();
    }
    Ok(acc.sqrt())
}

/// Euclidean distance in full parameter space (all tensors concatenated,
/// η and classifier included) from each checkpoint to the final one. The
/// last entry is exactly 0.
pub fn model_distance_trace(checkpoints: &[ErnnParams]) -> Result<Vec<f64>> {
    if checkpoints.len() < 2 {
        return Err(Error::InvalidArgument(
            "need at least 2 checkpoints for a distance trace".into(),
        ));
    }
    let last = checkpoints.last().unwrap();
    checkpoints.iter().map(|c| params_distance(c, last)).collect()
}

/// Same trace over a (possibly disk-spilled) checkpoint store.
pub fn model_distance_trace_store(store: &CheckpointStore) -> Result<Vec<f64>> {
    if store.len() < 2 {
        return Err(Error::InvalidArgument(
            "need at least 2 checkpoints for a distance trace".into(),
        ));
    }
    let last = store.get(store.len() - 1)?;
    let mut out = Vec::with_capacity(store.len());
    for i in 0..store.len() {
        out.push(params_distance(&store.get(i)?, &last)?);
    }
    Ok(out)
}

/// Per-timestep ratio of intra-class spread to inter-class separation of
/// the hidden states: mean distance to the own-class centroid, averaged
/// over classes, divided by the mean pairwise centroid distance. Lower is
/// more discriminative; the ratio is invariant to a global rescaling of
/// the hidden states.
pub fn discriminability_trace(params: &ErnnParams, ds: &SequenceDataset) -> Result<Vec<f64>> {
    let hist = ds.class_histogram();
    let present: Vec<usize> = (0..ds.class_count()).filter(|&c| hist[c] > 0).collect();
    if present.len() < 2 {
        return Err(Error::InvalidArgument(
            "discriminability needs at least 2 classes present".into(),
        ));
    }
    crate::cells::check_compatible(params, ds.seq_len(), ds.feature_dim(), ds.class_count())?;

    let t_len = ds.seq_len();
    let n = params.hidden_dim();
    // First pass: store every h_t (N x T x n) and accumulate centroids.
    let mut states = vec![0.0f64; ds.len() * t_len * n];
    let mut centroids = vec![vec![0.0f64; n * t_len]; ds.class_count()];
    for i in 0..ds.len() {
        let fwd = forward_sequence(params, &ds.sample(i));
        let class = ds.label(i);
        for t in 0..t_len {
            let h = fwd.tape.state(t);
            let dst = &mut states[(i * t_len + t) * n..(i * t_len + t + 1) * n];
            dst.copy_from_slice(h);
            for (c, v) in centroids[class][t * n..(t + 1) * n].iter_mut().zip(h.iter()) {
                *c += v;
            }
        }
    }
    for (class, cent) in centroids.iter_mut().enumerate() {
        if hist[class] > 0 {
            let inv = 1.0 / hist[class] as f64;
            for v in cent.iter_mut() {
                *v *= inv;
            }
        }
    }

    let mut ratios = Vec::with_capacity(t_len);
    for t in 0..t_len {
        // Intra: mean over classes of the mean distance to the centroid.
        let mut intra = 0.0;
        for &class in &present {
            let cent = &centroids[class][t * n..(t + 1) * n];
            let mut acc = 0.0;
            for i in 0..ds.len() {
                if ds.label(i) != class {
                    continue;
                }
                let h = &states[(i * t_len + t) * n..(i * t_len + t + 1) * n];
                acc += h
                    .iter()
                    .zip(cent)
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum::<f64>()
                    .sqrt();
            }
            intra += acc / hist[class] as f64;
        }
        intra /= present.len() as f64;

        // Inter: mean pairwise centroid distance.
        let mut inter = 0.0;
        let mut pairs = 0usize;
        for (ai, &a) in present.iter().enumerate() {
            for &b in &present[ai + 1..] {
                let ca = &centroids[a][t * n..(t + 1) * n];
                let cb = &centroids[b][t * n..(t + 1) * n];
                inter += ca
                    .iter()
                    .zip(cb)
                    .map(|(x, y)| (x - y) * (x - y))
                    .sum::<f64>()
                    .sqrt();
                pairs += 1;
            }
        }
        inter /= pairs as f64;
        ratios.push(if inter == 0.0 { f64::INFINITY } else { intra / inter });
    }
    Ok(ratios)
}

/// Least-squares line fit of points (x, y).
#[derive(Debug, Clone, Copy)]
pub struct LineFit {
    pub slope: f64,
    pub intercept: f64,
}

pub fn least_squares_line(points: &[(f64, f64)]) -> LineFit {
    let n = points.len() as f64;
    assert!(points.len() >= 2, "least squares needs at least 2 points");
    let sx: f64 = points.iter().map(|p| p.0).sum();
    let sy: f64 = points.iter().map(|p| p.1).sum();
    let sxx: f64 = points.iter().map(|p| p.0 * p.0).sum();
    let sxy: f64 = points.iter().map(|p| p.0 * p.1).sum();
    let denom = n * sxx - sx * sx;
    if denom.abs() < 1e-300 {
        return LineFit {
            slope: 0.0,
            intercept: sy / n,
        };
    }
    let slope = (n * sxy - sx * sy) / denom;
    LineFit {
        slope,
        intercept: (sy - slope * sx) / n,
    }
}

/// Learned η dump plus the per-inner-step trend over timesteps.
#[derive(Debug, Clone)]
pub struct EtaReport {
    /// (t, k, η_t⁽ᵏ⁾) with t and k 1-based for presentation.
    pub rows: Vec<(usize, usize, f64)>,
    /// One least-squares fit of η vs t per inner step k.
    pub fits: Vec<LineFit>,
}

pub fn eta_report(params: &ErnnParams) -> EtaReport {
    let t_len = params.seq_len();
    let k_steps = params.inner_steps();
    let mut rows = Vec::with_capacity(t_len * k_steps);
    let mut fits = Vec::with_capacity(k_steps);
    for k in 0..k_steps {
        let points: Vec<(f64, f64)> = (0..t_len)
            .map(|t| ((t + 1) as f64, params.eta[(t, k)]))
            .collect();
        if points.len() >= 2 {
            fits.push(least_squares_line(&points));
        } else {
            fits.push(LineFit {
                slope: 0.0,
                intercept: points[0].1,
            });
        }
    }
    for t in 0..t_len {
        for k in 0..k_steps {
            rows.push((t + 1, k + 1, params.eta[(t, k)]));
        }
    }
    EtaReport { rows, fits }
}

/// Contraction statistics of I + η_t⁽ᵏ⁾·J at tape points, where J is the
/// Jacobian of the inner residual map σ((I+U)(Vh + Wx + b)) − h (toy cell:
/// tanh(h + c) − h) with respect to the inner iterate h.
#[derive(Debug, Clone, Copy)]
pub struct ContractionRow {
    /// 1-based timestep and inner step.
    pub t: usize,
    pub k: usize,
    pub min: f64,
    pub mean: f64,
    pub max: f64,
    pub frac_lt_1: f64,
}

pub fn contraction_report(
    params: &ErnnParams,
    ds: &SequenceDataset,
    sample_count: usize,
) -> Result<Vec<ContractionRow>> {
    if params.cell_kind == CellKind::VanillaRnn {
        return Err(Error::InvalidArgument(
            "contraction_report applies to fixed-point cells, not the vanilla RNN".into(),
        ));
    }
    if sample_count == 0 || ds.is_empty() {
        return Err(Error::InvalidArgument("need at least one sample".into()));
    }
    crate::cells::check_compatible(params, ds.seq_len(), ds.feature_dim(), ds.class_count())?;
    let n = params.hidden_dim();
    let t_len = params.seq_len();
    let k_steps = params.inner_steps();
    let used = sample_count.min(ds.len());

    // (I + U) V, the state-to-preactivation map of the exemplar cell.
    let iu_v = match params.cell_kind {
        CellKind::ErnnToy => None,
        _ => {
            let mut m = DenseMatrix::zeros(n, n);
            for i in 0..n {
                for j in 0..n {
                    let mut acc = params.v[(i, j)];
                    for l in 0..n {
                        acc += params.u[(i, l)] * params.v[(l, j)];
                    }
                    m[(i, j)] = acc;
                }
            }
            Some(m)
        }
    };

    let mut norms = vec![Vec::with_capacity(used); t_len * k_steps];
    for i in 0..used {
        let fwd = forward_sequence(params, &ds.sample(i));
        for t in 0..t_len {
            for k in 0..k_steps {
                let eta = params.eta[(t, k)];
                let g = &fwd.tape.steps[t].pre[k];
                // M = I + eta (D B - I) with D = diag(sigma'(g)) and
                // B the state-to-preactivation Jacobian.
                let mut m = DenseMatrix::zeros(n, n);
                for r in 0..n {
                    let dr = params.activation.derivative(g[r]);
                    match &iu_v {
                        Some(b) => {
                            for c in 0..n {
                                m[(r, c)] = eta * dr * b[(r, c)];
                            }
                        }
                        None => {
                            // toy cell: B = I (the tanh argument is h + c)
                            m[(r, r)] = eta * dr;
                        }
                    }
                    m[(r, r)] += 1.0 - eta;
                }
                norms[t * k_steps + k].push(spectral_norm(&m, 1000, 1e-10)?.value);
            }
        }
    }

    let mut rows = Vec::with_capacity(t_len * k_steps);
    for t in 0..t_len {
        for k in 0..k_steps {
            let bucket = &norms[t * k_steps + k];
            let min = bucket.iter().cloned().fold(f64::INFINITY, f64::min);
            let max = bucket.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mean = bucket.iter().sum::<f64>() / bucket.len() as f64;
            let frac = bucket.iter().filter(|&&v| v < 1.0).count() as f64 / bucket.len() as f64;
            rows.push(ContractionRow {
                t: t + 1,
                k: k + 1,
                min,
                mean,
                max,
                frac_lt_1: frac,
            });
        }
    }
    Ok(rows)
}

/// Mean inner-step residual ‖σ(g(h⁽ᵏ⁾)) − h⁽ᵏ⁾‖₂ after each inner step,
/// averaged over samples and reported per timestep. A decreasing sequence
/// in k means the inner iteration is actually approaching its fixed
/// point. Reported, not asserted.
pub fn inner_residual_profile(
    params: &ErnnParams,
    ds: &SequenceDataset,
    sample_count: usize,
) -> Result<Vec<Vec<f64>>> {
    if params.cell_kind == CellKind::VanillaRnn {
        return Err(Error::InvalidArgument(
            "inner residuals apply to fixed-point cells only".into(),
        ));
    }
    crate::cells::check_compatible(params, ds.seq_len(), ds.feature_dim(), ds.class_count())?;
    let used = sample_count.min(ds.len());
    if used == 0 {
        return Err(Error::InvalidArgument("need at least one sample".into()));
    }
    let t_len = params.seq_len();
    let k_steps = params.inner_steps();
    let n = params.hidden_dim();
    let mut acc = vec![vec![0.0f64; k_steps]; t_len];
    for i in 0..used {
        let xs = ds.sample(i);
        let fwd = forward_sequence(params, &xs);
        for t in 0..t_len {
            for k in 0..k_steps {
                let h_k = &fwd.tape.steps[t].states[k];
                // Residual of the fixed-point map evaluated at h(k).
                let r = match params.cell_kind {
                    CellKind::ErnnToy => {
                        let c = {
                            let mut c = params.v.matvec(&fwd.tape.h_init[t]);
                            let wx = params.w.matvec(xs.step(t));
                            for ((ci, wi), bi) in
                                c.data_mut().iter_mut().zip(wx.iter()).zip(params.b.iter())
                            {
                                *ci += wi + bi;
                            }
                            c
                        };
                        let mut acc_r = 0.0;
                        for i in 0..n {
                            let diff = (h_k[i] + c[i]).tanh() - h_k[i];
                            acc_r += diff * diff;
                        }
                        acc_r.sqrt()
                    }
                    _ => {
                        let mut a = params.v.matvec(h_k);
                        let wx = params.w.matvec(xs.step(t));
                        for ((ai, wi), bi) in
                            a.data_mut().iter_mut().zip(wx.iter()).zip(params.b.iter())
                        {
                            *ai += wi + bi;
                        }
                        let mut g = params.u.matvec(&a);
                        for (gi, ai) in g.data_mut().iter_mut().zip(a.iter()) {
                            *gi += ai;
                        }
                        let mut acc_r = 0.0;
                        for i in 0..n {
                            let diff = params.activation.apply(g[i]) - h_k[i];
                            acc_r += diff * diff;
                        }
                        acc_r.sqrt()
                    }
                };
                acc[t][k] += r;
            }
        }
    }
    for row in &mut acc {
        for v in row.iter_mut() {
            *v /= used as f64;
        }
    }
    Ok(acc)
}

pub fn write_h1_csv(trace: &[f64], mut w: impl Write) -> std::io::Result<()> {
    writeln!(w, "epoch,distance")?;
    for (e, d) in trace.iter().enumerate() {
        writeln!(w, "{},{}", e + 1, d)?;
    }
    Ok(())
}

pub fn write_h2_csv(trace: &[f64], mut w: impl Write) -> std::io::Result<()> {
    writeln!(w, "t,ratio")?;
    for (t, r) in trace.iter().enumerate() {
        writeln!(w, "{},{}", t + 1, r)?;
    }
    Ok(())
}

pub fn write_eta_csv(report: &EtaReport, mut w: impl Write) -> std::io::Result<()> {
    writeln!(w, "t,k,eta")?;
    for (t, k, eta) in &report.rows {
        writeln!(w, "{},{},{}", t, k, eta)?;
    }
    Ok(())
}

pub fn write_contraction_csv(rows: &[ContractionRow], mut w: impl Write) -> std::io::Result<()> {
    writeln!(w, "t,k,min,mean,max,frac_lt_1")?;
    for r in rows {
        writeln!(
            w,
            "{},{},{},{},{},{}",
            r.t, r.k, r.min, r.mean, r.max, r.frac_lt_1
        )?;
    }
    Ok(())
}
