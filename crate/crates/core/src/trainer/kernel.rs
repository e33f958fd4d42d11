//! Batched loss and reverse-mode gradient of the assemblage loss.
//!
//! Hermitian operators on Bob's side are handled in the orthonormal frame
//! `E_k = G_k / sqrt(2)`, where `Tr(X Y)` is a plain dot product. Mixing
//! hidden states, matching quantum assemblages and pulling gradients back
//! through `Tr(G sigma)` are then all real vector operations.
//!
//! Per measurement `x` the forward pass is
//!
//! ```text
//! p[i][a]  = response of hidden variable i
//! l[a]     = (1/H) sum_i p[i][a] s[i]
//! loss_x   = sum_a 1/2 || l[a] - q[a] ||_1
//! ```
//!
//! and the backward pass uses `d||X||_1 / dX = U sign(Lambda) U^dag`, with
//! `sign(x)` smoothed to `x / sqrt(x^2 + eps)`. The loss value itself is
//! the exact trace norm.

use num_complex::Complex64;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::measurements::Measurement;
use crate::model::{LhsModel, ResponseMode};
use crate::quantum::{eigen::jacobi_eigh, partial_trace_a, shared_basis, CMatrix};
use crate::states::VisibilityState;
use crate::tol;

/// Measurements per work unit. Fixed so that reductions are performed in
/// the same order whatever the thread count.
const CHUNK: usize = 16;

/// Sparse entries of the frame `E_k`: `(k, row-major index, value)`.
#[derive(Debug, Clone)]
struct Frame {
    dim: usize,
    entries: Vec<(usize, usize, usize, Complex64)>,
}

impl Frame {
    fn new(dim: usize) -> Result<Self> {
        let basis = shared_basis(dim)?;
        let scale = std::f64::consts::FRAC_1_SQRT_2;
        let mut entries = Vec::new();
        for (k, g) in basis.matrices().iter().enumerate() {
            for i in 0..dim {
                for j in 0..dim {
                    let v = g[(i, j)];
                    if v.norm() > 0.0 {
                        entries.push((k, i * dim + j, j * dim + i, v * scale));
                    }
                }
            }
        }
        Ok(Self { dim, entries })
    }

    fn len(&self) -> usize {
        self.dim * self.dim
    }

    fn to_matrix(&self, x: &[f64], out: &mut [Complex64]) {
        out.fill(Complex64::new(0.0, 0.0));
        for &(k, idx, _, v) in &self.entries {
            out[idx] += v * x[k];
        }
    }

    /// `x_k = Re Tr(M E_k)`.
    fn coords(&self, m: &[Complex64], out: &mut [f64]) {
        out.fill(0.0);
        // Tr(M E) = sum_ij M_ji E_ij
        for &(k, _, tidx, v) in &self.entries {
            out[k] += (m[tidx] * v).re;
        }
    }
}

/// A state prepared for fast assemblage evaluation: the real linear map
/// from Alice-element frame coordinates to Bob-assemblage frame coordinates.
#[derive(Debug, Clone)]
pub struct Target {
    pub dim_a: usize,
    pub dim_b: usize,
    /// `transfer[mu * dim_b^2 + k]`
    transfer: Vec<f64>,
}

impl Target {
    pub fn new(state: &VisibilityState) -> Result<Self> {
        let (da, db) = (state.dim_a, state.dim_b);
        let basis_a = shared_basis(da)?;
        let basis_b = shared_basis(db)?;
        let id_b = CMatrix::identity(db, db);
        let scale = std::f64::consts::FRAC_1_SQRT_2;
        let mut transfer = Vec::with_capacity(da * da * db * db);
        for g in basis_a.matrices() {
            let e = g * Complex64::new(scale, 0.0);
            let lifted = e.kronecker(&id_b) * state.rho.matrix();
            let reduced = partial_trace_a(&lifted, da, db)?;
            let reduced = (&reduced + reduced.adjoint()) * Complex64::new(0.5, 0.0);
            transfer.extend(basis_b.frame_coords(&reduced));
        }
        Ok(Self {
            dim_a: da,
            dim_b: db,
            transfer,
        })
    }

    /// Frame coordinates of `sigma_{a|x}` for one element's Gell-Mann vector.
    fn assemblage_coords(&self, gm: &[f64], out: &mut [f64]) {
        let nb = self.dim_b * self.dim_b;
        // frame coordinate of the element is g_mu / sqrt(d_A)
        let inv = 1.0 / (self.dim_a as f64).sqrt();
        out.fill(0.0);
        for (mu, g) in gm.iter().enumerate() {
            let w = g * inv;
            if w == 0.0 {
                continue;
            }
            let row = &self.transfer[mu * nb..(mu + 1) * nb];
            for (o, t) in out.iter_mut().zip(row) {
                *o += w * t;
            }
        }
    }
}

/// A measurement reduced to what the kernel needs.
#[derive(Debug, Clone)]
pub struct Prepared {
    n_outcomes: usize,
    /// `[rule row][feature]`: one row in sigmoid mode, one per outcome otherwise.
    features: Vec<f64>,
    /// `[outcome][frame coordinate]`
    target: Vec<f64>,
}

pub fn prepare(model: &LhsModel, target: &Target, m: &Measurement) -> Result<Prepared> {
    let cfg = model.config();
    if m.dim() != target.dim_a {
        return Err(Error::Shape(format!(
            "measurement dimension {} does not match state dim_a = {}",
            m.dim(),
            target.dim_a
        )));
    }
    if cfg.dim_b != target.dim_b || cfg.dim_a != target.dim_a {
        return Err(Error::Shape(format!(
            "model dims ({}, {}) do not match state dims ({}, {})",
            cfg.dim_a, cfg.dim_b, target.dim_a, target.dim_b
        )));
    }
    let o = m.n_outcomes();
    let fm = model.feature_map();
    let n = fm.n_features;
    let features = match cfg.mode {
        ResponseMode::SigmoidDichotomic => {
            if o != 2 || m.dim() != 2 {
                return Err(Error::Config(
                    "sigmoid response needs dichotomic qubit measurements".into(),
                ));
            }
            fm.eval(model.feature_input(&m.gm_coeffs()[0]))
        }
        ResponseMode::SoftmaxGeneral => {
            if o > cfg.max_outcomes {
                return Err(Error::Capacity(format!(
                    "measurement has {o} outcomes, model answers at most {}",
                    cfg.max_outcomes
                )));
            }
            let mut f = vec![0.0; o * n];
            for a in 0..o {
                fm.eval_into(model.feature_input(&m.gm_coeffs()[a]), &mut f[a * n..(a + 1) * n]);
            }
            f
        }
    };
    let nb = target.dim_b * target.dim_b;
    let mut tgt = vec![0.0; o * nb];
    for a in 0..o {
        target.assemblage_coords(&m.gm_coeffs()[a], &mut tgt[a * nb..(a + 1) * nb]);
    }
    Ok(Prepared {
        n_outcomes: o,
        features,
        target: tgt,
    })
}

pub fn prepare_batch(model: &LhsModel, target: &Target, batch: &[Measurement]) -> Result<Vec<Prepared>> {
    batch.iter().map(|m| prepare(model, target, m)).collect()
}

/// Hidden states of the current parameters, in frame coordinates.
#[derive(Debug, Clone)]
pub struct HiddenCache {
    /// `[hidden][k]`
    coords: Vec<f64>,
    /// `Tr[M M^dag]` per hidden pair.
    norms: Vec<f64>,
}

impl HiddenCache {
    /// Fails with the index of the first degenerate hidden state.
    pub fn new(model: &LhsModel) -> std::result::Result<Self, usize> {
        let layout = model.layout();
        let d = layout.dim_b;
        let frame = Frame::new(d).expect("dim_b >= 2");
        let nb = d * d;
        let mut coords = vec![0.0; layout.n_hidden * nb];
        let mut norms = vec![0.0; layout.n_hidden];
        let mut sigma = vec![Complex64::new(0.0, 0.0); nb];
        let params = model.params();
        for i in 0..layout.n_hidden {
            let raw = &params[layout.state_range(i)];
            let mut t = 0.0;
            for x in raw {
                t += x * x;
            }
            if !(t > tol::MIN_STATE_NORM) || !t.is_finite() {
                return Err(i);
            }
            norms[i] = t;
            for r in 0..d {
                for c in 0..d {
                    let mut acc = Complex64::new(0.0, 0.0);
                    for k in 0..d {
                        let a = Complex64::new(raw[2 * (r * d + k)], raw[2 * (r * d + k) + 1]);
                        let b = Complex64::new(raw[2 * (c * d + k)], raw[2 * (c * d + k) + 1]);
                        acc += a * b.conj();
                    }
                    sigma[r * d + c] = acc / t;
                }
            }
            frame.coords(&sigma, &mut coords[i * nb..(i + 1) * nb]);
        }
        Ok(Self { coords, norms })
    }
}

/// Loss and gradient over a batch.
#[derive(Debug, Clone)]
pub struct Evaluation {
    /// Mean assemblage distance over the batch.
    pub loss: f64,
    /// Gradient with respect to the flat parameter vector; empty when not requested.
    pub grad: Vec<f64>,
}

struct Partial {
    loss: f64,
    /// coefficient and bias gradients, flat-layout prefix
    head: Vec<f64>,
    /// `dL/ds[i][k]`
    states: Vec<f64>,
}

/// Scratch buffers for one worker.
struct Scratch {
    probs: Vec<f64>,
    lhs: Vec<f64>,
    grad_out: Vec<f64>,
    dprob: Vec<f64>,
    dz: Vec<f64>,
    mat: Vec<Complex64>,
    vecs: Vec<Complex64>,
    vals: Vec<f64>,
    gmat: Vec<Complex64>,
}

impl Scratch {
    fn new(n_hidden: usize, o_max: usize, db: usize) -> Self {
        let nb = db * db;
        Self {
            probs: vec![0.0; n_hidden * o_max],
            lhs: vec![0.0; o_max * nb],
            grad_out: vec![0.0; o_max * nb],
            dprob: vec![0.0; o_max],
            dz: vec![0.0; o_max],
            mat: vec![Complex64::new(0.0, 0.0); nb],
            vecs: vec![Complex64::new(0.0, 0.0); nb],
            vals: vec![0.0; db],
            gmat: vec![Complex64::new(0.0, 0.0); nb],
        }
    }
}

/// Trace norm of the operator with frame coordinates `x`, and (optionally)
/// the frame coordinates of its smoothed gradient.
fn trace_norm_coords(
    frame: &Frame,
    x: &[f64],
    grad: Option<&mut [f64]>,
    scratch_mat: &mut [Complex64],
    scratch_vecs: &mut [Complex64],
    scratch_vals: &mut [f64],
    scratch_g: &mut [Complex64],
) -> f64 {
    let eps = tol::TRACE_NORM_SMOOTHING;
    let smooth = |l: f64| l / (l * l + eps).sqrt();
    if frame.dim == 2 {
        // X = (x0 I + v.sigma) / sqrt(2)
        let s = std::f64::consts::FRAC_1_SQRT_2;
        let r = (x[1] * x[1] + x[2] * x[2] + x[3] * x[3]).sqrt();
        let hi = s * (x[0] + r);
        let lo = s * (x[0] - r);
        if let Some(g) = grad {
            let (fh, fl) = (smooth(hi), smooth(lo));
            g[0] = s * (fh + fl);
            let w = if r > 0.0 { s * (fh - fl) / r } else { 0.0 };
            g[1] = w * x[1];
            g[2] = w * x[2];
            g[3] = w * x[3];
        }
        return hi.abs() + lo.abs();
    }
    let d = frame.dim;
    frame.to_matrix(x, scratch_mat);
    match grad {
        None => {
            jacobi_eigh(d, scratch_mat, None, scratch_vals);
            scratch_vals.iter().map(|l| l.abs()).sum()
        }
        Some(g) => {
            jacobi_eigh(d, scratch_mat, Some(scratch_vecs), scratch_vals);
            // G = V diag(f) V^dag
            for r in 0..d {
                for c in 0..d {
                    let mut acc = Complex64::new(0.0, 0.0);
                    for k in 0..d {
                        acc += scratch_vecs[r * d + k] * scratch_vecs[c * d + k].conj()
                            * smooth(scratch_vals[k]);
                    }
                    scratch_g[r * d + c] = acc;
                }
            }
            frame.coords(scratch_g, g);
            scratch_vals.iter().map(|l| l.abs()).sum()
        }
    }
}

fn evaluate_chunk(
    model: &LhsModel,
    cache: &HiddenCache,
    frame: &Frame,
    chunk: &[Prepared],
    want_grad: bool,
) -> Partial {
    let layout = model.layout();
    let h = layout.n_hidden;
    let n = layout.n_features;
    let rows = layout.rows;
    let nb = frame.len();
    let mode = model.mode();
    let params = model.params();
    let coeffs = &params[layout.coeffs.clone()];
    let bias = &params[layout.bias.clone()];
    let o_max = model.config().max_outcomes;
    let inv_h = 1.0 / h as f64;

    let mut sc = Scratch::new(h, o_max, frame.dim);
    let mut head = if want_grad { vec![0.0; layout.states.start] } else { Vec::new() };
    let mut dstates = if want_grad { vec![0.0; h * nb] } else { Vec::new() };
    let mut loss = 0.0;

    for prep in chunk {
        let o = prep.n_outcomes;
        // responses
        for i in 0..h {
            let c = &coeffs[i * rows * n..(i + 1) * rows * n];
            let p = &mut sc.probs[i * o..(i + 1) * o];
            match mode {
                ResponseMode::SigmoidDichotomic => {
                    let z: f64 = dot(&c[..n], &prep.features[..n]);
                    let p0 = crate::model::sigmoid(z);
                    p[0] = p0;
                    p[1] = 1.0 - p0;
                }
                ResponseMode::SoftmaxGeneral => {
                    let b = &bias[i * rows..(i + 1) * rows];
                    let mut top = f64::NEG_INFINITY;
                    for a in 0..o {
                        let z = dot(&c[a * n..(a + 1) * n], &prep.features[a * n..(a + 1) * n]) + b[a];
                        p[a] = z;
                        top = top.max(z);
                    }
                    let mut total = 0.0;
                    for pa in p.iter_mut() {
                        *pa = (*pa - top).exp();
                        total += *pa;
                    }
                    let inv = 1.0 / total;
                    for pa in p.iter_mut() {
                        *pa *= inv;
                    }
                }
            }
        }
        // LHS assemblage in frame coordinates
        let lhs = &mut sc.lhs[..o * nb];
        lhs.fill(0.0);
        for i in 0..h {
            let s = &cache.coords[i * nb..(i + 1) * nb];
            for a in 0..o {
                let w = sc.probs[i * o + a] * inv_h;
                let out = &mut lhs[a * nb..(a + 1) * nb];
                for (l, sk) in out.iter_mut().zip(s) {
                    *l += w * sk;
                }
            }
        }
        // distance to the quantum assemblage
        let mut loss_x = 0.0;
        for a in 0..o {
            let diff = &mut lhs[a * nb..(a + 1) * nb];
            for (dk, qk) in diff.iter_mut().zip(&prep.target[a * nb..(a + 1) * nb]) {
                *dk -= qk;
            }
            let g = if want_grad {
                Some(&mut sc.grad_out[a * nb..(a + 1) * nb])
            } else {
                None
            };
            loss_x += 0.5
                * trace_norm_coords(
                    frame,
                    diff,
                    g,
                    &mut sc.mat,
                    &mut sc.vecs,
                    &mut sc.vals,
                    &mut sc.gmat,
                );
        }
        loss += loss_x;
        if !want_grad {
            continue;
        }
        // d loss_x / d l[a] = 1/2 grad_out[a]
        for v in sc.grad_out[..o * nb].iter_mut() {
            *v *= 0.5;
        }

        for i in 0..h {
            let s = &cache.coords[i * nb..(i + 1) * nb];
            let p = &sc.probs[i * o..(i + 1) * o];
            let ds = &mut dstates[i * nb..(i + 1) * nb];
            for a in 0..o {
                let ga = &sc.grad_out[a * nb..(a + 1) * nb];
                sc.dprob[a] = inv_h * dot(ga, s);
                let w = inv_h * p[a];
                for (d, g) in ds.iter_mut().zip(ga) {
                    *d += w * g;
                }
            }
            match mode {
                ResponseMode::SigmoidDichotomic => {
                    let dz = (sc.dprob[0] - sc.dprob[1]) * p[0] * p[1];
                    let hc = &mut head[i * n..(i + 1) * n];
                    for (hcm, f) in hc.iter_mut().zip(&prep.features[..n]) {
                        *hcm += dz * f;
                    }
                }
                ResponseMode::SoftmaxGeneral => {
                    let mean: f64 = (0..o).map(|a| p[a] * sc.dprob[a]).sum();
                    for a in 0..o {
                        sc.dz[a] = p[a] * (sc.dprob[a] - mean);
                    }
                    let (hc, hb) = head.split_at_mut(layout.bias.start);
                    let hc = &mut hc[i * rows * n..(i + 1) * rows * n];
                    for a in 0..o {
                        let dz = sc.dz[a];
                        let row = &mut hc[a * n..(a + 1) * n];
                        for (hcm, f) in row.iter_mut().zip(&prep.features[a * n..(a + 1) * n]) {
                            *hcm += dz * f;
                        }
                        hb[i * rows + a] += dz;
                    }
                }
            }
        }
    }
    Partial {
        loss,
        head,
        states: dstates,
    }
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Mean loss over `batch` and, when `want_grad`, its gradient.
pub fn evaluate(
    model: &LhsModel,
    cache: &HiddenCache,
    batch: &[Prepared],
    want_grad: bool,
) -> Evaluation {
    let layout = model.layout();
    let frame = Frame::new(layout.dim_b).expect("dim_b >= 2");
    let partials: Vec<Partial> = batch
        .par_chunks(CHUNK)
        .map(|chunk| evaluate_chunk(model, cache, &frame, chunk, want_grad))
        .collect();

    let count = batch.len().max(1) as f64;
    let mut loss = 0.0;
    for p in &partials {
        loss += p.loss;
    }
    loss /= count;
    if !want_grad {
        return Evaluation { loss, grad: Vec::new() };
    }

    let nb = frame.len();
    let mut grad = vec![0.0; layout.len()];
    let mut dstates = vec![0.0; layout.n_hidden * nb];
    for p in &partials {
        for (g, x) in grad[..layout.states.start].iter_mut().zip(&p.head) {
            *g += x;
        }
        for (g, x) in dstates.iter_mut().zip(&p.states) {
            *g += x;
        }
    }
    let inv = 1.0 / count;
    for g in grad[..layout.states.start].iter_mut() {
        *g *= inv;
    }
    for g in dstates.iter_mut() {
        *g *= inv;
    }
    state_backward(model, cache, &frame, &dstates, &mut grad);
    Evaluation { loss, grad }
}

// sigma = A / t with A = M M^dag, t = Tr A. For dL = Tr(G dsigma):
// grad_M = 2 K M with K = (G - Tr(G sigma) I) / t, split into re/im parts.
fn state_backward(model: &LhsModel, cache: &HiddenCache, frame: &Frame, dstates: &[f64], grad: &mut [f64]) {
    let layout = model.layout();
    let d = layout.dim_b;
    let nb = d * d;
    let params = model.params();
    let mut gmat = vec![Complex64::new(0.0, 0.0); nb];
    for i in 0..layout.n_hidden {
        let ds = &dstates[i * nb..(i + 1) * nb];
        let s = &cache.coords[i * nb..(i + 1) * nb];
        let t = cache.norms[i];
        let c = dot(ds, s);
        frame.to_matrix(ds, &mut gmat);
        for r in 0..d {
            gmat[r * d + r] -= c;
        }
        let range = layout.state_range(i);
        let raw = &params[range.clone()];
        let out = &mut grad[range];
        for r in 0..d {
            for col in 0..d {
                let mut acc = Complex64::new(0.0, 0.0);
                for k in 0..d {
                    let m = Complex64::new(raw[2 * (k * d + col)], raw[2 * (k * d + col) + 1]);
                    acc += gmat[r * d + k] * m;
                }
                acc *= 2.0 / t;
                out[2 * (r * d + col)] = acc.re;
                out[2 * (r * d + col) + 1] = acc.im;
            }
        }
    }
}

#[cfg(test)]
fn flat_to_matrix(d: usize, x: &[Complex64]) -> CMatrix {
    CMatrix::from_row_slice(d, d, x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quantum::{gellmann_basis, trace_product};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn frame_round_trip_matches_dense_basis() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for d in 2..=4 {
            let frame = Frame::new(d).unwrap();
            let basis = gellmann_basis(d).unwrap();
            let x: Vec<f64> = (0..d * d).map(|_| rng.random::<f64>() - 0.5).collect();
            let mut m = vec![Complex64::new(0.0, 0.0); d * d];
            frame.to_matrix(&x, &mut m);
            let dense = basis.from_frame_coords(&x);
            assert!((flat_to_matrix(d, &m) - &dense).camax() < 1e-15);
            let mut back = vec![0.0; d * d];
            frame.coords(&m, &mut back);
            for (u, v) in back.iter().zip(&x) {
                assert!((u - v).abs() < 1e-15);
            }
            let y: Vec<f64> = (0..d * d).map(|_| rng.random::<f64>() - 0.5).collect();
            let my = basis.from_frame_coords(&y);
            let want: f64 = x.iter().zip(&y).map(|(a, b)| a * b).sum();
            assert!((trace_product(&dense, &my).re - want).abs() < 1e-14);
        }
    }

    #[test]
    fn trace_norm_paths_agree() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for d in 2..=4 {
            let frame = Frame::new(d).unwrap();
            let basis = gellmann_basis(d).unwrap();
            let nb = d * d;
            let mut m = vec![Complex64::new(0.0, 0.0); nb];
            let mut v = vec![Complex64::new(0.0, 0.0); nb];
            let mut w = vec![0.0; d];
            let mut g = vec![Complex64::new(0.0, 0.0); nb];
            for _ in 0..20 {
                let x: Vec<f64> = (0..nb).map(|_| rng.random::<f64>() - 0.5).collect();
                let mut grad = vec![0.0; nb];
                let tn = trace_norm_coords(&frame, &x, Some(&mut grad), &mut m, &mut v, &mut w, &mut g);
                let want = crate::quantum::trace_norm(&basis.from_frame_coords(&x));
                assert!((tn - want).abs() < 1e-13);
                // finite differences of the exact norm
                for k in 0..nb {
                    let h = 1e-6;
                    let mut xp = x.clone();
                    xp[k] += h;
                    let mut xm = x.clone();
                    xm[k] -= h;
                    let fp = crate::quantum::trace_norm(&basis.from_frame_coords(&xp));
                    let fm = crate::quantum::trace_norm(&basis.from_frame_coords(&xm));
                    let fd = (fp - fm) / (2.0 * h);
                    assert!((fd - grad[k]).abs() < 1e-6, "d={d} k={k}: {fd} vs {}", grad[k]);
                }
            }
        }
    }
}
