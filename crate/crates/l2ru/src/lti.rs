//! Discrete-time LTI state-space systems and their L2-gain machinery.
//!
//! A system is the quadruple (A, B, C, D) with state update
//! `h[k+1] = A h[k] + B u[k]`, output `z[k] = C h[k] + D u[k]`, and zero
//! initial state unless stated otherwise. The module provides:
//!
//! - reference (recursive) simulation and a parallel associative-scan path
//!   for block-diagonal `A`;
//! - the two equivalent linear-matrix-inequality forms that certify a gain
//!   bound together with a storage matrix `P`;
//! - an H-infinity norm estimator (frequency sweep plus golden-section
//!   refinement) and an independent bisection estimator driven by a
//!   Riccati-equation feasibility probe, used to cross-check each other.

use crate::numerics::{
    lu_factor, spectral_norm_detailed, sym_eig, Mat, Matrix, NumericsError, Scalar, JACOBI_TOL,
    SPECTRAL_MAX_ITERS, SPECTRAL_TOL,
};
use serde::{Deserialize, Serialize};

/// Default frequency-grid resolution for the H-infinity sweep.
pub const HINF_GRID_POINTS: usize = 2048;
/// Default relative tolerance for H-infinity estimates.
pub const HINF_TOL: f64 = 1e-6;
/// Stability margin: spectral radius at or above `1 - HINF_STABILITY_MARGIN`
/// is treated as unstable.
pub const HINF_STABILITY_MARGIN: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum LtiError {
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("input trajectory has zero energy; gain ratio undefined")]
    ZeroInput,
    #[error("gain bound must be positive, got {0}")]
    InvalidGamma(f64),
    #[error("system is not Schur stable (spectral radius estimate {rho:.9})")]
    Unstable { rho: f64 },
    #[error("state matrix is not block-diagonal: nonzero entry at ({row}, {col}) outside 1x1/2x2 diagonal blocks")]
    Structure { row: usize, col: usize },
    #[error(transparent)]
    Numerics(#[from] NumericsError),
}

/// State-space matrices over a generic scalar; used by differentiable code.
#[derive(Debug, Clone)]
pub struct SysMats<S> {
    pub a: Mat<S>,
    pub b: Mat<S>,
    pub c: Mat<S>,
    pub d: Mat<S>,
}

impl<S: Scalar> SysMats<S> {
    pub fn state_dim(&self) -> usize {
        self.a.rows()
    }
    pub fn input_dim(&self) -> usize {
        self.b.cols()
    }
    pub fn output_dim(&self) -> usize {
        self.c.rows()
    }

    pub fn value_system(&self) -> LtiSystem {
        LtiSystem {
            a: self.a.value_matrix(),
            b: self.b.value_matrix(),
            c: self.c.value_matrix(),
            d: self.d.value_matrix(),
        }
    }
}

/// Discrete-time LTI system with validated, consistent dimensions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LtiSystem {
    #[serde(rename = "A")]
    a: Matrix,
    #[serde(rename = "B")]
    b: Matrix,
    #[serde(rename = "C")]
    c: Matrix,
    #[serde(rename = "D")]
    d: Matrix,
}

impl LtiSystem {
    pub fn new(a: Matrix, b: Matrix, c: Matrix, d: Matrix) -> Result<Self, LtiError> {
        let n = a.rows();
        if !a.is_square() {
            return Err(LtiError::Dimension(format!(
                "A must be square, got {}x{}",
                a.rows(),
                a.cols()
            )));
        }
        if b.rows() != n {
            return Err(LtiError::Dimension(format!(
                "B has {} rows, expected {n}",
                b.rows()
            )));
        }
        if c.cols() != n {
            return Err(LtiError::Dimension(format!(
                "C has {} columns, expected {n}",
                c.cols()
            )));
        }
        if d.rows() != c.rows() || d.cols() != b.cols() {
            return Err(LtiError::Dimension(format!(
                "D must be {}x{}, got {}x{}",
                c.rows(),
                b.cols(),
                d.rows(),
                d.cols()
            )));
        }
        Ok(Self { a, b, c, d })
    }

    pub fn a(&self) -> &Matrix {
        &self.a
    }
    pub fn b(&self) -> &Matrix {
        &self.b
    }
    pub fn c(&self) -> &Matrix {
        &self.c
    }
    pub fn d(&self) -> &Matrix {
        &self.d
    }
    pub fn state_dim(&self) -> usize {
        self.a.rows()
    }
    pub fn input_dim(&self) -> usize {
        self.b.cols()
    }
    pub fn output_dim(&self) -> usize {
        self.c.rows()
    }

    /// Validates a parsed system (dimension consistency after deserialization).
    pub fn validated(self) -> Result<Self, LtiError> {
        Self::new(self.a, self.b, self.c, self.d)
    }

    pub fn mats(&self) -> SysMats<f64> {
        SysMats {
            a: self.a.clone(),
            b: self.b.clone(),
            c: self.c.clone(),
            d: self.d.clone(),
        }
    }

    /// Lifts the system matrices into another scalar context as constants.
    pub fn lift_mats<S: Scalar>(&self, probe: S) -> SysMats<S> {
        SysMats {
            a: Mat::lift_like(probe, &self.a),
            b: Mat::lift_like(probe, &self.b),
            c: Mat::lift_like(probe, &self.c),
            d: Mat::lift_like(probe, &self.d),
        }
    }
}

/// A gain bound together with the storage matrix that witnesses it in the
/// two-block LMI form ([`bounded_real_residual`] strictly negative).
///
/// The four-block form certifies with `P / gamma`; see
/// [`GainCertificate::four_block_storage`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GainCertificate {
    #[serde(rename = "P")]
    pub p: Matrix,
    pub gamma: f64,
}

impl GainCertificate {
    /// Largest eigenvalue of the two-block LMI for this certificate;
    /// negative values certify the bound.
    pub fn residual(&self, sys: &LtiSystem) -> Result<f64, LtiError> {
        bounded_real_residual(sys, &self.p, self.gamma)
    }

    /// The same certificate rescaled for the four-block LMI form.
    pub fn four_block_storage(&self) -> Matrix {
        self.p.scale(1.0 / self.gamma)
    }
}

/// Multichannel sampled signal, stored sample-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    dim: usize,
    data: Vec<f64>,
}

impl Trajectory {
    pub fn zeros(dim: usize, len: usize) -> Self {
        assert!(dim > 0, "trajectory dimension must be positive");
        Self {
            dim,
            data: vec![0.0; dim * len],
        }
    }

    pub fn from_flat(dim: usize, data: Vec<f64>) -> Result<Self, LtiError> {
        if dim == 0 || data.len() % dim != 0 {
            return Err(LtiError::Dimension(format!(
                "flat length {} is not a multiple of dimension {dim}",
                data.len()
            )));
        }
        Ok(Self { dim, data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self, LtiError> {
        let dim = rows.first().map_or(0, |r| r.len());
        if dim == 0 || rows.iter().any(|r| r.len() != dim) {
            return Err(LtiError::Dimension(
                "trajectory rows must be nonempty and uniform".to_string(),
            ));
        }
        Ok(Self {
            dim,
            data: rows.concat(),
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.data.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn sample(&self, k: usize) -> &[f64] {
        &self.data[k * self.dim..(k + 1) * self.dim]
    }

    pub fn sample_mut(&mut self, k: usize) -> &mut [f64] {
        &mut self.data[k * self.dim..(k + 1) * self.dim]
    }

    pub fn as_flat(&self) -> &[f64] {
        &self.data
    }

    /// Signal 2-norm: sqrt of the summed squared samples over all channels.
    pub fn norm2(&self) -> f64 {
        self.data.iter().map(|x| x * x).sum::<f64>().sqrt()
    }

    /// Contiguous sub-trajectory `[start, end)`.
    pub fn window(&self, start: usize, end: usize) -> Self {
        Self {
            dim: self.dim,
            data: self.data[start * self.dim..end * self.dim].to_vec(),
        }
    }
}

/// Reference simulation over any scalar field, zero-initialized by default.
pub fn simulate_mats<S: Scalar>(sys: &SysMats<S>, u: &[Vec<S>], h0: Option<&[S]>) -> Vec<Vec<S>> {
    let n = sys.state_dim();
    let probe = sys.a[(0, 0)];
    let mut h: Vec<S> = match h0 {
        Some(h0) => h0.to_vec(),
        None => vec![probe.lift(0.0); n],
    };
    let mut out = Vec::with_capacity(u.len());
    let mut h_next = vec![probe.lift(0.0); n];
    for uk in u {
        let mut z = Vec::with_capacity(sys.output_dim());
        for i in 0..sys.output_dim() {
            let mut acc = probe.lift(0.0);
            for j in 0..n {
                acc = acc + sys.c[(i, j)] * h[j];
            }
            for j in 0..sys.input_dim() {
                acc = acc + sys.d[(i, j)] * uk[j];
            }
            z.push(acc);
        }
        for (i, slot) in h_next.iter_mut().enumerate() {
            let mut acc = probe.lift(0.0);
            for j in 0..n {
                acc = acc + sys.a[(i, j)] * h[j];
            }
            for j in 0..sys.input_dim() {
                acc = acc + sys.b[(i, j)] * uk[j];
            }
            *slot = acc;
        }
        std::mem::swap(&mut h, &mut h_next);
        out.push(z);
    }
    out
}

/// Step-by-step simulation; the semantic reference for every other path.
pub fn simulate_recursive(
    sys: &LtiSystem,
    u: &Trajectory,
    h0: Option<&[f64]>,
) -> Result<Trajectory, LtiError> {
    if u.dim() != sys.input_dim() {
        return Err(LtiError::Dimension(format!(
            "input has {} channels, system expects {}",
            u.dim(),
            sys.input_dim()
        )));
    }
    if let Some(h0) = h0 {
        if h0.len() != sys.state_dim() {
            return Err(LtiError::Dimension(format!(
                "initial state has {} entries, expected {}",
                h0.len(),
                sys.state_dim()
            )));
        }
    }
    let n = sys.state_dim();
    let (nu, nz) = (sys.input_dim(), sys.output_dim());
    let mut h = h0.map_or_else(|| vec![0.0; n], <[f64]>::to_vec);
    let mut h_next = vec![0.0; n];
    let mut out = Trajectory::zeros(nz, u.len());
    for k in 0..u.len() {
        let uk = u.sample(k);
        {
            let zk = out.sample_mut(k);
            for i in 0..nz {
                let crow = &sys.c.as_slice()[i * n..(i + 1) * n];
                let drow = &sys.d.as_slice()[i * nu..(i + 1) * nu];
                let mut acc = 0.0;
                for (a, b) in crow.iter().zip(&h) {
                    acc += a * b;
                }
                for (a, b) in drow.iter().zip(uk) {
                    acc += a * b;
                }
                zk[i] = acc;
            }
        }
        for (i, slot) in h_next.iter_mut().enumerate() {
            let arow = &sys.a.as_slice()[i * n..(i + 1) * n];
            let brow = &sys.b.as_slice()[i * nu..(i + 1) * nu];
            let mut acc = 0.0;
            for (a, b) in arow.iter().zip(&h) {
                acc += a * b;
            }
            for (a, b) in brow.iter().zip(uk) {
                acc += a * b;
            }
            *slot = acc;
        }
        std::mem::swap(&mut h, &mut h_next);
    }
    Ok(out)
}

/// Diagonal block layout of a block-diagonal state matrix.
#[derive(Debug, Clone)]
struct BlockLayout {
    /// `(start_index, size)` with size 1 or 2.
    blocks: Vec<(usize, usize)>,
}

fn detect_blocks(a: &Matrix) -> Result<BlockLayout, LtiError> {
    let n = a.rows();
    let mut blocks = Vec::new();
    let mut owner = vec![usize::MAX; n];
    let mut i = 0;
    while i < n {
        let paired = i + 1 < n && (a[(i, i + 1)] != 0.0 || a[(i + 1, i)] != 0.0);
        let size = if paired { 2 } else { 1 };
        for k in 0..size {
            owner[i + k] = blocks.len();
        }
        blocks.push((i, size));
        i += size;
    }
    for r in 0..n {
        for c in 0..n {
            if a[(r, c)] != 0.0 && owner[r] != owner[c] {
                return Err(LtiError::Structure { row: r, col: c });
            }
        }
    }
    Ok(BlockLayout { blocks })
}

/// Dense copies of the diagonal blocks, padded to 2x2 storage.
fn block_entries(a: &Matrix, layout: &BlockLayout) -> Vec<[f64; 4]> {
    layout
        .blocks
        .iter()
        .map(|&(s, size)| {
            if size == 1 {
                [a[(s, s)], 0.0, 0.0, 0.0]
            } else {
                [a[(s, s)], a[(s, s + 1)], a[(s + 1, s)], a[(s + 1, s + 1)]]
            }
        })
        .collect()
}

fn block_matvec(blocks: &[[f64; 4]], layout: &BlockLayout, x: &[f64], y: &mut [f64]) {
    for (blk, &(s, size)) in blocks.iter().zip(&layout.blocks) {
        if size == 1 {
            y[s] = blk[0] * x[s];
        } else {
            let (x0, x1) = (x[s], x[s + 1]);
            y[s] = blk[0] * x0 + blk[1] * x1;
            y[s + 1] = blk[2] * x0 + blk[3] * x1;
        }
    }
}

fn block_mul(a: &[f64; 4], b: &[f64; 4]) -> [f64; 4] {
    [
        a[0] * b[0] + a[1] * b[2],
        a[0] * b[1] + a[1] * b[3],
        a[2] * b[0] + a[3] * b[2],
        a[2] * b[1] + a[3] * b[3],
    ]
}

/// Per-block `A^e` by binary exponentiation.
fn block_power(blocks: &[[f64; 4]], layout: &BlockLayout, e: usize) -> Vec<[f64; 4]> {
    layout
        .blocks
        .iter()
        .zip(blocks)
        .map(|(&(_, size), blk)| {
            let ident = if size == 1 {
                [1.0, 0.0, 0.0, 0.0]
            } else {
                [1.0, 0.0, 0.0, 1.0]
            };
            let mut result = ident;
            let mut base = *blk;
            let mut k = e;
            while k > 0 {
                if k & 1 == 1 {
                    result = block_mul(&result, &base);
                }
                base = block_mul(&base, &base);
                k >>= 1;
            }
            result
        })
        .collect()
}

/// Parallel simulation of a block-diagonal system via an associative scan.
///
/// The sequence is cut into chunks; each chunk is summarized by the pair
/// `(A^len, state accumulated from its own inputs)`, the summaries are
/// combined left to right to recover exact chunk-boundary states, and the
/// per-sample outputs are then filled in independently per chunk. Requires
/// `A` to be block-diagonal with 1x1/2x2 diagonal blocks (as produced by the
/// structured parametrization); anything else is a structure error.
///
/// Matches [`simulate_recursive`] to floating-point reassociation error
/// (within 1e-10 for well-scaled systems).
pub fn simulate_scan(sys: &LtiSystem, u: &Trajectory) -> Result<Trajectory, LtiError> {
    use rayon::prelude::*;

    if u.dim() != sys.input_dim() {
        return Err(LtiError::Dimension(format!(
            "input has {} channels, system expects {}",
            u.dim(),
            sys.input_dim()
        )));
    }
    let layout = detect_blocks(&sys.a)?;
    let blocks = block_entries(&sys.a, &layout);
    let n = sys.state_dim();
    let (nu, nz) = (sys.input_dim(), sys.output_dim());
    let t_len = u.len();
    if t_len == 0 {
        return Ok(Trajectory::zeros(nz, 0));
    }

    // Driven-input terms B u[k], shared by both passes.
    let mut bu = vec![0.0; t_len * n];
    bu.par_chunks_mut(n).enumerate().for_each(|(k, dst)| {
        let uk = u.sample(k);
        for i in 0..n {
            let brow = &sys.b.as_slice()[i * nu..(i + 1) * nu];
            dst[i] = brow.iter().zip(uk).map(|(a, b)| a * b).sum();
        }
    });

    let threads = rayon::current_num_threads().max(1);
    let chunk_len = t_len.div_ceil(2 * threads).max(64);
    let ranges: Vec<(usize, usize)> = (0..t_len)
        .step_by(chunk_len)
        .map(|s| (s, (s + chunk_len).min(t_len)))
        .collect();

    // Pass 1: per-chunk summary (A^len, end state from local inputs alone).
    let summaries: Vec<(Vec<[f64; 4]>, Vec<f64>)> = ranges
        .par_iter()
        .map(|&(s, e)| {
            let mut h = vec![0.0; n];
            let mut tmp = vec![0.0; n];
            for k in s..e {
                block_matvec(&blocks, &layout, &h, &mut tmp);
                for i in 0..n {
                    h[i] = tmp[i] + bu[k * n + i];
                }
            }
            (block_power(&blocks, &layout, e - s), h)
        })
        .collect();

    // Pass 2: exact chunk-boundary states by left-to-right combination.
    let mut starts = vec![vec![0.0; n]; ranges.len()];
    for c in 1..ranges.len() {
        let (power, carry) = &summaries[c - 1];
        let mut h = vec![0.0; n];
        block_matvec(power, &layout, &starts[c - 1], &mut h);
        for i in 0..n {
            h[i] += carry[i];
        }
        starts[c] = h;
    }

    // Pass 3: outputs, re-running each chunk from its exact start state.
    let mut out = Trajectory::zeros(nz, t_len);
    {
        let out_flat: &mut [f64] = &mut out.data;
        out_flat
            .par_chunks_mut(chunk_len * nz)
            .zip(ranges.par_iter().zip(&starts))
            .for_each(|(dst, (&(s, e), start))| {
                let mut h = start.clone();
                let mut tmp = vec![0.0; n];
                for k in s..e {
                    let uk = u.sample(k);
                    let zk = &mut dst[(k - s) * nz..(k - s + 1) * nz];
                    for i in 0..nz {
                        let crow = &sys.c.as_slice()[i * n..(i + 1) * n];
                        let drow = &sys.d.as_slice()[i * nu..(i + 1) * nu];
                        let mut acc = 0.0;
                        for (a, b) in crow.iter().zip(&h) {
                            acc += a * b;
                        }
                        for (a, b) in drow.iter().zip(uk) {
                            acc += a * b;
                        }
                        zk[i] = acc;
                    }
                    block_matvec(&blocks, &layout, &h, &mut tmp);
                    for i in 0..n {
                        h[i] = tmp[i] + bu[k * n + i];
                    }
                }
            });
    }
    Ok(out)
}

fn check_certificate_inputs(sys: &LtiSystem, p: &Matrix, gamma: f64) -> Result<(), LtiError> {
    if gamma <= 0.0 || !gamma.is_finite() {
        return Err(LtiError::InvalidGamma(gamma));
    }
    if p.rows() != sys.state_dim() || p.cols() != sys.state_dim() {
        return Err(LtiError::Dimension(format!(
            "storage matrix must be {0}x{0}, got {1}x{2}",
            sys.state_dim(),
            p.rows(),
            p.cols()
        )));
    }
    p.check_symmetric()?;
    Ok(())
}

/// Largest eigenvalue of the two-block gain LMI; negative iff the pair
/// `(P, gamma)` certifies that the L2 gain is below `gamma`.
///
/// The matrix is
/// `[[A'PA - P + C'C,  A'PB + C'D], [B'PA + D'C,  B'PB + D'D - gamma^2 I]]`.
pub fn bounded_real_residual(sys: &LtiSystem, p: &Matrix, gamma: f64) -> Result<f64, LtiError> {
    check_certificate_inputs(sys, p, gamma)?;
    let p = p.symmetrize();
    let (n, m) = (sys.state_dim(), sys.input_dim());
    let pa = p.mul(&sys.a);
    let pb = p.mul(&sys.b);
    let m11 = sys
        .a
        .tr_mul(&pa)
        .sub(&p)
        .add(&sys.c.tr_mul(&sys.c));
    let m12 = sys.a.tr_mul(&pb).add(&sys.c.tr_mul(&sys.d));
    let m22 = sys
        .b
        .tr_mul(&pb)
        .add(&sys.d.tr_mul(&sys.d))
        .add_scaled_identity(-gamma * gamma);
    let mut full = Matrix::zeros(n + m, n + m);
    full.set_block(0, 0, &m11);
    full.set_block(0, n, &m12);
    full.set_block(n, 0, &m12.t());
    full.set_block(n, n, &m22);
    Ok(sym_eig(&full.symmetrize(), JACOBI_TOL)?.max_eig())
}

/// Assembles the four-block form of the gain LMI:
/// `[[P, PA, PB, 0], [A'P, P, 0, C'], [B'P, 0, gamma I, D'], [0, C, D, gamma I]]`.
///
/// Feasibility of this form is equivalent to feasibility of the two-block
/// form, but the explicit certificates differ by a scale: if `P` makes the
/// two-block form negative definite, `P / gamma` makes this form positive
/// definite (take Schur complements with respect to the leading block and the
/// trailing `gamma I` block to see it). Unlike the two-block form, this one
/// is linear in `(P, gamma)` jointly.
pub fn gain_lmi_four_block(sys: &LtiSystem, p: &Matrix, gamma: f64) -> Matrix {
    let (n, m, q) = (sys.state_dim(), sys.input_dim(), sys.output_dim());
    let pa = p.mul(&sys.a);
    let pb = p.mul(&sys.b);
    let mut g = Matrix::zeros(2 * n + m + q, 2 * n + m + q);
    g.set_block(0, 0, p);
    g.set_block(0, n, &pa);
    g.set_block(0, 2 * n, &pb);
    g.set_block(n, 0, &pa.t());
    g.set_block(n, n, p);
    g.set_block(n, 2 * n + m, &sys.c.t());
    g.set_block(2 * n, 0, &pb.t());
    g.set_block(2 * n, 2 * n, &Matrix::scaled_identity(m, gamma));
    g.set_block(2 * n, 2 * n + m, &sys.d.t());
    g.set_block(2 * n + m, n, &sys.c);
    g.set_block(2 * n + m, 2 * n, &sys.d);
    g.set_block(2 * n + m, 2 * n + m, &Matrix::scaled_identity(q, gamma));
    g
}

/// True iff the four-block gain LMI is positive definite beyond `margin`
/// (smallest eigenvalue strictly greater than `margin`).
pub fn bounded_real_check_strict(
    sys: &LtiSystem,
    p: &Matrix,
    gamma: f64,
    margin: f64,
) -> Result<bool, LtiError> {
    check_certificate_inputs(sys, p, gamma)?;
    let g = gain_lmi_four_block(sys, &p.symmetrize(), gamma);
    Ok(sym_eig(&g.symmetrize(), JACOBI_TOL)?.min_eig() > margin)
}

/// Doubling-based spectral radius estimate: repeatedly squares `A` and tracks
/// the Frobenius norm. Returns `(rho_estimate, is_schur_stable)`.
pub fn spectral_radius_estimate(a: &Matrix) -> (f64, bool) {
    let mut m = a.clone();
    let mut log_scale = 0.0f64; // accumulated log of factored-out norms
    let mut exponent = 1u64;
    for _ in 0..60 {
        let norm = m.frobenius();
        if norm == 0.0 {
            return (0.0, true);
        }
        let rho_bound = norm.ln() / exponent as f64 + log_scale / exponent as f64;
        if rho_bound < -40.0 {
            return (rho_bound.exp(), true);
        }
        if rho_bound > 40.0 {
            return (rho_bound.exp(), false);
        }
        // Factor out the norm to keep the squaring well-scaled.
        let inv = 1.0 / norm;
        m = m.scale(inv);
        log_scale = 2.0 * (log_scale + norm.ln());
        m = m.mul(&m);
        exponent *= 2;
    }
    let norm = m.frobenius().max(1e-300);
    let rho = ((norm.ln() + log_scale) / exponent as f64).exp();
    (rho, rho < 1.0 - HINF_STABILITY_MARGIN)
}

/// Largest transfer-matrix singular value at `z = e^{i w}`, computed through
/// the real 2n-dimensional embedding of the resolvent. Returns the singular
/// value and the right singular vector for warm-starting neighbors.
fn transfer_sigma(
    sys: &LtiSystem,
    w: f64,
    warm: Option<&[f64]>,
) -> Result<(f64, Vec<f64>), LtiError> {
    let n = sys.state_dim();
    let (nu, nz) = (sys.input_dim(), sys.output_dim());
    let (cw, sw) = (w.cos(), w.sin());
    // E = [[cos w I - A, -sin w I], [sin w I, cos w I - A]]
    let mut e = Matrix::zeros(2 * n, 2 * n);
    for i in 0..n {
        for j in 0..n {
            let v = -sys.a[(i, j)];
            e[(i, j)] = v;
            e[(n + i, n + j)] = v;
        }
        e[(i, i)] += cw;
        e[(n + i, n + i)] += cw;
        e[(i, n + i)] = -sw;
        e[(n + i, i)] = sw;
    }
    let mut rhs = Matrix::zeros(2 * n, nu);
    rhs.set_block(0, 0, &sys.b);
    let x = lu_factor(&e)?.solve_mat(&rhs);
    let xr = x.block(0, 0, n, nu);
    let xi = x.block(n, 0, n, nu);
    let gr = sys.d.add(&sys.c.mul(&xr));
    let gi = sys.c.mul(&xi);
    // Real embedding [[Re, -Im], [Im, Re]] shares its singular values with G.
    let mut g = Matrix::zeros(2 * nz, 2 * nu);
    g.set_block(0, 0, &gr);
    g.set_block(0, nu, &gi.neg());
    g.set_block(nz, 0, &gi);
    g.set_block(nz, nu, &gr);
    let data = spectral_norm_detailed(&g, SPECTRAL_TOL, SPECTRAL_MAX_ITERS, warm)?;
    Ok((data.sigma, data.v))
}

/// H-infinity norm of a Schur-stable system: supremum over frequencies of the
/// largest transfer-matrix singular value.
///
/// A dense sweep over `[0, pi]` (grid of [`HINF_GRID_POINTS`], densified when
/// the spectral radius approaches one) brackets the peaks; the best brackets
/// are polished by golden-section search. Power iteration is warm-started
/// along the grid. For an independent estimate of the same quantity see
/// [`gain_lmi_bisection`].
pub fn hinf_norm(sys: &LtiSystem, tol: f64) -> Result<f64, LtiError> {
    let (rho, stable) = spectral_radius_estimate(&sys.a);
    if !stable {
        return Err(LtiError::Unstable { rho });
    }
    let mut grid = HINF_GRID_POINTS;
    if rho > 0.995 {
        let need = (8.0 * std::f64::consts::PI / (1.0 - rho).max(1e-7)) as usize;
        grid = need.clamp(HINF_GRID_POINTS, 1 << 16);
    }

    let mut sigmas = Vec::with_capacity(grid);
    let mut warm: Option<Vec<f64>> = None;
    for k in 0..grid {
        let w = std::f64::consts::PI * k as f64 / (grid - 1) as f64;
        let (s, v) = transfer_sigma(sys, w, warm.as_deref())?;
        sigmas.push(s);
        warm = Some(v);
    }

    // Candidate peaks: local maxima of the sampled response.
    let mut peaks: Vec<usize> = (0..grid)
        .filter(|&k| {
            (k == 0 || sigmas[k] >= sigmas[k - 1]) && (k + 1 == grid || sigmas[k] >= sigmas[k + 1])
        })
        .collect();
    peaks.sort_by(|&i, &j| sigmas[j].partial_cmp(&sigmas[i]).unwrap());
    peaks.truncate(3);

    let golden = |mut lo: f64, mut hi: f64| -> Result<f64, LtiError> {
        const INV_PHI: f64 = 0.618_033_988_749_894_9;
        let mut best = 0.0f64;
        let mut x1 = hi - INV_PHI * (hi - lo);
        let mut x2 = lo + INV_PHI * (hi - lo);
        let mut f1 = transfer_sigma(sys, x1, None)?.0;
        let mut f2 = transfer_sigma(sys, x2, None)?.0;
        for _ in 0..80 {
            best = best.max(f1).max(f2);
            if (hi - lo) < 1e-10 + 0.25 * tol.max(1e-12) * (lo.abs() + hi.abs()) {
                break;
            }
            if f1 < f2 {
                lo = x1;
                x1 = x2;
                f1 = f2;
                x2 = lo + INV_PHI * (hi - lo);
                f2 = transfer_sigma(sys, x2, None)?.0;
            } else {
                hi = x2;
                x2 = x1;
                f2 = f1;
                x1 = hi - INV_PHI * (hi - lo);
                f1 = transfer_sigma(sys, x1, None)?.0;
            }
        }
        Ok(best)
    };

    let step = std::f64::consts::PI / (grid - 1) as f64;
    let mut best = sigmas.iter().cloned().fold(0.0f64, f64::max);
    for &k in &peaks {
        let lo = if k == 0 { 0.0 } else { (k - 1) as f64 * step };
        let hi = ((k + 1).min(grid - 1)) as f64 * step;
        best = best.max(golden(lo, hi)?);
    }
    Ok(best)
}

enum Probe {
    Feasible(Matrix),
    Infeasible,
    Inconclusive,
}

/// Fixed-point iteration on the bounded-real Riccati map. Converges to the
/// minimal storage-like solution when `gamma` exceeds the true gain; loses
/// positive definiteness of the slack term or diverges when it does not.
///
/// `state_shift` adds `shift * I` to the state-cost term `C'C`, equivalent to
/// appending scaled identity output rows. The fixed point then certifies the
/// original system strictly (the two-block residual gains a `-shift I` state
/// block) instead of sitting on the feasibility boundary.
fn riccati_probe(
    sys: &LtiSystem,
    gamma: f64,
    state_shift: f64,
    warm: Option<&Matrix>,
    max_iters: usize,
) -> Probe {
    let n = sys.state_dim();
    let ctc = sys.c.tr_mul(&sys.c).add_scaled_identity(state_shift);
    let dtd = sys.d.tr_mul(&sys.d);
    let slack0 = dtd
        .neg()
        .add_scaled_identity(gamma * gamma);
    let mut p = match warm {
        Some(w) => {
            // Warm start is only sound if the slack term stays definite.
            let w_slack = slack0.sub(&sys.b.tr_mul(&w.mul(&sys.b)));
            if crate::numerics::cholesky(&w_slack.symmetrize()).is_ok() {
                w.clone()
            } else {
                Matrix::zeros(n, n)
            }
        }
        None => Matrix::zeros(n, n),
    };
    for _ in 0..max_iters {
        let pb = p.mul(&sys.b);
        let pa = p.mul(&sys.a);
        let slack = slack0.sub(&sys.b.tr_mul(&pb)).symmetrize();
        if crate::numerics::cholesky(&slack).is_err() {
            return Probe::Infeasible;
        }
        // P' = A'PA + C'C + M W^{-1} M'  with  M = A'PB + C'D.
        let m = sys.a.tr_mul(&pb).add(&sys.c.tr_mul(&sys.d));
        let w_inv_mt = match crate::numerics::solve(&slack, &m.t()) {
            Ok(x) => x,
            Err(_) => return Probe::Infeasible,
        };
        let p_next = sys
            .a
            .tr_mul(&pa)
            .add(&ctc)
            .add(&m.mul(&w_inv_mt))
            .symmetrize();
        let scale = p_next.max_abs_val().max(1.0);
        if scale > 1e13 {
            return Probe::Infeasible;
        }
        let diff = p_next.sub(&p).max_abs_val();
        p = p_next;
        if diff <= 1e-13 * scale {
            return Probe::Feasible(p);
        }
    }
    Probe::Inconclusive
}

/// Storage matrix certifying `gamma` in the two-block form, or `None` when
/// the probe shows infeasibility.
///
/// The plain Riccati fixed point sits exactly on the feasibility boundary
/// (largest residual eigenvalue zero), so the probe is run with a small
/// state-cost shift, which turns the fixed point into a strictly feasible
/// certificate. Progressively smaller shifts are tried so that levels barely
/// above the true gain still yield a certificate.
pub fn bounded_real_storage(sys: &LtiSystem, gamma: f64) -> Result<Option<Matrix>, LtiError> {
    if gamma <= 0.0 || !gamma.is_finite() {
        return Err(LtiError::InvalidGamma(gamma));
    }
    let (rho, stable) = spectral_radius_estimate(&sys.a);
    if !stable {
        return Err(LtiError::Unstable { rho });
    }
    let scale = gamma * gamma;
    for shift_frac in [1e-4, 1e-8, 1e-12, 0.0] {
        if let Probe::Feasible(p) =
            riccati_probe(sys, gamma, shift_frac * scale, None, 30_000)
        {
            return Ok(Some(p));
        }
    }
    Ok(None)
}

/// L2 gain by bisection on the Riccati feasibility probe; independent of the
/// frequency sweep in [`hinf_norm`]. Returns a value within `rel_tol`
/// (relative) above the infimum of certifiable gains.
pub fn gain_lmi_bisection(sys: &LtiSystem, rel_tol: f64) -> Result<f64, LtiError> {
    let (rho, stable) = spectral_radius_estimate(&sys.a);
    if !stable {
        return Err(LtiError::Unstable { rho });
    }
    let rel_tol = rel_tol.clamp(1e-9, 0.1);
    // Known lower bounds: the response at the endpoints and the feed-through.
    let mut lo = transfer_sigma(sys, 0.0, None)?
        .0
        .max(transfer_sigma(sys, std::f64::consts::PI, None)?.0)
        .max(spectral_norm_detailed(&sys.d, SPECTRAL_TOL, SPECTRAL_MAX_ITERS, None)?.sigma);
    lo = lo.max(1e-12);

    let mut hi = (2.0 * lo).max(1e-6);
    let mut warm: Option<Matrix> = None;
    let mut doublings = 0;
    loop {
        match riccati_probe(sys, hi, 0.0, warm.as_ref(), 30_000) {
            Probe::Feasible(p) => {
                warm = Some(p);
                break;
            }
            _ => {
                hi *= 2.0;
                doublings += 1;
                if doublings > 80 {
                    return Err(LtiError::Numerics(NumericsError::Convergence {
                        iterations: doublings,
                        last: hi,
                    }));
                }
            }
        }
    }
    while hi - lo > rel_tol * hi {
        let mid = 0.5 * (hi + lo);
        match riccati_probe(sys, mid, 0.0, warm.as_ref(), 30_000) {
            Probe::Feasible(p) => {
                warm = Some(p);
                hi = mid;
            }
            // Treat an inconclusive probe as infeasible: the result stays a
            // certified upper bound.
            _ => lo = mid,
        }
    }
    Ok(hi)
}

/// Ratio of output to input signal energy, `||y||_2 / ||u||_2`.
pub fn gain_ratio(y: &Trajectory, u: &Trajectory) -> Result<f64, LtiError> {
    let un = u.norm2();
    if un == 0.0 {
        return Err(LtiError::ZeroInput);
    }
    Ok(y.norm2() / un)
}

/// Empirical gain ratio of a system on one input, from zero initial state.
pub fn trajectory_gain_ratio(sys: &LtiSystem, u: &Trajectory) -> Result<f64, LtiError> {
    let y = simulate_recursive(sys, u, None)?;
    gain_ratio(&y, u)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::prelude::*;
    use rand_chacha::ChaCha12Rng;

    fn mat(rows: usize, cols: usize, data: &[f64]) -> Matrix {
        Matrix::new(rows, cols, data.to_vec()).unwrap()
    }

    fn scalar_lag() -> LtiSystem {
        // h+ = 0.5 h + u, z = h: transfer 1/(z - 0.5), peak 2 at z = 1.
        LtiSystem::new(
            mat(1, 1, &[0.5]),
            mat(1, 1, &[1.0]),
            mat(1, 1, &[1.0]),
            mat(1, 1, &[0.0]),
        )
        .unwrap()
    }

    fn rand_stable(rng: &mut ChaCha12Rng, n: usize, nu: usize, nz: usize, rho: f64) -> LtiSystem {
        let draw = |rng: &mut ChaCha12Rng, r: usize, c: usize| {
            Matrix::new(
                r,
                c,
                (0..r * c)
                    .map(|_| rng.sample::<f64, _>(rand_distr_standard()))
                    .collect(),
            )
            .unwrap()
        };
        let mut a = draw(rng, n, n);
        let (cur, _) = spectral_radius_estimate(&a);
        a = a.scale(rho / cur.max(1e-9));
        LtiSystem::new(a, draw(rng, n, nu), draw(rng, nz, n), draw(rng, nz, nu)).unwrap()
    }

    /// Standard normal via Box-Muller over the unit draw (keeps the test free
    /// of distribution crates).
    struct StdNormal;
    fn rand_distr_standard() -> StdNormal {
        StdNormal
    }
    impl rand::distributions::Distribution<f64> for StdNormal {
        fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
            let u1: f64 = rng.gen_range(f64::EPSILON..1.0);
            let u2: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
            (-2.0 * u1.ln()).sqrt() * u2.cos()
        }
    }

    #[test]
    fn impulse_response_of_scalar_lag() {
        let sys = scalar_lag();
        let mut u = Trajectory::zeros(1, 6);
        u.sample_mut(0)[0] = 1.0;
        let y = simulate_recursive(&sys, &u, None).unwrap();
        // Hand recursion: y = [0, 1, 0.5, 0.25, 0.125, 0.0625].
        let expect = [0.0, 1.0, 0.5, 0.25, 0.125, 0.0625];
        for (k, e) in expect.iter().enumerate() {
            assert!((y.sample(k)[0] - e).abs() < 1e-15);
        }
    }

    #[test]
    fn initial_state_is_respected() {
        let sys = scalar_lag();
        let u = Trajectory::zeros(1, 3);
        let y = simulate_recursive(&sys, &u, Some(&[2.0])).unwrap();
        assert_eq!(y.sample(0)[0], 2.0);
        assert_eq!(y.sample(1)[0], 1.0);
        assert_eq!(y.sample(2)[0], 0.5);
    }

    #[test]
    fn hinf_of_scalar_lag_is_two() {
        let sys = scalar_lag();
        let g = hinf_norm(&sys, 1e-8).unwrap();
        assert!((g - 2.0).abs() < 1e-6, "got {g}");
        let g2 = gain_lmi_bisection(&sys, 1e-6).unwrap();
        assert!((g2 - 2.0).abs() < 2e-5, "got {g2}");
    }

    #[test]
    fn hinf_of_feedthrough_is_sigma_d() {
        let sys = LtiSystem::new(
            mat(1, 1, &[0.0]),
            mat(1, 2, &[0.0, 0.0]),
            mat(2, 1, &[0.0, 0.0]),
            mat(2, 2, &[3.0, 0.0, 0.0, 1.0]),
        )
        .unwrap();
        assert!((hinf_norm(&sys, 1e-8).unwrap() - 3.0).abs() < 1e-8);
    }

    #[test]
    fn hinf_matches_independent_dense_complex_evaluation() {
        // Oracle: direct complex-arithmetic evaluation of the transfer matrix
        // on a fine grid, written without the production resolvent path.
        let mut rng = ChaCha12Rng::seed_from_u64(7);
        let sys = rand_stable(&mut rng, 3, 1, 1, 0.85);
        let oracle = {
            let n = 3;
            let mut best = 0.0f64;
            for k in 0..200_001 {
                let w = std::f64::consts::PI * k as f64 / 200_000.0;
                // (zI - A) x = b solved by explicit 3x3 complex Gaussian elimination.
                let mut m = [[(0.0f64, 0.0f64); 3]; 3];
                for i in 0..n {
                    for j in 0..n {
                        m[i][j] = (-sys.a[(i, j)], 0.0);
                    }
                    m[i][i].0 += w.cos();
                    m[i][i].1 += w.sin();
                }
                let mut x = [(0.0, 0.0); 3];
                for i in 0..n {
                    x[i] = (sys.b[(i, 0)], 0.0);
                }
                // Forward elimination without pivoting (diagonally dominant here).
                for col in 0..n {
                    for row in (col + 1)..n {
                        let (pr, pi) = m[col][col];
                        let den = pr * pr + pi * pi;
                        let (nr, ni) = m[row][col];
                        let f = ((nr * pr + ni * pi) / den, (ni * pr - nr * pi) / den);
                        for j in col..n {
                            m[row][j].0 -= f.0 * m[col][j].0 - f.1 * m[col][j].1;
                            m[row][j].1 -= f.0 * m[col][j].1 + f.1 * m[col][j].0;
                        }
                        x[row].0 -= f.0 * x[col].0 - f.1 * x[col].1;
                        x[row].1 -= f.0 * x[col].1 + f.1 * x[col].0;
                    }
                }
                for row in (0..n).rev() {
                    for j in (row + 1)..n {
                        x[row].0 -= m[row][j].0 * x[j].0 - m[row][j].1 * x[j].1;
                        x[row].1 -= m[row][j].0 * x[j].1 + m[row][j].1 * x[j].0;
                    }
                    let (pr, pi) = m[row][row];
                    let den = pr * pr + pi * pi;
                    let (xr, xi) = x[row];
                    x[row] = ((xr * pr + xi * pi) / den, (xi * pr - xr * pi) / den);
                }
                let mut g = (sys.d[(0, 0)], 0.0);
                for j in 0..n {
                    g.0 += sys.c[(0, j)] * x[j].0;
                    g.1 += sys.c[(0, j)] * x[j].1;
                }
                best = best.max((g.0 * g.0 + g.1 * g.1).sqrt());
            }
            best
        };
        let fast = hinf_norm(&sys, 1e-9).unwrap();
        assert!(
            (fast - oracle).abs() <= 1e-5 * oracle.max(1.0),
            "sweep {fast} vs oracle {oracle}"
        );
    }

    #[test]
    fn unstable_system_is_rejected() {
        let sys = LtiSystem::new(
            mat(1, 1, &[1.1]),
            mat(1, 1, &[1.0]),
            mat(1, 1, &[1.0]),
            mat(1, 1, &[0.0]),
        )
        .unwrap();
        assert!(matches!(
            hinf_norm(&sys, 1e-6),
            Err(LtiError::Unstable { .. })
        ));
        // Unit spectral radius counts as unstable too.
        let rot = LtiSystem::new(
            mat(2, 2, &[0.0, -1.0, 1.0, 0.0]),
            mat(2, 1, &[1.0, 0.0]),
            mat(1, 2, &[1.0, 0.0]),
            mat(1, 1, &[0.0]),
        )
        .unwrap();
        assert!(matches!(
            hinf_norm(&rot, 1e-6),
            Err(LtiError::Unstable { .. })
        ));
    }

    #[test]
    fn riccati_storage_certifies_feasible_levels_only() {
        let sys = scalar_lag();
        // Feasible strictly above the true gain of 2. The four-block form
        // takes the two-block certificate divided by the level.
        let p = bounded_real_storage(&sys, 2.5).unwrap().unwrap();
        assert!(bounded_real_residual(&sys, &p, 2.5).unwrap() < 0.0);
        assert!(bounded_real_check_strict(&sys, &p.scale(1.0 / 2.5), 2.5, 0.0).unwrap());
        // Infeasible below it.
        assert!(bounded_real_storage(&sys, 1.5).unwrap().is_none());
    }

    #[test]
    fn two_lmi_forms_agree_on_random_certificates() {
        let mut rng = ChaCha12Rng::seed_from_u64(42);
        for trial in 0..40 {
            let sys = rand_stable(&mut rng, 3, 2, 2, 0.7);
            let gamma = gain_lmi_bisection(&sys, 1e-4).unwrap();
            // A comfortably feasible level: the certificate exists and both
            // forms accept it (with the storage rescaled between forms).
            let level = gamma * 1.2;
            let p = bounded_real_storage(&sys, level).unwrap().unwrap_or_else(|| {
                panic!("trial {trial}: storage missing at feasible level")
            });
            let r5 = bounded_real_residual(&sys, &p, level).unwrap();
            assert!(r5 < 0.0, "trial {trial}: two-block residual {r5}");
            let ok6 =
                bounded_real_check_strict(&sys, &p.scale(1.0 / level), level, 0.0).unwrap();
            assert!(ok6, "trial {trial}: four-block form rejected the certificate");
            // Well below the estimated gain no certificate can exist.
            let r_bad = bounded_real_residual(&sys, &p, gamma * 0.5).unwrap();
            assert!(r_bad > 0.0, "trial {trial}: residual {r_bad} at infeasible level");
        }
    }

    #[test]
    fn scan_matches_recursive_on_block_diagonal_systems() {
        let mut rng = ChaCha12Rng::seed_from_u64(3);
        for _ in 0..10 {
            let n = 6;
            let mut a = Matrix::zeros(n, n);
            // Three rotation-scaling blocks.
            for b in 0..3 {
                let r = rng.gen_range(0.3..0.95);
                let phi = rng.gen_range(0.0..std::f64::consts::PI);
                let (s, c) = phi.sin_cos();
                let i = 2 * b;
                a[(i, i)] = r * c;
                a[(i, i + 1)] = -r * s;
                a[(i + 1, i)] = r * s;
                a[(i + 1, i + 1)] = r * c;
            }
            let draw = |rng: &mut ChaCha12Rng, r: usize, c: usize| {
                Matrix::new(r, c, (0..r * c).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
            };
            let sys = LtiSystem::new(
                a,
                draw(&mut rng, n, 2),
                draw(&mut rng, 2, n),
                draw(&mut rng, 2, 2),
            )
            .unwrap();
            let u = Trajectory::from_flat(
                2,
                (0..2 * 700).map(|_| rng.gen_range(-1.0..1.0)).collect(),
            )
            .unwrap();
            let y_ref = simulate_recursive(&sys, &u, None).unwrap();
            let y_scan = simulate_scan(&sys, &u).unwrap();
            let worst = y_ref
                .as_flat()
                .iter()
                .zip(y_scan.as_flat())
                .map(|(a, b)| (a - b).abs())
                .fold(0.0f64, f64::max);
            assert!(worst < 1e-12, "scan deviates by {worst}");
        }
    }

    #[test]
    fn scan_rejects_unstructured_state_matrix() {
        let a = mat(3, 3, &[0.5, 0.0, 0.1, 0.0, 0.4, 0.0, 0.0, 0.0, 0.3]);
        let sys = LtiSystem::new(
            a,
            mat(3, 1, &[1.0, 1.0, 1.0]),
            mat(1, 3, &[1.0, 0.0, 0.0]),
            mat(1, 1, &[0.0]),
        )
        .unwrap();
        let u = Trajectory::zeros(1, 4);
        assert!(matches!(
            simulate_scan(&sys, &u),
            Err(LtiError::Structure { row: 0, col: 2 })
        ));
    }

    #[test]
    fn gain_ratio_requires_nonzero_input() {
        let u = Trajectory::zeros(1, 5);
        let y = Trajectory::zeros(1, 5);
        assert!(matches!(gain_ratio(&y, &u), Err(LtiError::ZeroInput)));
    }

    #[test]
    fn unit_delay_simulation_and_gain() {
        let sys = LtiSystem::new(
            mat(1, 1, &[0.0]),
            mat(1, 1, &[1.0]),
            mat(1, 1, &[1.0]),
            mat(1, 1, &[0.0]),
        )
        .unwrap();
        let u = Trajectory::from_rows(&[vec![1.0], vec![0.0], vec![0.0]]).unwrap();
        let z = simulate_recursive(&sys, &u, None).unwrap();
        assert_eq!(z.as_flat(), &[0.0, 1.0, 0.0]);
        // All-pass: unit response at every frequency.
        assert!((hinf_norm(&sys, 1e-8).unwrap() - 1.0).abs() < 1e-9);
        // Finite-horizon truncation cannot exceed the gain.
        let mut rng = ChaCha12Rng::seed_from_u64(11);
        let ur = Trajectory::from_flat(1, (0..50).map(|_| rng.gen_range(-1.0..1.0)).collect())
            .unwrap();
        assert!(trajectory_gain_ratio(&sys, &ur).unwrap() <= 1.0 + 1e-12);
    }

    #[test]
    fn feedthrough_identity_passes_input_through() {
        let sys = LtiSystem::new(
            Matrix::zeros(1, 1),
            Matrix::zeros(1, 2),
            Matrix::zeros(2, 1),
            Matrix::scaled_identity(2, 1.0),
        )
        .unwrap();
        let mut rng = ChaCha12Rng::seed_from_u64(5);
        let u = Trajectory::from_flat(2, (0..40).map(|_| rng.gen_range(-2.0..2.0)).collect())
            .unwrap();
        let z = simulate_recursive(&sys, &u, None).unwrap();
        assert_eq!(z.as_flat(), u.as_flat());
        assert!((trajectory_gain_ratio(&sys, &u).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn residual_hand_values() {
        // A=[0.5], B=C=D=0, P=[1], gamma=1: the two-block matrix is
        // diag(0.25 - 1, -1) so the largest eigenvalue is -0.75.
        let sys = LtiSystem::new(
            mat(1, 1, &[0.5]),
            mat(1, 1, &[0.0]),
            mat(1, 1, &[0.0]),
            mat(1, 1, &[0.0]),
        )
        .unwrap();
        let p = Matrix::scaled_identity(1, 1.0);
        let r = bounded_real_residual(&sys, &p, 1.0).unwrap();
        assert!((r + 0.75).abs() < 1e-12, "got {r}");
        // Degenerate A=0 case: diag(-1, -1).
        let sys0 = LtiSystem::new(
            mat(1, 1, &[0.0]),
            mat(1, 1, &[0.0]),
            mat(1, 1, &[0.0]),
            mat(1, 1, &[0.0]),
        )
        .unwrap();
        let r0 = bounded_real_residual(&sys0, &p, 1.0).unwrap();
        assert!((r0 + 1.0).abs() < 1e-12, "got {r0}");
        // Non-positive levels are rejected.
        assert!(matches!(
            bounded_real_residual(&sys, &p, 0.0),
            Err(LtiError::InvalidGamma(_))
        ));
        // At gamma=1 the same storage works in the four-block form.
        assert!(bounded_real_check_strict(&sys, &p, 1.0, 1e-9).unwrap());
        // An indefinite storage matrix fails the four-block check.
        let neg = Matrix::scaled_identity(1, -1.0);
        assert!(!bounded_real_check_strict(&sys, &neg, 1.0, 0.0).unwrap());
    }

    #[test]
    fn cross_form_equivalence_on_random_draws() {
        // (system, storage, level) triples: the two-block residual is
        // negative exactly when the four-block form with storage P/gamma is
        // positive definite (requiring P > 0), away from the boundary.
        let mut rng = ChaCha12Rng::seed_from_u64(21);
        let mut feasible = 0;
        let mut infeasible = 0;
        let mut check = |sys: &LtiSystem, p: &Matrix, gamma: f64| {
            let r5 = bounded_real_residual(sys, p, gamma).unwrap();
            if r5.abs() < 1e-9 {
                return; // boundary: sign not meaningful
            }
            let ok6 = bounded_real_check_strict(sys, &p.scale(1.0 / gamma), gamma, 0.0).unwrap();
            assert_eq!(r5 < 0.0, ok6, "residual {r5} vs strict {ok6}");
            if ok6 {
                feasible += 1;
            } else {
                infeasible += 1;
            }
        };
        // Random storage candidates: almost always infeasible.
        for _ in 0..170 {
            let rho = rng.gen_range(0.3..0.9);
            let sys = rand_stable(&mut rng, 3, 2, 2, rho);
            let g = Matrix::new(3, 3, (0..9).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap();
            let p = g
                .mul(&g.t())
                .add_scaled_identity(rng.gen_range(0.01..0.5))
                .scale(rng.gen_range(0.1..5.0));
            let gamma = rng.gen_range(0.2..6.0);
            check(&sys, &p, gamma);
        }
        // Genuine certificates: feasible, both at their own level and at a
        // looser one (relaxing the level preserves strict feasibility).
        for _ in 0..15 {
            let sys = rand_stable(&mut rng, 3, 2, 2, 0.7);
            let gamma = 1.2 * gain_lmi_bisection(&sys, 1e-3).unwrap();
            let p = bounded_real_storage(&sys, gamma).unwrap().unwrap();
            check(&sys, &p, gamma);
            check(&sys, &p, 1.5 * gamma);
        }
        assert!(
            feasible >= 25 && infeasible >= 100,
            "unbalanced coverage: {feasible} feasible, {infeasible} infeasible"
        );
    }

    #[test]
    fn empirical_gain_never_exceeds_hinf() {
        let mut rng = ChaCha12Rng::seed_from_u64(60);
        for _ in 0..10 {
            let sys = rand_stable(&mut rng, 4, 2, 2, 0.85);
            let gamma = hinf_norm(&sys, 1e-7).unwrap();
            let u = Trajectory::from_flat(
                2,
                (0..2 * 800).map(|_| rng.gen_range(-1.0..1.0)).collect(),
            )
            .unwrap();
            let ratio = trajectory_gain_ratio(&sys, &u).unwrap();
            assert!(ratio <= gamma * (1.0 + 1e-7), "ratio {ratio} > gain {gamma}");
        }
    }

    #[test]
    fn certificate_accessors_and_serde() {
        let sys = scalar_lag();
        let p = bounded_real_storage(&sys, 2.5).unwrap().unwrap();
        let cert = GainCertificate { p, gamma: 2.5 };
        assert!(cert.residual(&sys).unwrap() < 0.0);
        assert!(
            bounded_real_check_strict(&sys, &cert.four_block_storage(), cert.gamma, 0.0)
                .unwrap()
        );
        let text = serde_json::to_string(&cert).unwrap();
        let back: GainCertificate = serde_json::from_str(&text).unwrap();
        assert_eq!(cert, back);
    }

    #[test]
    fn sweep_and_bisection_agree_on_random_systems() {
        let mut rng = ChaCha12Rng::seed_from_u64(99);
        for _ in 0..5 {
            let sys = rand_stable(&mut rng, 4, 2, 3, 0.8);
            let sweep = hinf_norm(&sys, 1e-8).unwrap();
            let lmi = gain_lmi_bisection(&sys, 1e-5).unwrap();
            assert!(
                (sweep - lmi).abs() <= 1e-4 * sweep.max(lmi),
                "sweep {sweep} vs lmi {lmi}"
            );
        }
    }

    #[test]
    fn system_json_round_trip() {
        let sys = scalar_lag();
        let text = serde_json::to_string(&sys).unwrap();
        assert!(text.contains("\"A\""));
        let back: LtiSystem = serde_json::from_str(&text).unwrap();
        assert_eq!(sys, back.validated().unwrap());
    }

    #[test]
    fn dimension_validation_on_parse() {
        let bad = r#"{"A": [[0.5]], "B": [[1.0],[0.0]], "C": [[1.0]], "D": [[0.0]]}"#;
        let parsed: LtiSystem = serde_json::from_str(bad).unwrap();
        assert!(parsed.validated().is_err());
    }
}
