//! Free parametrization of (possibly non-square) systems with a prescribed
//! L2-gain bound and a block-diagonal state matrix, written over a generic
//! scalar so the same construction serves inference and training.
//!
//! Eigenvalues are represented directly by log-modulus and log-phase
//! parameters and realized as real 2x2 rotation-scaling blocks, which keeps
//! every matrix real, lets [`crate::lti::simulate_scan`] exploit the
//! structure, and makes modulus/phase initialization exact. The input/output
//! couplings are normalized so that a block-Gershgorin-style sufficient
//! condition for the four-block gain LMI holds by construction; the
//! condition is conservative (not complete), but the feed-through scaling
//! keeps realized gains close to the bound.
//!
//! Construction summary, with `P = A'A + eps I` diagonal:
//!
//! ```text
//! Gamma = [[P,   PA,  PB,  0 ],
//!          [A'P, P,   0,   C'],
//!          [B'P, 0,   gI,  D'],
//!          [0,   C,   D,   gI]]   must be positive definite.
//! ```
//!
//! The masked free block supplies `PB` and `C'` directly; dividing it by
//! `eta = max(1, (1+margin) max(||G11^-1 G12||, ||G12 G22^-1||))` forces the
//! coupling norms under 1, which is sufficient for `Gamma > 0` (Schur
//! complement bounded by the product of the two norms). Every construction
//! is re-verified numerically; on failure the coupling is halved and
//! retried, which monotonically enlarges the margin.

use crate::lti::{bounded_real_check_strict, GainCertificate, LtiSystem, SysMats};
use crate::numerics::{
    lu_factor, Mat, NumericsError, Scalar, SPECTRAL_MAX_ITERS, SPECTRAL_TOL,
};
use rand::Rng;
use serde::{Deserialize, Serialize};

/// Default regularizer: appears in the storage diagonal and in the
/// feed-through scaling denominator.
pub const DEFAULT_EPS: f64 = 1e-3;
/// Default multiplicative margin turning the coupling-norm bound strict.
pub const DEFAULT_EPS_MARGIN: f64 = 1e-6;
/// Maximum number of coupling halvings before giving up.
pub const MAX_SHRINKS: usize = 60;
/// Smallest realized phase; keeps the stored log-phase finite (and thus JSON
/// serializable) while being indistinguishable from zero in the rotation.
pub const PHASE_FLOOR: f64 = 1e-300;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum KappaError {
    #[error("gain bound must be positive, got {0}")]
    InvalidGamma(f64),
    #[error("inconsistent parameter shapes: {0}")]
    Dimension(String),
    #[error("invalid eigenvalue ranges: {0}")]
    InvalidRanges(String),
    #[error(
        "construction failed verification after {shrinks} coupling halvings; \
         this indicates a bug in the normalization"
    )]
    Construction { shrinks: usize },
    #[error(transparent)]
    Numerics(#[from] NumericsError),
}

/// Modulus/phase windows for eigenvalue sampling.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EigenInitRanges {
    pub r_min: f64,
    pub r_max: f64,
    pub phase_min: f64,
    pub phase_max: f64,
}

impl EigenInitRanges {
    pub fn validated(self) -> Result<Self, KappaError> {
        let ok_r = 0.0 <= self.r_min && self.r_min <= self.r_max && self.r_max < 1.0;
        let ok_p = 0.0 <= self.phase_min
            && self.phase_min <= self.phase_max
            && self.phase_max < std::f64::consts::PI;
        if !ok_r {
            return Err(KappaError::InvalidRanges(format!(
                "moduli must satisfy 0 <= r_min <= r_max < 1, got [{}, {}]",
                self.r_min, self.r_max
            )));
        }
        if !ok_p {
            return Err(KappaError::InvalidRanges(format!(
                "phases must satisfy 0 <= phase_min <= phase_max < pi, got [{}, {}]",
                self.phase_min, self.phase_max
            )));
        }
        Ok(self)
    }
}

/// Unconstrained parameters. The state dimension is `2 * mu.len()`
/// (eigenvalues come in conjugate pairs realized as 2x2 blocks); `d_til` is
/// `n_z x n_d`; `y_bar` is `2 n_h x (n_d + n_z)`. `eps` and `eps_margin` are
/// fixed hyperparameters of the construction, not tuned quantities.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(bound(
    serialize = "S: Serialize",
    deserialize = "S: serde::de::DeserializeOwned, Mat<S>: serde::de::DeserializeOwned"
))]
pub struct KappaFreeParams<S> {
    pub mu: Vec<S>,
    pub theta: Vec<S>,
    pub d_til: Mat<S>,
    pub y_bar: Mat<S>,
    pub eps: f64,
    pub eps_margin: f64,
}

impl<S: Scalar> KappaFreeParams<S> {
    pub fn validated(self) -> Result<Self, KappaError> {
        if self.mu.len() != self.theta.len() {
            return Err(KappaError::Dimension(format!(
                "mu has {} entries, theta has {}",
                self.mu.len(),
                self.theta.len()
            )));
        }
        if self.mu.is_empty() {
            return Err(KappaError::Dimension("state dimension is zero".into()));
        }
        let n_h = 2 * self.mu.len();
        let (n_z, n_d) = (self.d_til.rows(), self.d_til.cols());
        if self.y_bar.rows() != 2 * n_h || self.y_bar.cols() != n_d + n_z {
            return Err(KappaError::Dimension(format!(
                "coupling block is {}x{}, expected {}x{}",
                self.y_bar.rows(),
                self.y_bar.cols(),
                2 * n_h,
                n_d + n_z
            )));
        }
        if !(self.eps > 0.0) || !(self.eps_margin > 0.0) {
            return Err(KappaError::Dimension(
                "eps and eps_margin must be positive".into(),
            ));
        }
        Ok(self)
    }

    pub fn state_dim(&self) -> usize {
        2 * self.mu.len()
    }
    pub fn input_dim(&self) -> usize {
        self.d_til.cols()
    }
    pub fn output_dim(&self) -> usize {
        self.d_til.rows()
    }

    pub fn value_params(&self) -> KappaFreeParams<f64> {
        KappaFreeParams {
            mu: self.mu.iter().map(|v| v.val()).collect(),
            theta: self.theta.iter().map(|v| v.val()).collect(),
            d_til: self.d_til.value_matrix(),
            y_bar: self.y_bar.value_matrix(),
            eps: self.eps,
            eps_margin: self.eps_margin,
        }
    }
}

/// A realized system with its (diagonal) storage matrix and diagnostics.
#[derive(Debug, Clone)]
pub struct KappaRealization<S> {
    pub sys: SysMats<S>,
    /// Diagonal storage for the four-block LMI: entries `r_j^2 + eps`.
    pub p: Mat<S>,
    /// Coupling normalization actually applied (>= 1).
    pub eta: S,
    /// Number of post-verification halvings that were needed (normally 0).
    pub fallback_shrinks: usize,
}

impl<S: Scalar> KappaRealization<S> {
    /// The realized system and its certificate as plain values. The
    /// four-block storage `P` corresponds to `gamma * P` in the two-block
    /// convention used by [`GainCertificate`].
    pub fn value_pair(&self, gamma: f64) -> (LtiSystem, GainCertificate) {
        let sys = self.sys.value_system();
        let cert = GainCertificate {
            p: self.p.value_matrix().scale(gamma).symmetrize(),
            gamma,
        };
        (sys, cert)
    }
}

/// Draws log-modulus and log-phase vectors whose realized eigenvalues have
/// modulus in `[r_min, r_max]` and phase in `[phase_min, phase_max]`.
/// Moduli are drawn uniformly in the log-log domain (so the memory horizon
/// is swept multiplicatively); phases are drawn uniformly and stored as
/// logarithms, floored at [`PHASE_FLOOR`] to stay finite.
pub fn sample_eigen_params<R: Rng>(
    ranges: EigenInitRanges,
    n_half: usize,
    rng: &mut R,
) -> Result<(Vec<f64>, Vec<f64>), KappaError> {
    let ranges = ranges.validated()?;
    if n_half == 0 {
        return Err(KappaError::Dimension("state dimension is zero".into()));
    }
    // log(-log r) is decreasing in r: the upper modulus gives the lower end.
    let mu_lo = (-ranges.r_max.ln()).ln();
    let mu_hi = (-ranges.r_min.max(PHASE_FLOOR).ln()).ln();
    let mut mu = Vec::with_capacity(n_half);
    let mut theta = Vec::with_capacity(n_half);
    for _ in 0..n_half {
        mu.push(if mu_lo == mu_hi {
            mu_lo
        } else {
            rng.gen_range(mu_lo..=mu_hi)
        });
        let phase = if ranges.phase_min == ranges.phase_max {
            ranges.phase_min
        } else {
            rng.gen_range(ranges.phase_min..=ranges.phase_max)
        };
        theta.push(phase.max(PHASE_FLOOR).ln());
    }
    Ok((mu, theta))
}

/// Realizes the block-diagonal state matrix: one 2x2 rotation-scaling block
/// `r [[cos p, -sin p], [sin p, cos p]]` per `(mu, theta)` pair, with
/// `r = exp(-exp(mu))` and `p = exp(theta)`. Always Schur stable (`r < 1`).
pub fn realify<S: Scalar>(mu: &[S], theta: &[S]) -> Mat<S> {
    assert_eq!(mu.len(), theta.len(), "modulus/phase length mismatch");
    assert!(!mu.is_empty(), "state dimension is zero");
    let probe = mu[0];
    let n = 2 * mu.len();
    let mut a = Mat::filled_like(probe, n, n, 0.0);
    for (j, (&m, &t)) in mu.iter().zip(theta).enumerate() {
        let r = (-m.exp()).exp();
        let phase = t.exp();
        let (c, s) = (phase.cos(), phase.sin());
        let i = 2 * j;
        a[(i, i)] = r * c;
        a[(i, i + 1)] = -(r * s);
        a[(i + 1, i)] = r * s;
        a[(i + 1, i + 1)] = r * c;
    }
    a
}

/// Realizes the system `(A, B, C, D)` with diagonal storage `P` for a gain
/// bound; see the module docs for the construction. Fails only on shape
/// errors or if the post-verification fallback is exhausted (which would
/// indicate a bug, not bad luck: the normalization is provably sufficient).
pub fn kappa_gamma<S: Scalar>(
    params: &KappaFreeParams<S>,
    gamma: S,
) -> Result<KappaRealization<S>, KappaError> {
    if !(gamma.val() > 0.0) || !gamma.val().is_finite() {
        return Err(KappaError::InvalidGamma(gamma.val()));
    }
    let params = params.clone().validated()?;
    let probe = params.mu[0];
    let n_h = params.state_dim();
    let (n_d, n_z) = (params.input_dim(), params.output_dim());

    let a = realify(&params.mu, &params.theta);
    // Diagonal storage with entries r_j^2 + eps, exact by construction
    // (A'A = diag(r_j^2) for rotation-scaling blocks).
    let mut p = Mat::filled_like(probe, n_h, n_h, 0.0);
    for (j, &m) in params.mu.iter().enumerate() {
        let r = (-m.exp()).exp();
        let v = r * r + probe.lift(params.eps);
        p[(2 * j, 2 * j)] = v;
        p[(2 * j + 1, 2 * j + 1)] = v;
    }

    let d_norm = S::spectral_norm_of(&params.d_til, SPECTRAL_TOL, SPECTRAL_MAX_ITERS)?;
    let d = params
        .d_til
        .scale(gamma / (d_norm + probe.lift(params.eps)));

    // Masked coupling: top-left block feeds PB, bottom-right feeds C'.
    let mut y_til = Mat::filled_like(probe, 2 * n_h, n_d + n_z, 0.0);
    for rr in 0..n_h {
        for cc in 0..n_d {
            y_til[(rr, cc)] = params.y_bar[(rr, cc)];
        }
    }
    for rr in 0..n_h {
        for cc in 0..n_z {
            y_til[(n_h + rr, n_d + cc)] = params.y_bar[(n_h + rr, n_d + cc)];
        }
    }

    // Coupling norms at unit normalization; both scale linearly in 1/eta.
    let pa = p.mul(&a);
    let mut g11 = Mat::filled_like(probe, 2 * n_h, 2 * n_h, 0.0);
    g11.set_block(0, 0, &p);
    g11.set_block(0, n_h, &pa);
    g11.set_block(n_h, 0, &pa.t());
    g11.set_block(n_h, n_h, &p);
    let mut g22 = Mat::identity_like(probe, n_d + n_z).scale(gamma);
    for rr in 0..n_z {
        for cc in 0..n_d {
            g22[(n_d + rr, cc)] = d[(rr, cc)];
            g22[(cc, n_d + rr)] = d[(rr, cc)];
        }
    }
    let c1 = S::spectral_norm_of(
        &lu_factor(&g11)?.solve_mat(&y_til),
        SPECTRAL_TOL,
        SPECTRAL_MAX_ITERS,
    )?;
    let c2 = S::spectral_norm_of(
        &lu_factor(&g22)?.solve_mat(&y_til.t()),
        SPECTRAL_TOL,
        SPECTRAL_MAX_ITERS,
    )?;
    let eta = probe
        .lift(1.0)
        .max_with(probe.lift(1.0 + params.eps_margin) * c1.max_with(c2));

    let mut scale = probe.lift(1.0) / eta;
    let mut shrinks = 0;
    loop {
        let y = y_til.scale(scale);
        // B = P^{-1} Y21 (P diagonal), C = Y22'.
        let mut b = Mat::filled_like(probe, n_h, n_d, 0.0);
        for rr in 0..n_h {
            for cc in 0..n_d {
                b[(rr, cc)] = y[(rr, cc)] / p[(rr, rr)];
            }
        }
        let mut c = Mat::filled_like(probe, n_z, n_h, 0.0);
        for rr in 0..n_z {
            for cc in 0..n_h {
                c[(rr, cc)] = y[(n_h + cc, n_d + rr)];
            }
        }
        let sys = SysMats {
            a: a.clone(),
            b,
            c,
            d: d.clone(),
        };
        let ok = bounded_real_check_strict(
            &sys.value_system(),
            &p.value_matrix(),
            gamma.val(),
            0.0,
        )
        .map_err(|e| KappaError::Dimension(e.to_string()))?;
        if ok {
            return Ok(KappaRealization {
                sys,
                p,
                eta,
                fallback_shrinks: shrinks,
            });
        }
        shrinks += 1;
        if shrinks > MAX_SHRINKS {
            return Err(KappaError::Construction { shrinks: shrinks - 1 });
        }
        scale = scale * probe.lift(0.5);
    }
}

/// Convenience wrapper for plain-value use: realized system plus certificate.
pub fn kappa_system(
    params: &KappaFreeParams<f64>,
    gamma: f64,
) -> Result<(LtiSystem, GainCertificate), KappaError> {
    let real = kappa_gamma(params, gamma)?;
    let (sys, cert) = real.value_pair(gamma);
    Ok((sys, cert))
}
