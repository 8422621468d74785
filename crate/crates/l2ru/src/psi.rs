//! Free and complete parametrization of square systems with a prescribed
//! L2-gain bound, written over a generic scalar so the same construction
//! serves inference (`f64`) and gradient computation (tape variables).
//!
//! Every point of the unconstrained parameter space maps to a system
//! `(A, B, C, D)` together with a storage matrix `P` certifying that the L2
//! gain is below the requested `gamma` (two-block LMI strictly negative).
//! The construction is also complete: every certifiable square system is in
//! its image. The only excluded points form a measure-zero set where an
//! internal cross-coupling matrix becomes singular; those are reported as
//! [`PsiError::DegenerateParameters`] so callers can jitter and retry.
//!
//! A long-memory initialization is included: with all structure matrices set
//! to the identity and a deeply negative `eps`, the state matrix becomes a
//! scaled orthogonal matrix whose eigenvalue moduli are all
//! `sqrt(2 s / (3 - s))` with `s = sigmoid(alpha)`, so the memory horizon is
//! controlled directly by one scalar.

use crate::lti::{GainCertificate, LtiSystem, SysMats};
use crate::numerics::{
    cholesky, lu_factor, Mat, Matrix, NumericsError, Scalar, SPECTRAL_MAX_ITERS, SPECTRAL_TOL,
};
use serde::{Deserialize, Serialize};

/// Reciprocal-condition threshold below which the cross-coupling matrix is
/// treated as singular.
pub const DEGENERACY_RCOND: f64 = 1e-12;

/// `eps` used by the long-memory initialization: `e^eps` is far below f64
/// resolution of the surrounding terms, realizing the deep-memory limit
/// while keeping every intermediate strictly positive definite.
pub const LONG_MEMORY_EPS: f64 = -30.0;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum PsiError {
    #[error("gain bound must be positive, got {0}")]
    InvalidGamma(f64),
    #[error("parameter matrices must share one square shape: {0}")]
    Dimension(String),
    #[error(
        "cross-coupling matrix is numerically singular (reciprocal condition {rcond:.3e}); \
         the parameters sit in the measure-zero degenerate set — jitter and retry"
    )]
    DegenerateParameters { rcond: f64 },
    #[error(transparent)]
    Numerics(#[from] NumericsError),
}

/// Unconstrained parameters: two scalars and six square matrices.
///
/// All `6n^2 + 2` stored entries are free; no entry is constrained. Parts of
/// the storage are redundant for the construction (only the skew part of `s`
/// enters, and some matrices appear only through symmetric products), which
/// is harmless for an unconstrained parametrization and keeps the layout
/// trivially flat.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(bound(
    serialize = "S: Serialize",
    deserialize = "S: serde::de::DeserializeOwned, Mat<S>: serde::de::DeserializeOwned"
))]
pub struct PsiFreeParams<S> {
    pub alpha: S,
    pub eps: S,
    pub x11: Mat<S>,
    pub x21: Mat<S>,
    pub x22: Mat<S>,
    pub c_til: Mat<S>,
    pub d_til: Mat<S>,
    pub s: Mat<S>,
}

impl<S: Scalar> PsiFreeParams<S> {
    pub fn validated(self) -> Result<Self, PsiError> {
        let n = self.x11.rows();
        let shapes = [
            ("x11", &self.x11),
            ("x21", &self.x21),
            ("x22", &self.x22),
            ("c_til", &self.c_til),
            ("d_til", &self.d_til),
            ("s", &self.s),
        ];
        for (name, m) in shapes {
            if m.rows() != n || m.cols() != n {
                return Err(PsiError::Dimension(format!(
                    "{name} is {}x{}, expected {n}x{n}",
                    m.rows(),
                    m.cols()
                )));
            }
        }
        Ok(self)
    }

    /// State (= input = output) dimension of the realized system.
    pub fn dim(&self) -> usize {
        self.x11.rows()
    }

    pub fn value_params(&self) -> PsiFreeParams<f64> {
        PsiFreeParams {
            alpha: self.alpha.val(),
            eps: self.eps.val(),
            x11: self.x11.value_matrix(),
            x21: self.x21.value_matrix(),
            x22: self.x22.value_matrix(),
            c_til: self.c_til.value_matrix(),
            d_til: self.d_til.value_matrix(),
            s: self.s.value_matrix(),
        }
    }
}

/// Intermediate quantities of the construction, exposed for audits.
#[derive(Debug, Clone)]
pub struct PsiIntermediates<S> {
    /// Special-orthogonal factor from the skew part of `s`.
    pub q: Mat<S>,
    /// Symmetric positive-definite Gram aggregate.
    pub z: Mat<S>,
    /// Rescaling that places the trailing block strictly inside the bound.
    pub beta: S,
    pub h11: Mat<S>,
    pub h12: Mat<S>,
    /// Negative-definite trailing block shift.
    pub v: Mat<S>,
    /// Negative-definite cross term.
    pub r: Mat<S>,
}

/// A realized system with its storage matrix and construction intermediates.
#[derive(Debug, Clone)]
pub struct PsiRealization<S> {
    pub sys: SysMats<S>,
    pub p: Mat<S>,
    pub inter: PsiIntermediates<S>,
}

impl<S: Scalar> PsiRealization<S> {
    /// The realized system and its certificate as plain values.
    pub fn value_pair(&self, gamma: f64) -> (LtiSystem, GainCertificate) {
        let sys = self.sys.value_system();
        let cert = GainCertificate {
            p: self.p.value_matrix().symmetrize(),
            gamma,
        };
        (sys, cert)
    }

    /// Relative residuals of the three identities tying the realization to
    /// its intermediates:
    /// `P - A'PA = H11`, `-A'PB = H12`, `-B'PB = V`.
    /// All three vanish in exact arithmetic; they are the cheap self-audit
    /// run after construction and during training.
    pub fn consistency_residuals(&self) -> [f64; 3] {
        let a = self.sys.a.value_matrix();
        let b = self.sys.b.value_matrix();
        let p = self.p.value_matrix();
        let pa = p.mul(&a);
        let pb = p.mul(&b);
        let rel = |lhs: &Matrix, rhs: &Matrix| {
            lhs.sub(rhs).max_abs_val() / rhs.max_abs_val().max(1.0)
        };
        [
            rel(&p.sub(&a.tr_mul(&pa)), &self.inter.h11.value_matrix()),
            rel(&a.tr_mul(&pb).neg(), &self.inter.h12.value_matrix()),
            rel(&b.tr_mul(&pb).neg(), &self.inter.v.value_matrix()),
        ]
    }
}

/// Special-orthogonal matrix from the skew-symmetric part of `s`:
/// `Q = (I - K)(I + K)^{-1}` with `K = s - s'`. Total on finite inputs since
/// `I + K` is always invertible for skew `K`; `Q'Q = I` and `det Q = +1`.
pub fn cayley<S: Scalar>(s: &Mat<S>) -> Result<Mat<S>, NumericsError> {
    let probe = s[(0, 0)];
    let n = s.rows();
    let k = s.sub(&s.t());
    let eye = Mat::identity_like(probe, n);
    let num = eye.sub(&k);
    let den = eye.add(&k);
    // Q den = num  =>  den' Q' = num'.
    Ok(lu_factor(&den.t())?.solve_mat(&num.t()).t())
}

fn degenerate(e: NumericsError, rcond: f64) -> PsiError {
    match e {
        NumericsError::NotPositiveDefinite { .. } | NumericsError::Singular { .. } => {
            PsiError::DegenerateParameters { rcond }
        }
        other => PsiError::Numerics(other),
    }
}

/// Realizes the system `(A, B, C, D)` and storage `P` for a gain bound.
///
/// Pipeline: `Q` from the skew part of `s`; `Z` as the Gram aggregate of the
/// trailing parameters plus `e^eps I`; `beta = gamma^2 sigmoid(alpha) /
/// ||Z||`; then `H11`, `H12`, `V = beta Z - gamma^2 I`, `R = H12 V^{-T}
/// H12'`; finally
///
/// ```text
/// A = L1^{-T} Q L2',   L1 = chol(H11 - R),  L2 = chol(-R)
/// B = A H12^{-T} V'
/// C = c_til,  D = d_til sqrt(beta),   P = -A^{-T} H12 B^{-1}
/// ```
///
/// The gain bound is itself a scalar of the same field so it can be a tuned
/// parameter. Fails with [`PsiError::DegenerateParameters`] when `H12` is
/// singular (measure-zero in parameter space).
pub fn psi_gamma<S: Scalar>(
    params: &PsiFreeParams<S>,
    gamma: S,
) -> Result<PsiRealization<S>, PsiError> {
    if !(gamma.val() > 0.0) || !gamma.val().is_finite() {
        return Err(PsiError::InvalidGamma(gamma.val()));
    }
    let params = params.clone().validated()?;
    let probe = params.alpha;

    let q = cayley(&params.s)?;
    let e_eps = params.eps.exp();
    // The d_til term must be the left Gram product d_til' d_til: it cancels
    // against the feed-through energy D'D in the gain LMI, leaving a sum of
    // Gram blocks plus e^eps shifts as the strict slack. (The right product
    // d_til d_til' would leave an indefinite commutator in the slack and
    // break certification for non-normal d_til.)
    let z = params
        .x21
        .mul_tr(&params.x21)
        .add(&params.x22.mul_tr(&params.x22))
        .add(&params.d_til.tr_mul(&params.d_til))
        .add_scaled_identity(e_eps);
    let z_norm = S::spectral_norm_of(&z, SPECTRAL_TOL, SPECTRAL_MAX_ITERS)?;
    let gamma_sq = gamma * gamma;
    let beta = gamma_sq * params.alpha.sigmoid() / z_norm;
    let h11 = params
        .x11
        .mul_tr(&params.x11)
        .add(&params.c_til.tr_mul(&params.c_til))
        .add_scaled_identity(beta * e_eps);
    let h12 = params
        .x11
        .mul_tr(&params.x21)
        .add(&params.c_til.tr_mul(&params.d_til))
        .scale(beta.sqrt());
    let v = z.scale(beta).add_scaled_identity(probe.lift(0.0) - gamma_sq);

    // Degeneracy gate: everything after this point divides by H12.
    let h12_t_lu = lu_factor(&h12.t()).map_err(|e| degenerate(e, 0.0))?;
    let rcond = h12_t_lu.rcond();
    if rcond < DEGENERACY_RCOND {
        return Err(PsiError::DegenerateParameters { rcond });
    }

    // R = H12 V^{-T} H12'.
    let v_inv_h12t = lu_factor(&v.t())?.solve_mat(&h12.t());
    let r = h12.mul(&v_inv_h12t);

    let l1 = cholesky(&h11.sub(&r)).map_err(|e| degenerate(e, rcond))?;
    let l2 = cholesky(&r.neg()).map_err(|e| degenerate(e, rcond))?;
    // A = L1^{-T} (Q L2').
    let a = lu_factor(&l1.t())
        .map_err(|e| degenerate(e, rcond))?
        .solve_mat(&q.mul_tr(&l2));
    let b = a.mul(&h12_t_lu.solve_mat(&v.t()));
    let c = params.c_til.clone();
    let d = params.d_til.scale(beta.sqrt());

    // P = -A^{-T} H12 B^{-1}:  first W = A^{-T} H12, then P' = -B^{-T} W'.
    let w = lu_factor(&a.t())
        .map_err(|e| degenerate(e, rcond))?
        .solve_mat(&h12);
    let p = lu_factor(&b.t())
        .map_err(|e| degenerate(e, rcond))?
        .solve_mat(&w.t())
        .neg()
        .t();

    Ok(PsiRealization {
        sys: SysMats { a, b, c, d },
        p,
        inter: PsiIntermediates {
            q,
            z,
            beta,
            h11,
            h12,
            v,
            r,
        },
    })
}

/// Convenience wrapper for plain-value use: realized system plus certificate.
pub fn psi_system(
    params: &PsiFreeParams<f64>,
    gamma: f64,
) -> Result<(LtiSystem, GainCertificate), PsiError> {
    let real = psi_gamma(params, gamma)?;
    let (sys, cert) = real.value_pair(gamma);
    Ok((sys, cert))
}

/// Eigenvalue modulus produced by [`init_long_memory`]:
/// `sqrt(2 s / (3 - s))` with `s = sigmoid(alpha)`. Approaches 1 as `alpha`
/// grows, so one scalar dials the memory horizon.
pub fn long_memory_modulus(alpha: f64) -> f64 {
    let s = 1.0 / (1.0 + (-alpha).exp());
    (2.0 * s / (3.0 - s)).sqrt()
}

/// Long-memory initialization: all structure matrices identity, `eps` deeply
/// negative. The realized `A` is then (to floating-point resolution) the
/// orthogonal factor of `s` scaled by [`long_memory_modulus`], so every
/// eigenvalue has that modulus and the phases are set by `s` alone.
///
/// `gamma` is validated for sign but does not influence the returned
/// parameters: the limiting modulus is gain-independent. It is kept in the
/// signature so initializers are interchangeable with gain-aware ones.
pub fn init_long_memory(
    alpha: f64,
    s: Matrix,
    gamma: f64,
) -> Result<PsiFreeParams<f64>, PsiError> {
    if !(gamma > 0.0) || !gamma.is_finite() {
        return Err(PsiError::InvalidGamma(gamma));
    }
    if !s.is_square() {
        return Err(PsiError::Dimension(format!(
            "s is {}x{}, expected square",
            s.rows(),
            s.cols()
        )));
    }
    let n = s.rows();
    let eye = Matrix::identity(n);
    PsiFreeParams {
        alpha,
        eps: LONG_MEMORY_EPS,
        x11: eye.clone(),
        x21: eye.clone(),
        x22: eye.clone(),
        c_til: eye.clone(),
        d_til: eye,
        s,
    }
    .validated()
}
