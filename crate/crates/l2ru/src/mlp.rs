//! Static nonlinearity with a freely parametrized Lipschitz bound.
//!
//! The map is `mu(x) = zeta * (g(x) - g(0))` with `zeta = |zeta_tilde|`,
//! where `g` is a feed-forward network whose weight matrices are divided by
//! their spectral norms and whose activations are 1-Lipschitz. Every layer
//! is then 1-Lipschitz, so `mu` is `zeta`-Lipschitz for any parameter
//! values, and `mu(0) = 0` holds bit-exactly by the subtraction. The bound
//! is sound but not tight (normalization is conservative for deep stacks);
//! an empirical tightness probe is provided.

use crate::numerics::{Mat, NumericsError, Scalar, SPECTRAL_MAX_ITERS, SPECTRAL_TOL};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum MlpError {
    #[error("inconsistent network shapes: {0}")]
    Dimension(String),
    #[error(transparent)]
    Numerics(#[from] NumericsError),
}

/// Pointwise 1-Lipschitz activation applied on hidden layers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Tanh,
    Relu,
}

impl Activation {
    fn apply<S: Scalar>(self, x: S) -> S {
        match self {
            Activation::Tanh => x.tanh(),
            Activation::Relu => x.relu(),
        }
    }
}

/// Network parameters. `widths` fixes the architecture (input, hidden...,
/// output); `weights[l]` is `widths[l+1] x widths[l]` and `biases[l]` has
/// `widths[l+1]` entries. All entries are unconstrained; the Lipschitz
/// bound `|zeta_tilde|` is enforced by construction, not by the values.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(bound(
    serialize = "S: Serialize",
    deserialize = "S: serde::de::DeserializeOwned, Mat<S>: serde::de::DeserializeOwned"
))]
pub struct MlpParams<S> {
    pub widths: Vec<usize>,
    pub weights: Vec<Mat<S>>,
    pub biases: Vec<Vec<S>>,
    pub zeta_tilde: S,
    pub activation: Activation,
}

/// Default architecture: two hidden layers of twice the input width.
pub fn default_widths(input: usize, output: usize) -> Vec<usize> {
    vec![input, 2 * input, 2 * input, output]
}

impl<S: Scalar> MlpParams<S> {
    pub fn validated(self) -> Result<Self, MlpError> {
        if self.widths.len() < 2 {
            return Err(MlpError::Dimension(
                "need at least input and output widths".into(),
            ));
        }
        if self.widths.iter().any(|&w| w == 0) {
            return Err(MlpError::Dimension("zero layer width".into()));
        }
        let layers = self.widths.len() - 1;
        if self.weights.len() != layers || self.biases.len() != layers {
            return Err(MlpError::Dimension(format!(
                "{} widths imply {layers} layers, got {} weights / {} biases",
                self.widths.len(),
                self.weights.len(),
                self.biases.len()
            )));
        }
        for l in 0..layers {
            if self.weights[l].rows() != self.widths[l + 1]
                || self.weights[l].cols() != self.widths[l]
            {
                return Err(MlpError::Dimension(format!(
                    "weight {l} is {}x{}, expected {}x{}",
                    self.weights[l].rows(),
                    self.weights[l].cols(),
                    self.widths[l + 1],
                    self.widths[l]
                )));
            }
            if self.biases[l].len() != self.widths[l + 1] {
                return Err(MlpError::Dimension(format!(
                    "bias {l} has {} entries, expected {}",
                    self.biases[l].len(),
                    self.widths[l + 1]
                )));
            }
        }
        Ok(self)
    }

    pub fn input_dim(&self) -> usize {
        self.widths[0]
    }
    pub fn output_dim(&self) -> usize {
        *self.widths.last().unwrap()
    }

    pub fn value_params(&self) -> MlpParams<f64> {
        MlpParams {
            widths: self.widths.clone(),
            weights: self.weights.iter().map(Mat::value_matrix).collect(),
            biases: self
                .biases
                .iter()
                .map(|b| b.iter().map(|v| v.val()).collect())
                .collect(),
            zeta_tilde: self.zeta_tilde.val(),
            activation: self.activation,
        }
    }

    /// Weight matrices divided by their spectral norms (zero matrices kept
    /// as-is: they are already 0-Lipschitz).
    fn normalized_weights(&self) -> Result<Vec<Mat<S>>, MlpError> {
        let probe = self.zeta_tilde;
        let mut out = Vec::with_capacity(self.weights.len());
        for w in &self.weights {
            let sigma = S::spectral_norm_of(w, SPECTRAL_TOL, SPECTRAL_MAX_ITERS)?;
            out.push(if sigma.val() == 0.0 {
                w.clone()
            } else {
                w.scale(probe.lift(1.0) / sigma)
            });
        }
        Ok(out)
    }
}

/// The raw normalized network `g` evaluated on one sample.
fn raw_forward<S: Scalar>(
    normalized: &[Mat<S>],
    biases: &[Vec<S>],
    activation: Activation,
    x: &[S],
) -> Vec<S> {
    let mut z: Vec<S> = x.to_vec();
    let last = normalized.len() - 1;
    for (l, (w, b)) in normalized.iter().zip(biases).enumerate() {
        let mut next = Vec::with_capacity(w.rows());
        for i in 0..w.rows() {
            let mut acc = b[i];
            for j in 0..w.cols() {
                acc = acc + w[(i, j)] * z[j];
            }
            next.push(if l < last { activation.apply(acc) } else { acc });
        }
        z = next;
    }
    z
}

/// Evaluates `mu(x) = |zeta_tilde| * (g(x) - g(0))` on a single sample.
pub fn mlp_forward<S: Scalar>(params: &MlpParams<S>, x: &[S]) -> Result<Vec<S>, MlpError> {
    let mut out = mlp_forward_seq(params, &[x.to_vec()])?;
    Ok(out.pop().unwrap())
}

/// Evaluates the nonlinearity on a whole sequence of samples, computing the
/// weight normalization and the `g(0)` offset once.
pub fn mlp_forward_seq<S: Scalar>(
    params: &MlpParams<S>,
    xs: &[Vec<S>],
) -> Result<Vec<Vec<S>>, MlpError> {
    let params = params.clone().validated()?;
    for (k, x) in xs.iter().enumerate() {
        if x.len() != params.input_dim() {
            return Err(MlpError::Dimension(format!(
                "sample {k} has {} entries, input width is {}",
                x.len(),
                params.input_dim()
            )));
        }
    }
    let probe = params.zeta_tilde;
    let zeta = params.zeta_tilde.abs();
    let normalized = params.normalized_weights()?;
    let zero = vec![probe.lift(0.0); params.input_dim()];
    let g0 = raw_forward(&normalized, &params.biases, params.activation, &zero);
    let mut out = Vec::with_capacity(xs.len());
    for x in xs {
        let gx = raw_forward(&normalized, &params.biases, params.activation, x);
        out.push(
            gx.into_iter()
                .zip(&g0)
                .map(|(a, &b)| zeta * (a - b))
                .collect(),
        );
    }
    Ok(out)
}

/// Empirical lower bound on the Lipschitz constant: the maximum difference
/// ratio over `trials` standard-normal sample pairs. Always at most the
/// prescribed bound (up to floating point), and approaches it for maps that
/// realize their bound along sampled directions.
pub fn mlp_lipschitz_lower_bound(
    params: &MlpParams<f64>,
    trials: usize,
    seed: u64,
) -> Result<f64, MlpError> {
    assert!(trials >= 1, "need at least one trial");
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let n = params.input_dim();
    let mut best = 0.0f64;
    for _ in 0..trials {
        let a: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
        let b: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
        let dist: f64 = a
            .iter()
            .zip(&b)
            .map(|(x, y)| (x - y) * (x - y))
            .sum::<f64>()
            .sqrt();
        if dist == 0.0 {
            continue;
        }
        let ya = mlp_forward(params, &a)?;
        let yb = mlp_forward(params, &b)?;
        let diff: f64 = ya
            .iter()
            .zip(&yb)
            .map(|(x, y)| (x - y) * (x - y))
            .sum::<f64>()
            .sqrt();
        best = best.max(diff / dist);
    }
    Ok(best)
}

/// Draws a network with standard-normal weights and biases and the given
/// scale parameter.
pub fn random_mlp<R: Rng>(
    widths: &[usize],
    activation: Activation,
    zeta_tilde: f64,
    rng: &mut R,
) -> MlpParams<f64> {
    let mut weights = Vec::new();
    let mut biases = Vec::new();
    for l in 0..widths.len() - 1 {
        let (r, c) = (widths[l + 1], widths[l]);
        weights.push(Mat::from_vec(
            r,
            c,
            (0..r * c).map(|_| rng.sample(StandardNormal)).collect(),
        ));
        biases.push((0..r).map(|_| rng.sample(StandardNormal)).collect());
    }
    MlpParams {
        widths: widths.to_vec(),
        weights,
        biases,
        zeta_tilde,
        activation,
    }
}
