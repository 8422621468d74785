//! Reverse-mode automatic differentiation on a flat scalar tape.
//!
//! [`Var`] implements [`Scalar`], so any routine written against that trait
//! (matrix products, LU solves, Cholesky, the model forward pass) records its
//! scalar operations here and can be differentiated exactly with one backward
//! sweep. Branch decisions (pivot choice, positivity tests, convergence) read
//! plain values and are treated as locally constant, which is the usual
//! almost-everywhere-exact convention for piecewise-smooth programs.

use crate::numerics::{spectral_norm_detailed, Mat, NumericsError, Scalar};
use std::cell::RefCell;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Op {
    Input,
    Const,
    Add,
    Sub,
    Mul,
    Div,
    Neg,
    Sqrt,
    Exp,
    Ln,
    Abs,
    Tanh,
    Sin,
    Cos,
    Sigmoid,
}

#[derive(Debug, Clone, Copy)]
struct Node {
    op: Op,
    a: u32,
    b: u32,
    val: f64,
}

/// Growable record of scalar operations; cleared and reused between passes.
#[derive(Default)]
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
}

/// Handle to one tape entry. Cheap to copy; arithmetic on it appends nodes.
#[derive(Clone, Copy)]
pub struct Var<'t> {
    tape: &'t Tape,
    id: u32,
}

impl std::fmt::Debug for Var<'_> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Var({} = {})", self.id, self.val())
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn clear(&self) {
        self.nodes.borrow_mut().clear();
    }

    fn push(&self, op: Op, a: u32, b: u32, val: f64) -> u32 {
        let mut nodes = self.nodes.borrow_mut();
        let id = nodes.len() as u32;
        nodes.push(Node { op, a, b, val });
        id
    }

    /// Registers a differentiable input and returns its handle.
    pub fn input(&self, value: f64) -> Var<'_> {
        Var {
            tape: self,
            id: self.push(Op::Input, 0, 0, value),
        }
    }

    /// Registers a constant (zero derivative).
    pub fn constant(&self, value: f64) -> Var<'_> {
        Var {
            tape: self,
            id: self.push(Op::Const, 0, 0, value),
        }
    }

    /// Adjoints of every node with respect to `output`, by one reverse sweep.
    /// Index the result with [`Var::id`] to read a particular gradient.
    pub fn gradient(&self, output: Var<'_>) -> Vec<f64> {
        let nodes = self.nodes.borrow();
        let mut adj = vec![0.0f64; nodes.len()];
        adj[output.id as usize] = 1.0;
        for idx in (0..nodes.len()).rev() {
            let g = adj[idx];
            if g == 0.0 {
                continue;
            }
            let n = nodes[idx];
            let a = n.a as usize;
            let b = n.b as usize;
            match n.op {
                Op::Input | Op::Const => {}
                Op::Add => {
                    adj[a] += g;
                    adj[b] += g;
                }
                Op::Sub => {
                    adj[a] += g;
                    adj[b] -= g;
                }
                Op::Mul => {
                    adj[a] += g * nodes[b].val;
                    adj[b] += g * nodes[a].val;
                }
                Op::Div => {
                    let vb = nodes[b].val;
                    adj[a] += g / vb;
                    adj[b] -= g * nodes[a].val / (vb * vb);
                }
                Op::Neg => adj[a] -= g,
                Op::Sqrt => adj[a] += g / (2.0 * n.val),
                Op::Exp => adj[a] += g * n.val,
                Op::Ln => adj[a] += g / nodes[a].val,
                Op::Abs => adj[a] += g * nodes[a].val.signum(),
                Op::Tanh => adj[a] += g * (1.0 - n.val * n.val),
                Op::Sin => adj[a] += g * nodes[a].val.cos(),
                Op::Cos => adj[a] -= g * nodes[a].val.sin(),
                Op::Sigmoid => adj[a] += g * n.val * (1.0 - n.val),
            }
        }
        adj
    }
}

impl<'t> Var<'t> {
    pub fn id(self) -> u32 {
        self.id
    }

    fn value_of(self, id: u32) -> f64 {
        self.tape.nodes.borrow()[id as usize].val
    }

    fn unary(self, op: Op, val: f64) -> Self {
        Var {
            tape: self.tape,
            id: self.tape.push(op, self.id, 0, val),
        }
    }

    fn binary(self, rhs: Self, op: Op, val: f64) -> Self {
        debug_assert!(std::ptr::eq(self.tape, rhs.tape), "mixed tapes");
        Var {
            tape: self.tape,
            id: self.tape.push(op, self.id, rhs.id, val),
        }
    }
}

impl<'t> std::ops::Add for Var<'t> {
    type Output = Self;
    fn add(self, rhs: Self) -> Self {
        let v = self.val() + rhs.val();
        self.binary(rhs, Op::Add, v)
    }
}

impl<'t> std::ops::Sub for Var<'t> {
    type Output = Self;
    fn sub(self, rhs: Self) -> Self {
        let v = self.val() - rhs.val();
        self.binary(rhs, Op::Sub, v)
    }
}

impl<'t> std::ops::Mul for Var<'t> {
    type Output = Self;
    fn mul(self, rhs: Self) -> Self {
        let v = self.val() * rhs.val();
        self.binary(rhs, Op::Mul, v)
    }
}

impl<'t> std::ops::Div for Var<'t> {
    type Output = Self;
    fn div(self, rhs: Self) -> Self {
        let v = self.val() / rhs.val();
        self.binary(rhs, Op::Div, v)
    }
}

impl<'t> std::ops::Neg for Var<'t> {
    type Output = Self;
    fn neg(self) -> Self {
        let v = -self.val();
        self.unary(Op::Neg, v)
    }
}

impl<'t> Scalar for Var<'t> {
    fn val(self) -> f64 {
        self.value_of(self.id)
    }

    fn lift(self, c: f64) -> Self {
        self.tape.constant(c)
    }

    fn sqrt(self) -> Self {
        let v = self.val().sqrt();
        self.unary(Op::Sqrt, v)
    }

    fn exp(self) -> Self {
        let v = self.val().exp();
        self.unary(Op::Exp, v)
    }

    fn ln(self) -> Self {
        let v = self.val().ln();
        self.unary(Op::Ln, v)
    }

    fn abs(self) -> Self {
        let v = self.val().abs();
        self.unary(Op::Abs, v)
    }

    fn tanh(self) -> Self {
        let v = self.val().tanh();
        self.unary(Op::Tanh, v)
    }

    fn sin(self) -> Self {
        let v = self.val().sin();
        self.unary(Op::Sin, v)
    }

    fn cos(self) -> Self {
        let v = self.val().cos();
        self.unary(Op::Cos, v)
    }

    fn sigmoid(self) -> Self {
        let v = Scalar::sigmoid(self.val());
        self.unary(Op::Sigmoid, v)
    }

    /// Runs power iteration on the entry values, then re-expresses the norm on
    /// the tape as `u^T M v` with the converged singular pair held constant.
    /// By first-order perturbation theory of simple singular values this has
    /// exactly the right derivative (d sigma = u dM v), while keeping the
    /// iteration itself off the tape.
    fn spectral_norm_of(m: &Mat<Self>, tol: f64, max_iters: usize) -> Result<Self, NumericsError> {
        let values = m.value_matrix();
        let data = spectral_norm_detailed(&values, tol, max_iters, None)?;
        let probe = m[(0, 0)];
        if data.sigma == 0.0 {
            return Ok(probe.lift(0.0));
        }
        let mut acc = probe.lift(0.0);
        for i in 0..m.rows() {
            let ui = data.u[i];
            if ui == 0.0 {
                continue;
            }
            let mut row_dot = probe.lift(0.0);
            for j in 0..m.cols() {
                let vj = data.v[j];
                if vj != 0.0 {
                    row_dot = row_dot + m[(i, j)] * probe.lift(vj);
                }
            }
            acc = acc + probe.lift(ui) * row_dot;
        }
        Ok(acc)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{cholesky, solve, Matrix};

    /// Central finite difference of a scalar function of a parameter vector.
    fn fd_grad(f: impl Fn(&[f64]) -> f64, x: &[f64]) -> Vec<f64> {
        let mut g = vec![0.0; x.len()];
        for k in 0..x.len() {
            let h = 1e-6 * (1.0 + x[k].abs());
            let mut xp = x.to_vec();
            xp[k] += h;
            let mut xm = x.to_vec();
            xm[k] -= h;
            g[k] = (f(&xp) - f(&xm)) / (2.0 * h);
        }
        g
    }

    fn tape_grad(f: impl for<'t> Fn(&[Var<'t>]) -> Var<'t>, x: &[f64]) -> (f64, Vec<f64>) {
        let tape = Tape::new();
        let vars: Vec<Var> = x.iter().map(|&v| tape.input(v)).collect();
        let out = f(&vars);
        let val = out.val();
        let adj = tape.gradient(out);
        (val, vars.iter().map(|v| adj[v.id() as usize]).collect())
    }

    fn assert_close(a: &[f64], b: &[f64], tol: f64) {
        for (x, y) in a.iter().zip(b) {
            let scale = x.abs().max(y.abs()).max(1.0);
            assert!((x - y).abs() <= tol * scale, "{x} vs {y}");
        }
    }

    #[test]
    fn scalar_chain_gradient_matches_closed_form() {
        // f(x, y) = tanh(x * y) + sqrt(exp(x) + y^2)
        let x0 = [0.7, -1.3];
        let (val, grad) = tape_grad(
            |v| {
                let prod = v[0] * v[1];
                let inner = v[0].exp() + v[1] * v[1];
                prod.tanh() + inner.sqrt()
            },
            &x0,
        );
        let f = |x: f64, y: f64| (x * y).tanh() + (x.exp() + y * y).sqrt();
        assert!((val - f(x0[0], x0[1])).abs() < 1e-15);
        let fd = fd_grad(|p| f(p[0], p[1]), &x0);
        assert_close(&grad, &fd, 1e-8);
    }

    #[test]
    fn sigmoid_and_trig_gradients() {
        let x0 = [0.3, 2.1, -0.9];
        let (_, grad) = tape_grad(
            |v| v[0].sigmoid() * v[1].sin() + v[2].cos() * v[0].abs() + v[1].ln(),
            &x0,
        );
        let fd = fd_grad(
            |p| {
                let s = 1.0 / (1.0 + (-p[0]).exp());
                s * p[1].sin() + p[2].cos() * p[0].abs() + p[1].ln()
            },
            &x0,
        );
        assert_close(&grad, &fd, 1e-7);
    }

    #[test]
    fn gradient_through_linear_solve() {
        // f(p) = sum of solve(M(p), rhs) where M mixes the parameters.
        let x0 = [2.0, 0.3, -0.4, 1.5];
        let f64_version = |p: &[f64]| -> f64 {
            let m = Matrix::new(2, 2, vec![p[0], p[1], p[2], p[3]]).unwrap();
            let rhs = Matrix::new(2, 1, vec![1.0, -2.0]).unwrap();
            let x = solve(&m, &rhs).unwrap();
            x.as_slice().iter().sum()
        };
        let (val, grad) = tape_grad(
            |v| {
                let m = Mat::from_vec(2, 2, vec![v[0], v[1], v[2], v[3]]);
                let rhs = Mat::from_vec(2, 1, vec![v[0].lift(1.0), v[0].lift(-2.0)]);
                let x = solve(&m, &rhs).unwrap();
                x[(0, 0)] + x[(1, 0)]
            },
            &x0,
        );
        assert!((val - f64_version(&x0)).abs() < 1e-14);
        let fd = fd_grad(f64_version, &x0);
        assert_close(&grad, &fd, 1e-7);
    }

    #[test]
    fn gradient_through_cholesky() {
        // f(p) = sum of entries of chol(M(p)), M = L0 L0^T + diag(p) shift.
        let x0 = [0.9, 1.7];
        let f64_version = |p: &[f64]| -> f64 {
            let m = Matrix::new(2, 2, vec![2.0 + p[0], 0.7, 0.7, 1.5 + p[1]]).unwrap();
            cholesky(&m).unwrap().as_slice().iter().sum()
        };
        let (_, grad) = tape_grad(
            |v| {
                let c = v[0].lift(0.7);
                let m = Mat::from_vec(
                    2,
                    2,
                    vec![v[0].lift(2.0) + v[0], c, c, v[0].lift(1.5) + v[1]],
                );
                let l = cholesky(&m).unwrap();
                l[(0, 0)] + l[(1, 0)] + l[(1, 1)]
            },
            &x0,
        );
        let fd = fd_grad(f64_version, &x0);
        assert_close(&grad, &fd, 1e-7);
    }

    #[test]
    fn gradient_of_spectral_norm_is_rank_one() {
        // For M with distinct singular values, d sigma / d M_ij = u_i v_j.
        let x0 = [3.0, 0.2, -0.5, 1.0];
        let f64_version = |p: &[f64]| -> f64 {
            let m = Matrix::new(2, 2, vec![p[0], p[1], p[2], p[3]]).unwrap();
            crate::numerics::spectral_norm(&m).unwrap()
        };
        let (val, grad) = tape_grad(
            |v| {
                let m = Mat::from_vec(2, 2, vec![v[0], v[1], v[2], v[3]]);
                Scalar::spectral_norm_of(&m, 1e-12, 10_000).unwrap()
            },
            &x0,
        );
        assert!((val - f64_version(&x0)).abs() < 1e-9);
        let fd = fd_grad(f64_version, &x0);
        assert_close(&grad, &fd, 1e-6);
    }

    #[test]
    fn relu_subgradient_convention() {
        let (_, grad) = tape_grad(|v| v[0].relu() + v[1].relu(), &[2.0, -3.0]);
        assert_eq!(grad, vec![1.0, 0.0]);
    }

    #[test]
    fn tape_clear_resets_state() {
        let tape = Tape::new();
        let a = tape.input(1.0);
        let _ = a * a;
        assert_eq!(tape.len(), 2);
        tape.clear();
        assert!(tape.is_empty());
    }
}
