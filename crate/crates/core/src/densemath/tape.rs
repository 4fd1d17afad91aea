use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use super::kernels::{self, LayerNormRows};
use super::Matrix;
use crate::error::{Error, Result};

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Transpose(Var),
    Add(Var, Var),
    Sub(Var, Var),
    Scale(Var, f64),
    /// Elementwise product with a constant mask (dropout).
    Mask(Var, Matrix),
    SoftmaxRows(Var),
    ConcatCols(Vec<Var>),
    LayerNormRows {
        input: Var,
        gamma: Var,
        beta: Var,
        saved: LayerNormRows,
    },
    MeanRows(Var),
    Sum(Var),
    /// Frobenius norm as a `1 x 1` value.
    Norm(Var),
    SquaredNorm(Var),
}

#[derive(Debug)]
struct Node {
    value: Matrix,
    op: Op,
}

/// Records a forward computation so that [`Tape::backward`] can replay it in
/// reverse. One tape serves one forward/backward pair.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Adjoints produced by [`Tape::backward`], indexed by [`Var`].
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Matrix>>,
}

impl Gradients {
    /// `None` when the variable does not influence the loss.
    pub fn get(&self, var: Var) -> Option<&Matrix> {
        self.grads.get(var.0).and_then(Option::as_ref)
    }

    /// Gradient of `var`, or zeros of `shape` when it does not influence the loss.
    pub fn get_or_zeros(&self, var: Var, shape: (usize, usize)) -> Matrix {
        self.get(var)
            .cloned()
            .unwrap_or_else(|| Matrix::zeros(shape.0, shape.1))
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, var: Var) -> &Matrix {
        &self.nodes[var.0].value
    }

    fn push(&mut self, value: Matrix, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    /// Registers an input (parameter or constant).
    pub fn leaf(&mut self, value: Matrix) -> Var {
        self.push(value, Op::Leaf)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = kernels::matmul(self.value(a), self.value(b))?;
        Ok(self.push(value, Op::MatMul(a, b)))
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let value = self.value(a).transpose();
        self.push(value, Op::Transpose(a))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).add(self.value(b))?;
        Ok(self.push(value, Op::Add(a, b)))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).sub(self.value(b))?;
        Ok(self.push(value, Op::Sub(a, b)))
    }

    pub fn scale(&mut self, a: Var, factor: f64) -> Var {
        let value = self.value(a).scale(factor);
        self.push(value, Op::Scale(a, factor))
    }

    pub fn mask(&mut self, a: Var, mask: Matrix) -> Result<Var> {
        let value = self.value(a).hadamard(&mask)?;
        Ok(self.push(value, Op::Mask(a, mask)))
    }

    pub fn softmax_rows(&mut self, a: Var) -> Var {
        let value = kernels::softmax_rows(self.value(a));
        self.push(value, Op::SoftmaxRows(a))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let mats: Vec<&Matrix> = parts.iter().map(|&v| self.value(v)).collect();
        let value = kernels::concat_cols(&mats)?;
        Ok(self.push(value, Op::ConcatCols(parts.to_vec())))
    }

    pub fn layer_norm_rows(&mut self, input: Var, gamma: Var, beta: Var, eps: f64) -> Result<Var> {
        let saved = kernels::layer_norm_rows(self.value(input), self.value(gamma), self.value(beta), eps)?;
        let value = saved.output.clone();
        Ok(self.push(
            value,
            Op::LayerNormRows {
                input,
                gamma,
                beta,
                saved,
            },
        ))
    }

    pub fn mean_rows(&mut self, a: Var) -> Var {
        let value = kernels::mean_rows(self.value(a));
        self.push(value, Op::MeanRows(a))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let value = Matrix::row_vector(vec![self.value(a).sum()]);
        self.push(value, Op::Sum(a))
    }

    pub fn norm(&mut self, a: Var) -> Var {
        let value = Matrix::row_vector(vec![self.value(a).frobenius_norm()]);
        self.push(value, Op::Norm(a))
    }

    pub fn squared_norm(&mut self, a: Var) -> Var {
        let n = self.value(a).frobenius_norm();
        let value = Matrix::row_vector(vec![n * n]);
        self.push(value, Op::SquaredNorm(a))
    }

    /// Reverse pass from a scalar (`1 x 1`) output, seeded with `seed`.
    ///
    /// Each recorded node is visited once, newest first.
    pub fn backward(&self, output: Var, seed: f64) -> Result<Gradients> {
        if self.nodes.is_empty() {
            return Err(Error::Usage("backward called on an empty tape".into()));
        }
        let Some(out_node) = self.nodes.get(output.0) else {
            return Err(Error::Usage(format!(
                "variable {} is not recorded on this tape ({} nodes)",
                output.0,
                self.nodes.len()
            )));
        };
        if out_node.value.shape() != (1, 1) {
            return Err(Error::Usage(format!(
                "backward needs a scalar output, got {}x{}",
                out_node.value.rows(),
                out_node.value.cols()
            )));
        }

        let mut grads: Vec<Option<Matrix>> = vec![None; self.nodes.len()];
        grads[output.0] = Some(Matrix::row_vector(vec![seed]));

        for idx in (0..=output.0).rev() {
            let Some(g) = grads[idx].take() else {
                continue;
            };
            let node = &self.nodes[idx];
            match &node.op {
                Op::Leaf => {}
                Op::MatMul(a, b) => {
                    let (ga, gb) = kernels::matmul_backward(self.value(*a), self.value(*b), &g)?;
                    add_grad(&mut grads, *a, ga);
                    add_grad(&mut grads, *b, gb);
                }
                Op::Transpose(a) => add_grad(&mut grads, *a, g.transpose()),
                Op::Add(a, b) => {
                    add_grad(&mut grads, *a, g.clone());
                    add_grad(&mut grads, *b, g.clone());
                }
                Op::Sub(a, b) => {
                    add_grad(&mut grads, *a, g.clone());
                    add_grad(&mut grads, *b, g.scale(-1.0));
                }
                Op::Scale(a, f) => add_grad(&mut grads, *a, g.scale(*f)),
                Op::Mask(a, mask) => add_grad(&mut grads, *a, g.hadamard(mask)?),
                Op::SoftmaxRows(a) => add_grad(&mut grads, *a, kernels::softmax_rows_backward(&node.value, &g)?),
                Op::ConcatCols(parts) => {
                    let mut offset = 0;
                    for &p in parts {
                        let cols = self.value(p).cols();
                        let mut part = Matrix::zeros(g.rows(), cols);
                        for r in 0..g.rows() {
                            part.row_mut(r).copy_from_slice(&g.row(r)[offset..offset + cols]);
                        }
                        add_grad(&mut grads, p, part);
                        offset += cols;
                    }
                }
                Op::LayerNormRows {
                    input,
                    gamma,
                    beta,
                    saved,
                } => {
                    let (dx, dgamma, dbeta) = kernels::layer_norm_backward(saved, self.value(*gamma), &g)?;
                    add_grad(&mut grads, *input, dx);
                    add_grad(&mut grads, *gamma, dgamma);
                    add_grad(&mut grads, *beta, dbeta);
                }
                Op::MeanRows(a) => {
                    let src = self.value(*a);
                    let k = src.rows() as f64;
                    let mut ga = Matrix::zeros(src.rows(), src.cols());
                    for r in 0..src.rows() {
                        for (o, x) in ga.row_mut(r).iter_mut().zip(g.data()) {
                            *o = x / k;
                        }
                    }
                    add_grad(&mut grads, *a, ga);
                }
                Op::Sum(a) => {
                    let (r, c) = self.value(*a).shape();
                    add_grad(&mut grads, *a, Matrix::filled(r, c, g.data()[0]));
                }
                Op::Norm(a) => {
                    let n = node.value.data()[0];
                    // Subgradient 0 at the origin.
                    let factor = if n > 0.0 { g.data()[0] / n } else { 0.0 };
                    add_grad(&mut grads, *a, self.value(*a).scale(factor));
                }
                Op::SquaredNorm(a) => {
                    add_grad(&mut grads, *a, self.value(*a).scale(2.0 * g.data()[0]));
                }
            }
            grads[idx] = Some(g);
        }
        Ok(Gradients { grads })
    }
}

fn add_grad(grads: &mut [Option<Matrix>], var: Var, g: Matrix) {
    match &mut grads[var.0] {
        Some(existing) => existing.accumulate(&g),
        slot @ None => *slot = Some(g),
    }
}
