//! Tape-based reverse-mode differentiation over dense tensors.
//!
//! A forward pass records one node per operation; each node stores, per
//! parent, a closure that maps the output gradient to that parent's
//! gradient contribution. `Var::backward` walks the tape in reverse and
//! accumulates exact analytic gradients.

use std::cell::RefCell;
use std::ops::Range;
use std::rc::Rc;

use rand::Rng;

use super::tensor::Tensor;
use crate::error::{Error, Result};

type BackFn = Box<dyn Fn(&Tensor) -> Tensor>;

struct Node {
    back: Vec<(usize, BackFn)>,
}

#[derive(Clone, Default)]
pub struct Tape {
    inner: Rc<RefCell<Vec<Node>>>,
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    pub fn len(&self) -> usize {
        self.inner.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// A leaf variable; gradients accumulate here and stop.
    pub fn leaf(&self, value: Tensor) -> Var {
        self.push(value, Vec::new())
    }

    /// A constant: recorded as a leaf whose gradient is simply discarded.
    pub fn constant(&self, value: Tensor) -> Var {
        self.push(value, Vec::new())
    }

    fn push(&self, value: Tensor, back: Vec<(usize, BackFn)>) -> Var {
        let mut nodes = self.inner.borrow_mut();
        let idx = nodes.len();
        nodes.push(Node { back });
        Var {
            tape: self.clone(),
            idx,
            value: Rc::new(value),
        }
    }
}

#[derive(Clone)]
pub struct Var {
    tape: Tape,
    idx: usize,
    value: Rc<Tensor>,
}

pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, var: &Var) -> Option<&Tensor> {
        self.grads.get(var.idx).and_then(|g| g.as_ref())
    }

    pub fn get_or_zeros(&self, var: &Var) -> Tensor {
        self.get(var)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(var.shape().to_vec()))
    }
}

impl Var {
    pub fn value(&self) -> &Tensor {
        &self.value
    }

    pub fn shape(&self) -> &[usize] {
        self.value.shape()
    }

    pub fn item(&self) -> f64 {
        self.value.item()
    }

    fn same_tape(&self, other: &Var) {
        assert!(
            Rc::ptr_eq(&self.tape.inner, &other.tape.inner),
            "vars from different tapes"
        );
    }

    /// Reverse pass from this variable, seeded with ones.
    pub fn backward(&self) -> Gradients {
        let nodes = self.tape.inner.borrow();
        let mut grads: Vec<Option<Tensor>> = vec![None; nodes.len()];
        grads[self.idx] = Some(Tensor::ones(self.value.shape().to_vec()));
        for i in (0..=self.idx).rev() {
            let Some(g) = grads[i].take() else { continue };
            for (parent, back) in &nodes[i].back {
                let contrib = back(&g);
                match &mut grads[*parent] {
                    Some(acc) => acc.add_into(&contrib),
                    slot @ None => *slot = Some(contrib),
                }
            }
            grads[i] = Some(g);
        }
        Gradients { grads }
    }

    pub fn add(&self, other: &Var) -> Var {
        self.same_tape(other);
        let out = self.value.zip_map(&other.value, |a, b| a + b);
        self.tape.push(
            out,
            vec![
                (self.idx, Box::new(|g: &Tensor| g.clone())),
                (other.idx, Box::new(|g: &Tensor| g.clone())),
            ],
        )
    }

    pub fn sub(&self, other: &Var) -> Var {
        self.same_tape(other);
        let out = self.value.zip_map(&other.value, |a, b| a - b);
        self.tape.push(
            out,
            vec![
                (self.idx, Box::new(|g: &Tensor| g.clone())),
                (other.idx, Box::new(|g: &Tensor| g.map(|v| -v))),
            ],
        )
    }

    pub fn mul(&self, other: &Var) -> Var {
        self.same_tape(other);
        let out = self.value.zip_map(&other.value, |a, b| a * b);
        let a = Rc::clone(&self.value);
        let b = Rc::clone(&other.value);
        self.tape.push(
            out,
            vec![
                (self.idx, Box::new(move |g: &Tensor| g.zip_map(&b, |g, b| g * b))),
                (other.idx, Box::new(move |g: &Tensor| g.zip_map(&a, |g, a| g * a))),
            ],
        )
    }

    pub fn scale(&self, c: f64) -> Var {
        let out = self.value.map(|v| v * c);
        self.tape
            .push(out, vec![(self.idx, Box::new(move |g: &Tensor| g.map(|v| v * c)))])
    }

    pub fn add_const(&self, t: &Tensor) -> Var {
        let out = self.value.zip_map(t, |a, b| a + b);
        self.tape
            .push(out, vec![(self.idx, Box::new(|g: &Tensor| g.clone()))])
    }

    /// matrix + row vector, broadcast over rows.
    pub fn add_row_broadcast(&self, bias: &Var) -> Var {
        self.same_tape(bias);
        let (m, n) = (self.value.rows(), self.value.cols());
        assert_eq!(bias.value.len(), n, "bias length vs matrix cols");
        let mut data = self.value.data().to_vec();
        for i in 0..m {
            for j in 0..n {
                data[i * n + j] += bias.value.data()[j];
            }
        }
        self.tape.push(
            Tensor::new(vec![m, n], data),
            vec![
                (self.idx, Box::new(|g: &Tensor| g.clone())),
                (
                    bias.idx,
                    Box::new(move |g: &Tensor| {
                        let mut col = vec![0.0; n];
                        for i in 0..m {
                            for j in 0..n {
                                col[j] += g.data()[i * n + j];
                            }
                        }
                        Tensor::new(vec![n], col)
                    }),
                ),
            ],
        )
    }

    pub fn matmul(&self, other: &Var) -> Var {
        self.same_tape(other);
        let out = self.value.matmul(&other.value);
        let a = Rc::clone(&self.value);
        let b = Rc::clone(&other.value);
        self.tape.push(
            out,
            vec![
                (self.idx, Box::new(move |g: &Tensor| g.matmul_nt(&b))),
                (other.idx, Box::new(move |g: &Tensor| a.matmul_tn(g))),
            ],
        )
    }

    /// A Bᵀ.
    pub fn matmul_nt(&self, other: &Var) -> Var {
        self.same_tape(other);
        let out = self.value.matmul_nt(&other.value);
        let a = Rc::clone(&self.value);
        let b = Rc::clone(&other.value);
        self.tape.push(
            out,
            vec![
                (self.idx, Box::new(move |g: &Tensor| g.matmul(&b))),
                (other.idx, Box::new(move |g: &Tensor| g.matmul_tn(&a))),
            ],
        )
    }

    pub fn tanh(&self) -> Var {
        let out = self.value.map(f64::tanh);
        let y = Rc::new(out.clone());
        self.tape.push(
            out,
            vec![(
                self.idx,
                Box::new(move |g: &Tensor| g.zip_map(&y, |g, y| g * (1.0 - y * y))),
            )],
        )
    }

    pub fn sigmoid(&self) -> Var {
        let out = self.value.map(|v| 1.0 / (1.0 + (-v).exp()));
        let y = Rc::new(out.clone());
        self.tape.push(
            out,
            vec![(
                self.idx,
                Box::new(move |g: &Tensor| g.zip_map(&y, |g, y| g * y * (1.0 - y))),
            )],
        )
    }

    /// Row-wise softmax over open positions of a 2-D tensor. Masked slots
    /// get exactly 0. A row with no open slot is an error: the caller must
    /// bypass such rows.
    pub fn softmax_masked(&self, mask: &[bool]) -> Result<Var> {
        let (m, n) = (self.value.rows(), self.value.cols());
        assert_eq!(mask.len(), m * n, "mask length vs logits");
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            let row = &self.value.data()[i * n..(i + 1) * n];
            let open = &mask[i * n..(i + 1) * n];
            let mut maxv = f64::NEG_INFINITY;
            for (v, &o) in row.iter().zip(open) {
                if o && *v > maxv {
                    maxv = *v;
                }
            }
            if maxv == f64::NEG_INFINITY {
                return Err(Error::numeric(format!(
                    "softmax over fully masked row {i}"
                )));
            }
            let mut sum = 0.0;
            for j in 0..n {
                if open[j] {
                    let e = (row[j] - maxv).exp();
                    out[i * n + j] = e;
                    sum += e;
                }
            }
            for j in 0..n {
                out[i * n + j] /= sum;
            }
        }
        let out = Tensor::new(vec![m, n], out);
        let y = Rc::new(out.clone());
        let mask: Rc<Vec<bool>> = Rc::new(mask.to_vec());
        Ok(self.tape.push(
            out,
            vec![(
                self.idx,
                Box::new(move |g: &Tensor| {
                    let mut gin = vec![0.0; m * n];
                    for i in 0..m {
                        let y_row = &y.data()[i * n..(i + 1) * n];
                        let g_row = &g.data()[i * n..(i + 1) * n];
                        let dot: f64 = y_row.iter().zip(g_row).map(|(y, g)| y * g).sum();
                        for j in 0..n {
                            if mask[i * n + j] {
                                gin[i * n + j] = y_row[j] * (g_row[j] - dot);
                            }
                        }
                    }
                    Tensor::new(vec![m, n], gin)
                }),
            )],
        ))
    }

    /// Inverted dropout; scales kept entries by 1/(1-rate).
    pub fn dropout(&self, rate: f64, rng: &mut impl Rng) -> Var {
        assert!((0.0..1.0).contains(&rate), "dropout rate must be in [0,1)");
        if rate == 0.0 {
            return self.clone();
        }
        let keep = 1.0 - rate;
        let mask: Vec<f64> = (0..self.value.len())
            .map(|_| if rng.gen::<f64>() < keep { 1.0 / keep } else { 0.0 })
            .collect();
        let mask = Rc::new(Tensor::new(self.value.shape().to_vec(), mask));
        let out = self.value.zip_map(&mask, |a, m| a * m);
        self.tape.push(
            out,
            vec![(
                self.idx,
                Box::new(move |g: &Tensor| g.zip_map(&mask, |g, m| g * m)),
            )],
        )
    }

    /// Layer normalization over the last axis of a 2-D tensor.
    pub fn layer_norm(&self, gain: &Var, shift: &Var, eps: f64) -> Var {
        self.same_tape(gain);
        self.same_tape(shift);
        let (m, n) = (self.value.rows(), self.value.cols());
        assert_eq!(gain.value.len(), n, "layer_norm gain length");
        assert_eq!(shift.value.len(), n, "layer_norm shift length");
        let mut xhat = vec![0.0; m * n];
        let mut inv_std = vec![0.0; m];
        for i in 0..m {
            let row = &self.value.data()[i * n..(i + 1) * n];
            let mean = row.iter().sum::<f64>() / n as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
            let inv = 1.0 / (var + eps).sqrt();
            inv_std[i] = inv;
            for j in 0..n {
                xhat[i * n + j] = (row[j] - mean) * inv;
            }
        }
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                out[i * n + j] = xhat[i * n + j] * gain.value.data()[j] + shift.value.data()[j];
            }
        }
        let xhat = Rc::new(xhat);
        let inv_std = Rc::new(inv_std);
        let gain_val = Rc::clone(&gain.value);
        let xhat_x = Rc::clone(&xhat);
        let xhat_g = Rc::clone(&xhat);
        self.tape.push(
            Tensor::new(vec![m, n], out),
            vec![
                (
                    self.idx,
                    Box::new(move |g: &Tensor| {
                        let mut gin = vec![0.0; m * n];
                        for i in 0..m {
                            let gr = &g.data()[i * n..(i + 1) * n];
                            let xh = &xhat_x[i * n..(i + 1) * n];
                            // d/dxhat = g * gain
                            let dxh: Vec<f64> = (0..n).map(|j| gr[j] * gain_val.data()[j]).collect();
                            let mean_dxh = dxh.iter().sum::<f64>() / n as f64;
                            let mean_dxh_xh =
                                dxh.iter().zip(xh).map(|(d, x)| d * x).sum::<f64>() / n as f64;
                            for j in 0..n {
                                gin[i * n + j] =
                                    inv_std[i] * (dxh[j] - mean_dxh - xh[j] * mean_dxh_xh);
                            }
                        }
                        Tensor::new(vec![m, n], gin)
                    }),
                ),
                (
                    gain.idx,
                    Box::new(move |g: &Tensor| {
                        let mut gg = vec![0.0; n];
                        for i in 0..m {
                            for j in 0..n {
                                gg[j] += g.data()[i * n + j] * xhat_g[i * n + j];
                            }
                        }
                        Tensor::new(vec![n], gg)
                    }),
                ),
                (
                    shift.idx,
                    Box::new(move |g: &Tensor| {
                        let mut gs = vec![0.0; n];
                        for i in 0..m {
                            for j in 0..n {
                                gs[j] += g.data()[i * n + j];
                            }
                        }
                        Tensor::new(vec![n], gs)
                    }),
                ),
            ],
        )
    }

    /// Column-wise max of a 2-D tensor (over rows). Gradient flows to the
    /// first maximal row per column.
    pub fn max_axis0(&self) -> Var {
        let (m, n) = (self.value.rows(), self.value.cols());
        assert!(m > 0, "max_axis0 over empty axis");
        let mut out = vec![f64::NEG_INFINITY; n];
        let mut arg = vec![0usize; n];
        for i in 0..m {
            for j in 0..n {
                let v = self.value.data()[i * n + j];
                if v > out[j] {
                    out[j] = v;
                    arg[j] = i;
                }
            }
        }
        let arg = Rc::new(arg);
        self.tape.push(
            Tensor::new(vec![n], out),
            vec![(
                self.idx,
                Box::new(move |g: &Tensor| {
                    let mut gin = vec![0.0; m * n];
                    for j in 0..n {
                        gin[arg[j] * n + j] = g.data()[j];
                    }
                    Tensor::new(vec![m, n], gin)
                }),
            )],
        )
    }

    pub fn sum_all(&self) -> Var {
        let shape = self.value.shape().to_vec();
        let out = Tensor::scalar(self.value.data().iter().sum());
        self.tape.push(
            out,
            vec![(
                self.idx,
                Box::new(move |g: &Tensor| {
                    let n: usize = shape.iter().product();
                    Tensor::new(shape.clone(), vec![g.item(); n])
                }),
            )],
        )
    }

    pub fn mean_all(&self) -> Var {
        let n = self.value.len() as f64;
        self.sum_all().scale(1.0 / n)
    }

    /// Columns `range` of a 2-D tensor.
    pub fn slice_cols(&self, range: Range<usize>) -> Var {
        let (m, n) = (self.value.rows(), self.value.cols());
        assert!(range.end <= n, "slice_cols out of range");
        let w = range.len();
        let mut out = Vec::with_capacity(m * w);
        for i in 0..m {
            out.extend_from_slice(&self.value.data()[i * n + range.start..i * n + range.end]);
        }
        let start = range.start;
        self.tape.push(
            Tensor::new(vec![m, w], out),
            vec![(
                self.idx,
                Box::new(move |g: &Tensor| {
                    let mut gin = vec![0.0; m * n];
                    for i in 0..m {
                        gin[i * n + start..i * n + start + w]
                            .copy_from_slice(&g.data()[i * w..(i + 1) * w]);
                    }
                    Tensor::new(vec![m, n], gin)
                }),
            )],
        )
    }

    /// Select rows of a 2-D tensor by index (with repetition allowed).
    /// Used both for embedding lookup and node-set selection.
    pub fn gather_rows(&self, indices: &[usize]) -> Var {
        let (m, n) = (self.value.rows(), self.value.cols());
        let k = indices.len();
        let mut out = Vec::with_capacity(k * n);
        for &i in indices {
            assert!(i < m, "gather_rows index {i} out of range {m}");
            out.extend_from_slice(self.value.row(i));
        }
        let indices: Rc<Vec<usize>> = Rc::new(indices.to_vec());
        self.tape.push(
            Tensor::new(vec![k, n], out),
            vec![(
                self.idx,
                Box::new(move |g: &Tensor| {
                    let mut gin = vec![0.0; m * n];
                    for (r, &i) in indices.iter().enumerate() {
                        for j in 0..n {
                            gin[i * n + j] += g.data()[r * n + j];
                        }
                    }
                    Tensor::new(vec![m, n], gin)
                }),
            )],
        )
    }

    /// Place the rows of a k×n tensor at `indices` in an m×n zero tensor.
    pub fn scatter_rows(&self, indices: &[usize], m: usize) -> Var {
        let (k, n) = (self.value.rows(), self.value.cols());
        assert_eq!(k, indices.len(), "scatter_rows index count");
        let mut out = vec![0.0; m * n];
        for (r, &i) in indices.iter().enumerate() {
            assert!(i < m, "scatter_rows index {i} out of range {m}");
            out[i * n..(i + 1) * n].copy_from_slice(self.value.row(r));
        }
        let indices: Rc<Vec<usize>> = Rc::new(indices.to_vec());
        self.tape.push(
            Tensor::new(vec![m, n], out),
            vec![(
                self.idx,
                Box::new(move |g: &Tensor| {
                    let mut gin = Vec::with_capacity(k * n);
                    for &i in indices.iter() {
                        gin.extend_from_slice(&g.data()[i * n..(i + 1) * n]);
                    }
                    Tensor::new(vec![k, n], gin)
                }),
            )],
        )
    }

    /// Gather scalars of a 1-D tensor into an arbitrary-shaped output.
    /// Used for the learnable bias table indexed by bin indices.
    pub fn gather_flat(&self, indices: &[usize], shape: Vec<usize>) -> Var {
        let len = self.value.len();
        assert_eq!(
            indices.len(),
            shape.iter().product::<usize>(),
            "gather_flat index count vs shape"
        );
        let out: Vec<f64> = indices
            .iter()
            .map(|&i| {
                assert!(i < len, "gather_flat index {i} out of range {len}");
                self.value.data()[i]
            })
            .collect();
        let src_shape = self.value.shape().to_vec();
        let indices: Rc<Vec<usize>> = Rc::new(indices.to_vec());
        self.tape.push(
            Tensor::new(shape, out),
            vec![(
                self.idx,
                Box::new(move |g: &Tensor| {
                    let mut gin = vec![0.0; len];
                    for (o, &i) in indices.iter().enumerate() {
                        gin[i] += g.data()[o];
                    }
                    Tensor::new(src_shape.clone(), gin)
                }),
            )],
        )
    }

    /// Concatenate 2-D tensors with equal row counts along columns.
    pub fn concat_cols(parts: &[Var]) -> Var {
        assert!(!parts.is_empty(), "concat_cols of nothing");
        let tape = parts[0].tape.clone();
        let m = parts[0].value.rows();
        let widths: Vec<usize> = parts
            .iter()
            .map(|p| {
                parts[0].same_tape(p);
                assert_eq!(p.value.rows(), m, "concat_cols row mismatch");
                p.value.cols()
            })
            .collect();
        let total: usize = widths.iter().sum();
        let mut out = Vec::with_capacity(m * total);
        for i in 0..m {
            for p in parts {
                out.extend_from_slice(p.value.row(i));
            }
        }
        let mut back: Vec<(usize, BackFn)> = Vec::with_capacity(parts.len());
        let mut offset = 0usize;
        for (p, &w) in parts.iter().zip(&widths) {
            let start = offset;
            offset += w;
            back.push((
                p.idx,
                Box::new(move |g: &Tensor| {
                    let mut gp = Vec::with_capacity(m * w);
                    for i in 0..m {
                        gp.extend_from_slice(&g.data()[i * total + start..i * total + start + w]);
                    }
                    Tensor::new(vec![m, w], gp)
                }),
            ));
        }
        tape.push(Tensor::new(vec![m, total], out), back)
    }

    /// Stack 1-D tensors of equal length into a k×n matrix.
    pub fn stack_rows(parts: &[Var]) -> Var {
        assert!(!parts.is_empty(), "stack_rows of nothing");
        let tape = parts[0].tape.clone();
        let n = parts[0].value.len();
        let k = parts.len();
        let mut out = Vec::with_capacity(k * n);
        let mut back: Vec<(usize, BackFn)> = Vec::with_capacity(k);
        for (r, p) in parts.iter().enumerate() {
            parts[0].same_tape(p);
            assert_eq!(p.value.len(), n, "stack_rows length mismatch");
            out.extend_from_slice(p.value.data());
            back.push((
                p.idx,
                Box::new(move |g: &Tensor| {
                    Tensor::new(vec![n], g.data()[r * n..(r + 1) * n].to_vec())
                }),
            ));
        }
        tape.push(Tensor::new(vec![k, n], out), back)
    }

    /// Row-wise dot product of two equally shaped 2-D tensors → 1-D of
    /// length m. Used by the biaffine score.
    pub fn rowwise_dot(&self, other: &Var) -> Var {
        self.same_tape(other);
        let (m, n) = (self.value.rows(), self.value.cols());
        assert_eq!(self.value.shape(), other.value.shape(), "rowwise_dot shapes");
        let out: Vec<f64> = (0..m)
            .map(|i| {
                self.value
                    .row(i)
                    .iter()
                    .zip(other.value.row(i))
                    .map(|(a, b)| a * b)
                    .sum()
            })
            .collect();
        let a = Rc::clone(&self.value);
        let b = Rc::clone(&other.value);
        self.tape.push(
            Tensor::new(vec![m], out),
            vec![
                (
                    self.idx,
                    Box::new(move |g: &Tensor| {
                        let mut gin = vec![0.0; m * n];
                        for i in 0..m {
                            for j in 0..n {
                                gin[i * n + j] = g.data()[i] * b.data()[i * n + j];
                            }
                        }
                        Tensor::new(vec![m, n], gin)
                    }),
                ),
                (
                    other.idx,
                    Box::new(move |g: &Tensor| {
                        let mut gin = vec![0.0; m * n];
                        for i in 0..m {
                            for j in 0..n {
                                gin[i * n + j] = g.data()[i] * a.data()[i * n + j];
                            }
                        }
                        Tensor::new(vec![m, n], gin)
                    }),
                ),
            ],
        )
    }

    /// Mean binary cross-entropy against a fixed 0/1 target vector, with
    /// predictions clamped to [eps, 1-eps] before the logs.
    pub fn bce_loss(&self, targets: &[f64], eps: f64) -> Result<Var> {
        let n = self.value.len();
        if targets.len() != n {
            return Err(Error::shape(format!(
                "bce targets length {} vs predictions {}",
                targets.len(),
                n
            )));
        }
        let mut total = 0.0;
        for (&p, &y) in self.value.data().iter().zip(targets) {
            let pc = p.clamp(eps, 1.0 - eps);
            total -= y * pc.ln() + (1.0 - y) * (1.0 - pc).ln();
        }
        let shape = self.value.shape().to_vec();
        let preds = Rc::clone(&self.value);
        let targets: Rc<Vec<f64>> = Rc::new(targets.to_vec());
        Ok(self.tape.push(
            Tensor::scalar(total / n as f64),
            vec![(
                self.idx,
                Box::new(move |g: &Tensor| {
                    let gout = g.item() / n as f64;
                    let data: Vec<f64> = preds
                        .data()
                        .iter()
                        .zip(targets.iter())
                        .map(|(&p, &y)| {
                            if p < eps || p > 1.0 - eps {
                                0.0 // clamp region: flat
                            } else {
                                gout * (-(y / p) + (1.0 - y) / (1.0 - p))
                            }
                        })
                        .collect();
                    Tensor::new(shape.clone(), data)
                }),
            )],
        ))
    }
}
