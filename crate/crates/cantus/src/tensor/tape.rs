use std::cell::RefCell;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::{NdArray, NumError, Result, Scalar};

/// Train/inference switch for stochastic layers.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Infer,
}

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(usize);

type BackwardFn<E> = Box<dyn Fn(&NdArray<E>, &NdArray<E>, &[&NdArray<E>]) -> Vec<NdArray<E>>>;

struct Node<E> {
    value: NdArray<E>,
    parents: Vec<usize>,
    requires_grad: bool,
    backward: Option<BackwardFn<E>>,
}

/// Record of a forward computation. Operations append nodes; `backward`
/// walks the record in reverse, handing each node's output gradient to
/// its backward rule and accumulating into parents in fixed order.
pub struct Tape<E: Scalar> {
    nodes: RefCell<Vec<Node<E>>>,
}

/// Gradients produced by [`Tape::backward`], indexable by [`Var`].
pub struct Gradients<E> {
    grads: Vec<Option<NdArray<E>>>,
}

impl<E: Scalar> Gradients<E> {
    pub fn wrt(&self, var: Var) -> Option<&NdArray<E>> {
        self.grads.get(var.0).and_then(|g| g.as_ref())
    }
}

impl<E: Scalar> Default for Tape<E> {
    fn default() -> Self {
        Self::new()
    }
}

impl<E: Scalar> Tape<E> {
    pub fn new() -> Self {
        Self {
            nodes: RefCell::new(Vec::new()),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.borrow().is_empty()
    }

    fn push(&self, node: Node<E>) -> Var {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(node);
        Var(nodes.len() - 1)
    }

    fn push_op(
        &self,
        value: NdArray<E>,
        parents: Vec<usize>,
        backward: BackwardFn<E>,
    ) -> Var {
        let requires_grad = {
            let nodes = self.nodes.borrow();
            parents.iter().any(|&p| nodes[p].requires_grad)
        };
        self.push(Node {
            value,
            parents,
            requires_grad,
            backward: Some(backward),
        })
    }

    /// Leaf that participates in gradient accumulation.
    pub fn param(&self, value: NdArray<E>) -> Var {
        self.push(Node {
            value,
            parents: Vec::new(),
            requires_grad: true,
            backward: None,
        })
    }

    /// Leaf treated as a constant (no gradient is stored for it).
    pub fn constant(&self, value: NdArray<E>) -> Var {
        self.push(Node {
            value,
            parents: Vec::new(),
            requires_grad: false,
            backward: None,
        })
    }

    pub fn value_of(&self, var: Var) -> NdArray<E> {
        self.nodes.borrow()[var.0].value.clone()
    }

    pub fn shape_of(&self, var: Var) -> Vec<usize> {
        self.nodes.borrow()[var.0].value.shape().to_vec()
    }

    fn with_value<T>(&self, var: Var, f: impl FnOnce(&NdArray<E>) -> T) -> T {
        f(&self.nodes.borrow()[var.0].value)
    }

    /// `a + b`, same shape.
    pub fn add(&self, a: Var, b: Var) -> Result<Var> {
        let value = self.with_value(a, |av| {
            self.with_value(b, |bv| av.zip_with(bv, "add", |x, y| x + y))
        })?;
        Ok(self.push_op(
            value,
            vec![a.0, b.0],
            Box::new(|g, _, _| vec![g.clone(), g.clone()]),
        ))
    }

    /// Elementwise `a * b`, same shape.
    pub fn mul(&self, a: Var, b: Var) -> Result<Var> {
        let value = self.with_value(a, |av| {
            self.with_value(b, |bv| av.zip_with(bv, "mul", |x, y| x * y))
        })?;
        Ok(self.push_op(
            value,
            vec![a.0, b.0],
            Box::new(|g, _, parents| {
                vec![
                    g.zip_with(parents[1], "mul-back", |gi, bi| gi * bi).unwrap(),
                    g.zip_with(parents[0], "mul-back", |gi, ai| gi * ai).unwrap(),
                ]
            }),
        ))
    }

    /// Multiply by a compile-time constant factor.
    pub fn scale(&self, x: Var, factor: E) -> Var {
        let value = self.with_value(x, |xv| xv.scale(factor));
        self.push_op(
            value,
            vec![x.0],
            Box::new(move |g, _, _| vec![g.scale(factor)]),
        )
    }

    pub fn matmul(&self, a: Var, b: Var) -> Result<Var> {
        let value = self.with_value(a, |av| self.with_value(b, |bv| av.matmul(bv)))?;
        Ok(self.push_op(
            value,
            vec![a.0, b.0],
            Box::new(|g, _, parents| {
                let da = g.matmul(&parents[1].transposed2().unwrap()).unwrap();
                let db = parents[0].transposed2().unwrap().matmul(g).unwrap();
                vec![da, db]
            }),
        ))
    }

    pub fn transpose(&self, x: Var) -> Result<Var> {
        let value = self.with_value(x, |xv| xv.transposed2())?;
        Ok(self.push_op(
            value,
            vec![x.0],
            Box::new(|g, _, _| vec![g.transposed2().unwrap()]),
        ))
    }

    /// Broadcast-add a bias vector over the last axis.
    pub fn add_bias(&self, x: Var, bias: Var) -> Result<Var> {
        let value = self.with_value(x, |xv| {
            self.with_value(bias, |bv| {
                let (_, width) = xv.rows_of_last_axis();
                if bv.shape() != [width] {
                    return Err(NumError::ShapeMismatch {
                        op: "add_bias",
                        left: xv.shape().to_vec(),
                        right: bv.shape().to_vec(),
                    });
                }
                let mut out = xv.clone();
                for row in out.data_mut().chunks_mut(width) {
                    for (o, b) in row.iter_mut().zip(bv.data()) {
                        *o += *b;
                    }
                }
                Ok(out)
            })
        })?;
        Ok(self.push_op(
            value,
            vec![x.0, bias.0],
            Box::new(|g, _, parents| {
                let width = parents[1].len();
                let mut db = NdArray::zeros(&[width]);
                for row in g.data().chunks(width) {
                    for (d, gi) in db.data_mut().iter_mut().zip(row) {
                        *d += *gi;
                    }
                }
                vec![g.clone(), db]
            }),
        ))
    }

    /// Affine map `x.w + b`.
    pub fn dense(&self, x: Var, w: Var, b: Var) -> Result<Var> {
        let h = self.matmul(x, w)?;
        self.add_bias(h, b)
    }

    pub fn relu(&self, x: Var) -> Var {
        let value = self.with_value(x, |xv| xv.map(|v| if v > E::zero() { v } else { E::zero() }));
        self.push_op(
            value,
            vec![x.0],
            Box::new(|g, _, parents| {
                vec![g
                    .zip_with(parents[0], "relu-back", |gi, xi| {
                        if xi > E::zero() {
                            gi
                        } else {
                            E::zero()
                        }
                    })
                    .unwrap()]
            }),
        )
    }

    /// Softmax over the last axis, computed with max subtraction.
    pub fn softmax_last(&self, x: Var) -> Result<Var> {
        let value = self.with_value(x, |xv| {
            if !xv.all_finite() {
                return Err(NumError::NotFinite { op: "softmax" });
            }
            let (_, width) = xv.rows_of_last_axis();
            let mut out = xv.clone();
            for row in out.data_mut().chunks_mut(width) {
                let max = row.iter().copied().fold(E::neg_infinity(), E::max);
                let mut sum = E::zero();
                for v in row.iter_mut() {
                    *v = (*v - max).exp();
                    sum += *v;
                }
                for v in row.iter_mut() {
                    *v = *v / sum;
                }
            }
            Ok(out)
        })?;
        Ok(self.push_op(
            value,
            vec![x.0],
            Box::new(|g, out, _| {
                let (_, width) = out.rows_of_last_axis();
                let mut dx = g.clone();
                for (grow, orow) in dx.data_mut().chunks_mut(width).zip(out.data().chunks(width)) {
                    let dot: E = grow.iter().zip(orow).map(|(&gi, &oi)| gi * oi).sum();
                    for (gi, &oi) in grow.iter_mut().zip(orow) {
                        *gi = oi * (*gi - dot);
                    }
                }
                vec![dx]
            }),
        ))
    }

    /// Per-row standardization over the last axis followed by gain/bias.
    pub fn layer_norm(&self, x: Var, gain: Var, bias: Var, eps: E) -> Result<Var> {
        let value = self.with_value(x, |xv| {
            self.with_value(gain, |gv| {
                self.with_value(bias, |bv| {
                    let (_, width) = xv.rows_of_last_axis();
                    if gv.shape() != [width] || bv.shape() != [width] {
                        return Err(NumError::ShapeMismatch {
                            op: "layer_norm",
                            left: xv.shape().to_vec(),
                            right: gv.shape().to_vec(),
                        });
                    }
                    let mut out = xv.clone();
                    let inv_w = E::one() / E::from_f64(width as f64);
                    for row in out.data_mut().chunks_mut(width) {
                        let mean: E = row.iter().copied().sum::<E>() * inv_w;
                        let var: E = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<E>() * inv_w;
                        let rstd = E::one() / (var + eps).sqrt();
                        for (v, (&g, &b)) in row.iter_mut().zip(gv.data().iter().zip(bv.data())) {
                            *v = (*v - mean) * rstd * g + b;
                        }
                    }
                    Ok(out)
                })
            })
        })?;
        Ok(self.push_op(
            value,
            vec![x.0, gain.0, bias.0],
            Box::new(move |g, _, parents| {
                let xv = parents[0];
                let gainv = parents[1];
                let (_, width) = xv.rows_of_last_axis();
                let inv_w = E::one() / E::from_f64(width as f64);
                let mut dx = NdArray::zeros(xv.shape());
                let mut dgain = NdArray::zeros(&[width]);
                let mut dbias = NdArray::zeros(&[width]);
                for ((xrow, grow), dxrow) in xv
                    .data()
                    .chunks(width)
                    .zip(g.data().chunks(width))
                    .zip(dx.data_mut().chunks_mut(width))
                {
                    let mean: E = xrow.iter().copied().sum::<E>() * inv_w;
                    let var: E = xrow.iter().map(|&v| (v - mean) * (v - mean)).sum::<E>() * inv_w;
                    let rstd = E::one() / (var + eps).sqrt();
                    // dxhat, and the two row means the gradient needs.
                    let mut m1 = E::zero();
                    let mut m2 = E::zero();
                    for ((&xi, &gi), &gaini) in xrow.iter().zip(grow).zip(gainv.data()) {
                        let xhat = (xi - mean) * rstd;
                        let dxh = gi * gaini;
                        m1 += dxh;
                        m2 += dxh * xhat;
                    }
                    m1 = m1 * inv_w;
                    m2 = m2 * inv_w;
                    for (((dxi, &xi), &gi), &gaini) in dxrow
                        .iter_mut()
                        .zip(xrow)
                        .zip(grow)
                        .zip(gainv.data())
                    {
                        let xhat = (xi - mean) * rstd;
                        let dxh = gi * gaini;
                        *dxi = rstd * (dxh - m1 - xhat * m2);
                    }
                    for ((dg, db), ((&xi, &gi), _)) in dgain
                        .data_mut()
                        .iter_mut()
                        .zip(dbias.data_mut())
                        .zip(xrow.iter().zip(grow).zip(gainv.data()))
                    {
                        let xhat = (xi - mean) * rstd;
                        *dg += gi * xhat;
                        *db += gi;
                    }
                }
                vec![dx, dgain, dbias]
            }),
        ))
    }

    /// Inverted dropout: train mode zeroes with probability `rate` and
    /// scales survivors by `1/(1-rate)`; infer mode is the identity.
    pub fn dropout(&self, x: Var, rate: f64, mode: Mode, rng: &mut ChaCha8Rng) -> Result<Var> {
        if !(0.0..1.0).contains(&rate) {
            return Err(NumError::InvalidArgument {
                op: "dropout",
                message: format!("rate {rate} outside [0, 1)"),
            });
        }
        if mode == Mode::Infer || rate == 0.0 {
            let value = self.value_of(x);
            return Ok(self.push_op(
                value,
                vec![x.0],
                Box::new(|g, _, _| vec![g.clone()]),
            ));
        }
        let keep = E::from_f64(1.0 / (1.0 - rate));
        let mask: Vec<E> = self.with_value(x, |xv| {
            (0..xv.len())
                .map(|_| {
                    if rng.random::<f64>() < rate {
                        E::zero()
                    } else {
                        keep
                    }
                })
                .collect()
        });
        let value = self.with_value(x, |xv| {
            let mut out = xv.clone();
            for (o, m) in out.data_mut().iter_mut().zip(&mask) {
                *o = *o * *m;
            }
            out
        });
        Ok(self.push_op(
            value,
            vec![x.0],
            Box::new(move |g, _, _| {
                let mut dx = g.clone();
                for (d, m) in dx.data_mut().iter_mut().zip(&mask) {
                    *d = *d * *m;
                }
                vec![dx]
            }),
        ))
    }

    /// Row gather: `table[ids[i], :]` stacked into `[ids.len(), d]`.
    pub fn embedding(&self, table: Var, ids: &[usize]) -> Result<Var> {
        let ids = ids.to_vec();
        let value = self.with_value(table, |tv| {
            let (vocab, d) = tv.dims2("embedding")?;
            let mut out = NdArray::zeros(&[ids.len(), d]);
            for (row, &id) in ids.iter().enumerate() {
                if id >= vocab {
                    return Err(NumError::IndexOutOfRange {
                        op: "embedding",
                        index: id,
                        bound: vocab,
                    });
                }
                out.data_mut()[row * d..(row + 1) * d].copy_from_slice(&tv.data()[id * d..(id + 1) * d]);
            }
            Ok(out)
        })?;
        Ok(self.push_op(
            value,
            vec![table.0],
            Box::new(move |g, _, parents| {
                let (vocab, d) = parents[0].dims2("embedding").unwrap();
                let mut dt = NdArray::zeros(&[vocab, d]);
                for (row, &id) in ids.iter().enumerate() {
                    let dst = &mut dt.data_mut()[id * d..(id + 1) * d];
                    for (o, gi) in dst.iter_mut().zip(&g.data()[row * d..(row + 1) * d]) {
                        *o += *gi;
                    }
                }
                vec![dt]
            }),
        ))
    }

    /// Mean over rows of `-log softmax(logits)[i, targets[i]]`.
    pub fn sparse_ce(&self, logits: Var, targets: &[usize]) -> Result<Var> {
        let targets = targets.to_vec();
        let value = self.with_value(logits, |lv| {
            let (n, v) = lv.dims2("sparse_ce")?;
            if targets.len() != n {
                return Err(NumError::InvalidArgument {
                    op: "sparse_ce",
                    message: format!("{} targets for {} rows", targets.len(), n),
                });
            }
            let mut loss = E::zero();
            for (row, &t) in lv.data().chunks(v).zip(&targets) {
                if t >= v {
                    return Err(NumError::IndexOutOfRange {
                        op: "sparse_ce",
                        index: t,
                        bound: v,
                    });
                }
                let max = row.iter().copied().fold(E::neg_infinity(), E::max);
                let lse = max + row.iter().map(|&x| (x - max).exp()).sum::<E>().ln();
                loss += lse - row[t];
            }
            Ok(NdArray::scalar(loss / E::from_f64(n as f64)))
        })?;
        Ok(self.push_op(
            value,
            vec![logits.0],
            Box::new(move |g, _, parents| {
                let lv = parents[0];
                let (n, v) = lv.dims2("sparse_ce").unwrap();
                let gs = g.scalar_value() / E::from_f64(n as f64);
                let mut dl = NdArray::zeros(lv.shape());
                for ((row, drow), &t) in lv
                    .data()
                    .chunks(v)
                    .zip(dl.data_mut().chunks_mut(v))
                    .zip(&targets)
                {
                    let max = row.iter().copied().fold(E::neg_infinity(), E::max);
                    let sum: E = row.iter().map(|&x| (x - max).exp()).sum();
                    for (j, (d, &x)) in drow.iter_mut().zip(row).enumerate() {
                        let p = (x - max).exp() / sum;
                        let indicator = if j == t { E::one() } else { E::zero() };
                        *d = gs * (p - indicator);
                    }
                }
                vec![dl]
            }),
        ))
    }

    /// Column slice `x[:, start..start+len]`.
    pub fn slice_cols(&self, x: Var, start: usize, len: usize) -> Result<Var> {
        let value = self.with_value(x, |xv| {
            let (n, d) = xv.dims2("slice_cols")?;
            if start + len > d {
                return Err(NumError::IndexOutOfRange {
                    op: "slice_cols",
                    index: start + len,
                    bound: d,
                });
            }
            let mut out = NdArray::zeros(&[n, len]);
            for i in 0..n {
                out.data_mut()[i * len..(i + 1) * len]
                    .copy_from_slice(&xv.data()[i * d + start..i * d + start + len]);
            }
            Ok(out)
        })?;
        Ok(self.push_op(
            value,
            vec![x.0],
            Box::new(move |g, _, parents| {
                let (n, d) = parents[0].dims2("slice_cols").unwrap();
                let mut dx = NdArray::zeros(&[n, d]);
                for i in 0..n {
                    dx.data_mut()[i * d + start..i * d + start + len]
                        .copy_from_slice(&g.data()[i * len..(i + 1) * len]);
                }
                vec![dx]
            }),
        ))
    }

    /// Horizontal concatenation of equal-height matrices.
    pub fn concat_cols(&self, parts: &[Var]) -> Result<Var> {
        if parts.is_empty() {
            return Err(NumError::InvalidArgument {
                op: "concat_cols",
                message: "no parts".into(),
            });
        }
        let dims: Vec<(usize, usize)> = parts
            .iter()
            .map(|&p| self.with_value(p, |v| v.dims2("concat_cols")))
            .collect::<Result<_>>()?;
        let n = dims[0].0;
        if dims.iter().any(|&(r, _)| r != n) {
            return Err(NumError::InvalidArgument {
                op: "concat_cols",
                message: "row counts differ".into(),
            });
        }
        let total: usize = dims.iter().map(|&(_, c)| c).sum();
        let mut out = NdArray::zeros(&[n, total]);
        let mut offset = 0;
        for (&p, &(_, c)) in parts.iter().zip(&dims) {
            self.with_value(p, |v| {
                for i in 0..n {
                    out.data_mut()[i * total + offset..i * total + offset + c]
                        .copy_from_slice(&v.data()[i * c..(i + 1) * c]);
                }
            });
            offset += c;
        }
        let widths: Vec<usize> = dims.iter().map(|&(_, c)| c).collect();
        Ok(self.push_op(
            out,
            parts.iter().map(|p| p.0).collect(),
            Box::new(move |g, _, _| {
                let total: usize = widths.iter().sum();
                let n = g.len() / total;
                let mut grads = Vec::with_capacity(widths.len());
                let mut offset = 0;
                for &c in &widths {
                    let mut dp = NdArray::zeros(&[n, c]);
                    for i in 0..n {
                        dp.data_mut()[i * c..(i + 1) * c]
                            .copy_from_slice(&g.data()[i * total + offset..i * total + offset + c]);
                    }
                    grads.push(dp);
                    offset += c;
                }
                grads
            }),
        ))
    }

    pub fn sum_all(&self, x: Var) -> Var {
        let value = self.with_value(x, |xv| NdArray::scalar(xv.sum()));
        self.push_op(
            value,
            vec![x.0],
            Box::new(|g, _, parents| {
                vec![NdArray::filled(parents[0].shape(), g.scalar_value())]
            }),
        )
    }

    /// Reverse pass from a scalar root. Returns gradients for every node
    /// that requires them; constants and unrelated nodes yield `None`.
    pub fn backward(&self, root: Var) -> Result<Gradients<E>> {
        let nodes = self.nodes.borrow();
        let root_node = &nodes[root.0];
        if !root_node.value.is_scalar() {
            return Err(NumError::NonScalarRoot {
                shape: root_node.value.shape().to_vec(),
            });
        }
        let mut grads: Vec<Option<NdArray<E>>> = (0..nodes.len()).map(|_| None).collect();
        grads[root.0] = Some(NdArray::scalar(E::one()));
        for i in (0..=root.0).rev() {
            if grads[i].is_none() || !nodes[i].requires_grad {
                continue;
            }
            let Some(backward) = &nodes[i].backward else {
                continue;
            };
            let parent_values: Vec<&NdArray<E>> = nodes[i]
                .parents
                .iter()
                .map(|&p| &nodes[p].value)
                .collect();
            let out_grad = grads[i].as_ref().unwrap();
            let parent_grads = backward(out_grad, &nodes[i].value, &parent_values);
            debug_assert_eq!(parent_grads.len(), nodes[i].parents.len());
            for (&p, pg) in nodes[i].parents.iter().zip(parent_grads) {
                if !nodes[p].requires_grad {
                    continue;
                }
                match &mut grads[p] {
                    Some(existing) => existing.accumulate(&pg)?,
                    slot => *slot = Some(pg),
                }
            }
        }
        Ok(Gradients { grads })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn arr(shape: &[usize], data: Vec<f64>) -> NdArray<f64> {
        NdArray::from_vec(shape, data).unwrap()
    }

    #[test]
    fn sum_gradient_is_ones() {
        let tape = Tape::<f64>::new();
        let x = tape.param(arr(&[2, 2], vec![1.0, -2.0, 3.0, 4.0]));
        let loss = tape.sum_all(x);
        let grads = tape.backward(loss).unwrap();
        assert_eq!(grads.wrt(x).unwrap().data(), &[1.0; 4]);
    }

    #[test]
    fn quadratic_gradient_is_x() {
        let tape = Tape::<f64>::new();
        let x = tape.param(arr(&[3], vec![1.0, -2.0, 0.5]));
        let sq = tape.mul(x, x).unwrap();
        let half = tape.scale(sq, 0.5);
        let loss = tape.sum_all(half);
        let grads = tape.backward(loss).unwrap();
        assert_eq!(grads.wrt(x).unwrap().data(), &[1.0, -2.0, 0.5]);
    }

    #[test]
    fn dense_identity_passes_input_through() {
        let tape = Tape::<f64>::new();
        let x = tape.param(arr(&[1, 2], vec![4.0, 7.0]));
        let w = tape.param(arr(&[2, 2], vec![1.0, 0.0, 0.0, 1.0]));
        let b = tape.param(arr(&[2], vec![0.0, 0.0]));
        let y = tape.dense(x, w, b).unwrap();
        assert_eq!(tape.value_of(y).data(), &[4.0, 7.0]);
    }

    #[test]
    fn dense_hand_case() {
        let tape = Tape::<f64>::new();
        let x = tape.param(arr(&[1, 2], vec![1.0, 2.0]));
        let w = tape.param(arr(&[2, 2], vec![1.0, 0.0, 0.0, 1.0]));
        let b = tape.param(arr(&[2], vec![3.0, 3.0]));
        let y = tape.dense(x, w, b).unwrap();
        assert_eq!(tape.value_of(y).data(), &[4.0, 5.0]);
    }

    #[test]
    fn softmax_rows_sum_to_one() {
        let tape = Tape::<f64>::new();
        let x = tape.param(arr(&[2, 2], vec![0.0, 0.0, 1000.0, 0.0]));
        let s = tape.softmax_last(x).unwrap();
        let v = tape.value_of(s);
        assert!((v.data()[0] - 0.5).abs() < 1e-12);
        assert!((v.data()[1] - 0.5).abs() < 1e-12);
        // Large logits must not overflow.
        assert!((v.data()[2] - 1.0).abs() < 1e-12);
        assert!(v.data()[3].abs() < 1e-12);
    }

    #[test]
    fn softmax_rejects_nan() {
        let tape = Tape::<f64>::new();
        let x = tape.param(arr(&[2], vec![f64::NAN, 0.0]));
        assert!(matches!(
            tape.softmax_last(x),
            Err(NumError::NotFinite { .. })
        ));
    }

    #[test]
    fn layer_norm_constant_row_is_zero() {
        let tape = Tape::<f64>::new();
        let x = tape.param(arr(&[1, 4], vec![3.0; 4]));
        let g = tape.param(arr(&[4], vec![1.0; 4]));
        let b = tape.param(arr(&[4], vec![0.0; 4]));
        let y = tape.layer_norm(x, g, b, 1e-5).unwrap();
        for &v in tape.value_of(y).data() {
            assert!(v.abs() < 1e-9);
        }
    }

    #[test]
    fn layer_norm_two_point_row() {
        let tape = Tape::<f64>::new();
        let x = tape.param(arr(&[1, 2], vec![1.0, 3.0]));
        let g = tape.param(arr(&[2], vec![1.0, 1.0]));
        let b = tape.param(arr(&[2], vec![0.0, 0.0]));
        let y = tape.layer_norm(x, g, b, 1e-5).unwrap();
        let v = tape.value_of(y);
        assert!((v.data()[0] + 1.0).abs() < 1e-4);
        assert!((v.data()[1] - 1.0).abs() < 1e-4);
    }

    #[test]
    fn dropout_infer_is_identity() {
        let tape = Tape::<f64>::new();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = tape.param(arr(&[4], vec![1.0, 2.0, 3.0, 4.0]));
        let y = tape.dropout(x, 0.1, Mode::Infer, &mut rng).unwrap();
        assert_eq!(tape.value_of(y).data(), &[1.0, 2.0, 3.0, 4.0]);
    }

    #[test]
    fn dropout_rate_zero_is_identity_in_train() {
        let tape = Tape::<f64>::new();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = tape.param(arr(&[4], vec![1.0, 2.0, 3.0, 4.0]));
        let y = tape.dropout(x, 0.0, Mode::Train, &mut rng).unwrap();
        assert_eq!(tape.value_of(y).data(), &[1.0, 2.0, 3.0, 4.0]);
    }

    #[test]
    fn dropout_is_reproducible_per_seed() {
        let run = || {
            let tape = Tape::<f64>::new();
            let mut rng = ChaCha8Rng::seed_from_u64(99);
            let x = tape.param(NdArray::filled(&[64], 1.0));
            let y = tape.dropout(x, 0.5, Mode::Train, &mut rng).unwrap();
            tape.value_of(y).into_data()
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn sparse_ce_uniform_is_log_v() {
        let tape = Tape::<f64>::new();
        let v = 7usize;
        let logits = tape.param(NdArray::zeros(&[3, v]));
        let loss = tape.sparse_ce(logits, &[0, 3, 6]).unwrap();
        let got = tape.value_of(loss).scalar_value();
        assert!((got - (v as f64).ln()).abs() < 1e-12);
    }

    #[test]
    fn sparse_ce_confident_logit_drives_loss_to_zero() {
        let tape = Tape::<f64>::new();
        let mut data = vec![0.0; 3];
        data[1] = 50.0;
        let logits = tape.param(arr(&[1, 3], data));
        let loss = tape.sparse_ce(logits, &[1]).unwrap();
        assert!(tape.value_of(loss).scalar_value() < 1e-12);
    }

    #[test]
    fn sparse_ce_rejects_out_of_range_target() {
        let tape = Tape::<f64>::new();
        let logits = tape.param(NdArray::zeros(&[1, 3]));
        assert!(matches!(
            tape.sparse_ce(logits, &[3]),
            Err(NumError::IndexOutOfRange { .. })
        ));
    }

    #[test]
    fn sparse_ce_matches_direct_formula() {
        let tape = Tape::<f64>::new();
        let logits_data = vec![0.3, -1.2, 2.0];
        let logits = tape.param(arr(&[1, 3], logits_data.clone()));
        let loss = tape.sparse_ce(logits, &[2]).unwrap();
        let z: f64 = logits_data.iter().map(|x| x.exp()).sum();
        let expected = -(logits_data[2].exp() / z).ln();
        assert!((tape.value_of(loss).scalar_value() - expected).abs() < 1e-10);
    }

    #[test]
    fn slice_concat_round_trip() {
        let tape = Tape::<f64>::new();
        let x = tape.param(arr(&[2, 4], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0]));
        let a = tape.slice_cols(x, 0, 2).unwrap();
        let b = tape.slice_cols(x, 2, 2).unwrap();
        let back = tape.concat_cols(&[a, b]).unwrap();
        assert_eq!(tape.value_of(back), tape.value_of(x));
    }

    #[test]
    fn embedding_gathers_and_scatters() {
        let tape = Tape::<f64>::new();
        let table = tape.param(arr(&[3, 2], vec![0.0, 1.0, 10.0, 11.0, 20.0, 21.0]));
        let out = tape.embedding(table, &[2, 0, 2]).unwrap();
        assert_eq!(tape.value_of(out).data(), &[20.0, 21.0, 0.0, 1.0, 20.0, 21.0]);
        let loss = tape.sum_all(out);
        let grads = tape.backward(loss).unwrap();
        // Row 2 gathered twice, row 1 never.
        assert_eq!(grads.wrt(table).unwrap().data(), &[1.0, 1.0, 0.0, 0.0, 2.0, 2.0]);
    }

    #[test]
    fn embedding_rejects_out_of_range_id() {
        let tape = Tape::<f64>::new();
        let table = tape.param(NdArray::zeros(&[3, 2]));
        assert!(tape.embedding(table, &[3]).is_err());
    }

    #[test]
    fn backward_requires_scalar_root() {
        let tape = Tape::<f64>::new();
        let x = tape.param(NdArray::zeros(&[2, 2]));
        assert!(matches!(
            tape.backward(x),
            Err(NumError::NonScalarRoot { .. })
        ));
    }
}
