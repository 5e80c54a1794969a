//! Reverse-mode differentiation over matrix-valued nodes.
//!
//! One forward pass owns one [`Tape`]. Parameters enter through
//! [`Tape::param`] or [`Tape::gather_param`] and are identified by a
//! [`ParamId`]; [`Tape::backward`] returns one gradient slot per parameter.

use crate::numerics::matrix::{dot, Matrix};
use crate::numerics::ops;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub usize);

#[derive(Debug)]
enum Op {
    Constant,
    Param(ParamId),
    GatherParam {
        param: ParamId,
        table_rows: usize,
        ids: Vec<usize>,
    },
    Add(Var, Var),
    Mul(Var, Var),
    AddRowBias(Var, Var),
    MatMul(Var, Var),
    MatMulTransposed(Var, Var),
    Affine(Var, f64),
    MulScalar(Var, Var),
    LayerNorm {
        x: Var,
        gain: Var,
        bias: Var,
        normed: Matrix,
        inv_std: Vec<f64>,
    },
    Gelu(Var),
    SoftmaxRows {
        x: Var,
        mask: Vec<bool>,
    },
    SliceCols {
        x: Var,
        start: usize,
    },
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    MaxPoolRows {
        x: Var,
        argmax: Vec<usize>,
    },
    RowCosine {
        x: Var,
        v: Var,
        mask: Vec<bool>,
    },
    MinMaxScale {
        s: Var,
        mask: Vec<bool>,
        lo: usize,
        hi: usize,
        range: f64,
    },
    MaskedMax {
        s: Var,
        argmax: usize,
    },
    ScaleRows {
        x: Var,
        s: Var,
    },
    Linearized {
        x: Var,
        jacobian: Matrix,
    },
    NllPick {
        logits: Var,
        mask: Vec<bool>,
        target: usize,
        probs: Vec<f64>,
    },
}

#[derive(Debug)]
struct Node {
    value: Matrix,
    op: Op,
}

/// Recorded forward computation.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    margin: f64,
}

/// Gradients indexed by [`ParamId`]; `None` means the parameter never
/// entered the forward pass.
pub type ParamGrads = Vec<Option<Matrix>>;

/// Gap between the winner and the runner-up of a max/min selection, or
/// `INFINITY` when there is no runner-up. A repeated winner is a zero gap.
fn selection_gap(values: impl Iterator<Item = f64>, winner: f64) -> f64 {
    let mut gap = f64::INFINITY;
    let mut seen_winner = false;
    for v in values {
        if v == winner && !seen_winner {
            seen_winner = true;
            continue;
        }
        gap = gap.min((winner - v).abs());
    }
    gap
}

impl Tape {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            margin: f64::INFINITY,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Smallest gap seen at any argmax/argmin decision on this tape. Finite
    /// differences are only trustworthy when this exceeds the probe step.
    pub fn decision_margin(&self) -> f64 {
        self.margin
    }

    pub fn value(&self, v: Var) -> &Matrix {
        &self.nodes[v.0].value
    }

    // Non-finite values are allowed through; the training loop checks the
    // loss and reports the failing step.
    fn push(&mut self, value: Matrix, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    fn note_margin(&mut self, gap: f64) {
        self.margin = self.margin.min(gap);
    }

    pub fn constant(&mut self, value: Matrix) -> Var {
        self.push(value, Op::Constant)
    }

    pub fn param(&mut self, id: ParamId, value: &Matrix) -> Var {
        self.push(value.clone(), Op::Param(id))
    }

    /// Row lookup into a parameter table without copying the whole table.
    pub fn gather_param(&mut self, id: ParamId, table: &Matrix, ids: &[usize]) -> Var {
        let mut out = Matrix::zeros(ids.len(), table.cols());
        for (r, &i) in ids.iter().enumerate() {
            out.row_mut(r).copy_from_slice(table.row(i));
        }
        self.push(
            out,
            Op::GatherParam {
                param: id,
                table_rows: table.rows(),
                ids: ids.to_vec(),
            },
        )
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a).zip_map(self.value(b), |x, y| x + y);
        debug_assert_eq!(self.value(a).shape(), self.value(b).shape());
        self.push(value, Op::Add(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        debug_assert_eq!(self.value(a).shape(), self.value(b).shape());
        let value = self.value(a).zip_map(self.value(b), |x, y| x * y);
        self.push(value, Op::Mul(a, b))
    }

    /// Adds a `1 x C` bias to every row of an `N x C` matrix.
    pub fn add_row_bias(&mut self, x: Var, bias: Var) -> Var {
        let b = self.value(bias).data().to_vec();
        let mut value = self.value(x).clone();
        debug_assert_eq!(value.cols(), b.len());
        for r in 0..value.rows() {
            for (v, bb) in value.row_mut(r).iter_mut().zip(&b) {
                *v += bb;
            }
        }
        self.push(value, Op::AddRowBias(x, bias))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let value = self
            .value(a)
            .matmul(self.value(b))
            .expect("matmul shape mismatch on tape");
        self.push(value, Op::MatMul(a, b))
    }

    /// `a · bᵀ`
    pub fn matmul_transposed(&mut self, a: Var, b: Var) -> Var {
        let value = self
            .value(a)
            .matmul_transposed(self.value(b))
            .expect("matmul shape mismatch on tape");
        self.push(value, Op::MatMulTransposed(a, b))
    }

    /// `x * factor + offset`
    pub fn affine(&mut self, x: Var, factor: f64, offset: f64) -> Var {
        let value = self.value(x).map(|v| v * factor + offset);
        self.push(value, Op::Affine(x, factor))
    }

    /// Clamps to [0, 1] with an identity gradient. Only for values that are
    /// in range exactly and may leave it by rounding.
    pub fn clamp_unit(&mut self, x: Var) -> Var {
        let value = self.value(x).map(|v| v.clamp(0.0, 1.0));
        self.push(value, Op::Affine(x, 1.0))
    }

    /// Multiplies every entry of `x` by the 1x1 node `s`.
    pub fn mul_scalar(&mut self, s: Var, x: Var) -> Var {
        let factor = self.value(s).item();
        let value = self.value(x).scale(factor);
        self.push(value, Op::MulScalar(s, x))
    }

    /// Row-wise layer normalization with `1 x C` gain and bias.
    pub fn layer_norm_rows(&mut self, x: Var, gain: Var, bias: Var, eps: f64) -> Var {
        let xv = self.value(x);
        let (rows, cols) = xv.shape();
        let mut normed = Matrix::zeros(rows, cols);
        let mut inv_std = Vec::with_capacity(rows);
        for r in 0..rows {
            let (n, inv) = ops::normalize(xv.row(r), eps);
            normed.row_mut(r).copy_from_slice(&n);
            inv_std.push(inv);
        }
        let g = self.value(gain).data();
        let b = self.value(bias).data();
        let mut value = normed.clone();
        for r in 0..rows {
            for ((v, gg), bb) in value.row_mut(r).iter_mut().zip(g).zip(b) {
                *v = *v * gg + bb;
            }
        }
        self.push(
            value,
            Op::LayerNorm {
                x,
                gain,
                bias,
                normed,
                inv_std,
            },
        )
    }

    pub fn gelu(&mut self, x: Var) -> Var {
        let value = self.value(x).map(ops::gelu);
        self.push(value, Op::Gelu(x))
    }

    /// Softmax along each row, restricted to the columns where `mask` is set.
    pub fn softmax_rows(&mut self, x: Var, mask: &[bool]) -> Var {
        let xv = self.value(x);
        let mut value = Matrix::zeros(xv.rows(), xv.cols());
        for r in 0..xv.rows() {
            let p = ops::masked_softmax(xv.row(r), mask).expect("softmax row fully masked");
            value.row_mut(r).copy_from_slice(&p);
        }
        self.push(
            value,
            Op::SoftmaxRows {
                x,
                mask: mask.to_vec(),
            },
        )
    }

    pub fn slice_cols(&mut self, x: Var, start: usize, len: usize) -> Var {
        let xv = self.value(x);
        let mut value = Matrix::zeros(xv.rows(), len);
        for r in 0..xv.rows() {
            value.row_mut(r).copy_from_slice(&xv.row(r)[start..start + len]);
        }
        self.push(value, Op::SliceCols { x, start })
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        let rows = self.value(parts[0]).rows();
        let cols: usize = parts.iter().map(|p| self.value(*p).cols()).sum();
        let mut value = Matrix::zeros(rows, cols);
        for r in 0..rows {
            let mut offset = 0;
            for p in parts {
                let pv = self.value(*p);
                debug_assert_eq!(pv.rows(), rows);
                value.row_mut(r)[offset..offset + pv.cols()].copy_from_slice(pv.row(r));
                offset += pv.cols();
            }
        }
        self.push(value, Op::ConcatCols(parts.to_vec()))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Var {
        let cols = self.value(parts[0]).cols();
        let mut data = Vec::new();
        let mut rows = 0;
        for p in parts {
            let pv = self.value(*p);
            debug_assert_eq!(pv.cols(), cols);
            data.extend_from_slice(pv.data());
            rows += pv.rows();
        }
        let value = Matrix::from_vec(rows, cols, data).expect("concat_rows");
        self.push(value, Op::ConcatRows(parts.to_vec()))
    }

    /// Column-wise max over unmasked rows, giving a `1 x C` node.
    pub fn max_pool_rows(&mut self, x: Var, mask: &[bool]) -> crate::Result<Var> {
        let xv = self.value(x);
        let (best, argmax) = ops::max_pool_rows_with_argmax(xv, mask)?;
        let mut gap = f64::INFINITY;
        for (c, &b) in best.iter().enumerate() {
            let column = (0..xv.rows()).filter(|&r| mask[r]).map(|r| xv.get(r, c));
            gap = gap.min(selection_gap(column, b));
        }
        self.note_margin(gap);
        Ok(self.push(Matrix::row_vector(best), Op::MaxPoolRows { x, argmax }))
    }

    /// `N x 1` cosine between each masked row of `x` and the `1 x H` node `v`;
    /// unmasked rows give 0.
    pub fn row_cosine(&mut self, x: Var, v: Var, mask: &[bool]) -> Var {
        let xv = self.value(x);
        let vv = self.value(v).data();
        let values = (0..xv.rows())
            .map(|r| {
                if mask[r] {
                    ops::cosine_unchecked(xv.row(r), vv)
                } else {
                    0.0
                }
            })
            .collect();
        self.push(
            Matrix::column(values),
            Op::RowCosine {
                x,
                v,
                mask: mask.to_vec(),
            },
        )
    }

    /// Min-max scaling of an `N x 1` node over the masked entries; unmasked
    /// entries give 0. Degenerate (constant) input gives ones.
    pub fn min_max_scale(&mut self, s: Var, mask: &[bool]) -> crate::Result<Var> {
        let sv = self.value(s).data().to_vec();
        let idx: Vec<usize> = (0..sv.len()).filter(|&i| mask[i]).collect();
        let selected: Vec<f64> = idx.iter().map(|&i| sv[i]).collect();
        let scaled = ops::min_max_scale(&selected)?;
        let (lo_local, hi_local) = ops::argmin_argmax(&selected);
        let (lo, hi) = (idx[lo_local], idx[hi_local]);
        let range = sv[hi] - sv[lo];
        if range != 0.0 {
            let gap_hi = selection_gap(selected.iter().copied(), sv[hi]);
            let gap_lo = selection_gap(selected.iter().copied(), sv[lo]);
            self.note_margin(gap_hi.min(gap_lo));
        }
        let mut values = vec![0.0; sv.len()];
        for (&i, v) in idx.iter().zip(scaled) {
            values[i] = v;
        }
        Ok(self.push(
            Matrix::column(values),
            Op::MinMaxScale {
                s,
                mask: mask.to_vec(),
                lo,
                hi,
                range,
            },
        ))
    }

    /// Maximum over masked entries of an `N x 1` node, as a 1x1 node.
    pub fn masked_max(&mut self, s: Var, mask: &[bool]) -> crate::Result<Var> {
        let sv = self.value(s).data();
        let mut argmax = None;
        for (i, &v) in sv.iter().enumerate() {
            if mask[i] && argmax.is_none_or(|a: usize| v > sv[a]) {
                argmax = Some(i);
            }
        }
        let argmax = argmax
            .ok_or_else(|| crate::Error::EmptyDomain("max over an all-masked vector".into()))?;
        let best = sv[argmax];
        let gap = selection_gap(
            sv.iter().zip(mask).filter(|(_, &m)| m).map(|(&v, _)| v),
            best,
        );
        self.note_margin(gap);
        Ok(self.push(Matrix::scalar(best), Op::MaskedMax { s, argmax }))
    }

    /// Scales row `i` of `x` by entry `i` of the `N x 1` node `s`.
    pub fn scale_rows(&mut self, x: Var, s: Var) -> Var {
        let scale = self.value(s).data().to_vec();
        let mut value = self.value(x).clone();
        debug_assert_eq!(value.rows(), scale.len());
        for (r, f) in scale.iter().enumerate() {
            for v in value.row_mut(r) {
                *v *= f;
            }
        }
        self.push(value, Op::ScaleRows { x, s })
    }

    /// Records a node whose value and Jacobian (`out.len() x in.len()`) were
    /// computed outside the tape.
    pub fn linearized(&mut self, x: Var, value: Matrix, jacobian: Matrix) -> Var {
        debug_assert_eq!(jacobian.shape(), (value.len(), self.value(x).len()));
        self.push(value, Op::Linearized { x, jacobian })
    }

    /// Negative log-likelihood of `target` under the masked softmax of a
    /// column (or row) of logits.
    pub fn nll(&mut self, logits: Var, mask: &[bool], target: usize) -> crate::Result<Var> {
        let lv = self.value(logits).data();
        if !mask.get(target).copied().unwrap_or(false) {
            return Err(crate::Error::Input(format!(
                "target position {target} is masked or out of range"
            )));
        }
        let logp = ops::masked_log_softmax(lv, mask)?;
        let probs = logp.iter().map(|l| l.exp()).collect();
        Ok(self.push(
            Matrix::scalar(-logp[target]),
            Op::NllPick {
                logits,
                mask: mask.to_vec(),
                target,
                probs,
            },
        ))
    }

    /// Reverse sweep from the scalar node `loss`.
    pub fn backward(&self, loss: Var, n_params: usize) -> ParamGrads {
        let mut grads: Vec<Option<Matrix>> = (0..=loss.0).map(|_| None).collect();
        let mut param_grads: ParamGrads = (0..n_params).map(|_| None).collect();
        grads[loss.0] = Some(Matrix::filled(1, 1, 1.0));

        fn acc(grads: &mut [Option<Matrix>], v: Var, g: Matrix) {
            match &mut grads[v.0] {
                Some(existing) => existing.add_assign(&g),
                slot => *slot = Some(g),
            }
        }
        fn acc_param(grads: &mut ParamGrads, id: ParamId, g: &Matrix) {
            match &mut grads[id.0] {
                Some(existing) => existing.add_assign(g),
                slot => *slot = Some(g.clone()),
            }
        }

        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            match &node.op {
                Op::Constant => {}
                Op::Param(id) => acc_param(&mut param_grads, *id, &g),
                Op::GatherParam {
                    param,
                    table_rows,
                    ids,
                } => {
                    let slot = param_grads[param.0]
                        .get_or_insert_with(|| Matrix::zeros(*table_rows, g.cols()));
                    for (r, &i) in ids.iter().enumerate() {
                        for (t, gv) in slot.row_mut(i).iter_mut().zip(g.row(r)) {
                            *t += gv;
                        }
                    }
                }
                Op::Add(a, b) => {
                    acc(&mut grads, *b, g.clone());
                    acc(&mut grads, *a, g);
                }
                Op::Mul(a, b) => {
                    let ga = g.zip_map(self.value(*b), |x, y| x * y);
                    let gb = g.zip_map(self.value(*a), |x, y| x * y);
                    acc(&mut grads, *a, ga);
                    acc(&mut grads, *b, gb);
                }
                Op::AddRowBias(x, bias) => {
                    let mut gb = vec![0.0; g.cols()];
                    for r in 0..g.rows() {
                        for (s, v) in gb.iter_mut().zip(g.row(r)) {
                            *s += v;
                        }
                    }
                    acc(&mut grads, *bias, Matrix::row_vector(gb));
                    acc(&mut grads, *x, g);
                }
                Op::MatMul(a, b) => {
                    let ga = g.matmul_transposed(self.value(*b)).unwrap();
                    let gb = self.value(*a).transposed_matmul(&g).unwrap();
                    acc(&mut grads, *a, ga);
                    acc(&mut grads, *b, gb);
                }
                Op::MatMulTransposed(a, b) => {
                    let ga = g.matmul(self.value(*b)).unwrap();
                    let gb = g.transposed_matmul(self.value(*a)).unwrap();
                    acc(&mut grads, *a, ga);
                    acc(&mut grads, *b, gb);
                }
                Op::Affine(x, factor) => acc(&mut grads, *x, g.scale(*factor)),
                Op::MulScalar(s, x) => {
                    let factor = self.value(*s).item();
                    let gs = dot(g.data(), self.value(*x).data());
                    acc(&mut grads, *s, Matrix::scalar(gs));
                    acc(&mut grads, *x, g.scale(factor));
                }
                Op::LayerNorm {
                    x,
                    gain,
                    bias,
                    normed,
                    inv_std,
                } => {
                    let (rows, cols) = g.shape();
                    let gain_v = self.value(*gain).data();
                    let mut g_gain = vec![0.0; cols];
                    let mut g_bias = vec![0.0; cols];
                    let mut gx = Matrix::zeros(rows, cols);
                    for r in 0..rows {
                        let gr = g.row(r);
                        let nr = normed.row(r);
                        for c in 0..cols {
                            g_gain[c] += gr[c] * nr[c];
                            g_bias[c] += gr[c];
                        }
                        let inv = inv_std[r];
                        if inv == 0.0 {
                            continue;
                        }
                        let dn: Vec<f64> = gr.iter().zip(gain_v).map(|(a, b)| a * b).collect();
                        let mean_dn = dn.iter().sum::<f64>() / cols as f64;
                        let mean_dn_n = dot(&dn, nr) / cols as f64;
                        for (c, out) in gx.row_mut(r).iter_mut().enumerate() {
                            *out = inv * (dn[c] - mean_dn - nr[c] * mean_dn_n);
                        }
                    }
                    acc(&mut grads, *gain, Matrix::row_vector(g_gain));
                    acc(&mut grads, *bias, Matrix::row_vector(g_bias));
                    acc(&mut grads, *x, gx);
                }
                Op::Gelu(x) => {
                    let gx = g.zip_map(self.value(*x), |gv, xv| gv * ops::gelu_grad(xv));
                    acc(&mut grads, *x, gx);
                }
                Op::SoftmaxRows { x, mask } => {
                    let y = &node.value;
                    let mut gx = Matrix::zeros(y.rows(), y.cols());
                    for r in 0..y.rows() {
                        let yr = y.row(r);
                        let gr = g.row(r);
                        let inner = dot(yr, gr);
                        for (c, out) in gx.row_mut(r).iter_mut().enumerate() {
                            if mask[c] {
                                *out = yr[c] * (gr[c] - inner);
                            }
                        }
                    }
                    acc(&mut grads, *x, gx);
                }
                Op::SliceCols { x, start } => {
                    let xv = self.value(*x);
                    let mut gx = Matrix::zeros(xv.rows(), xv.cols());
                    for r in 0..g.rows() {
                        gx.row_mut(r)[*start..*start + g.cols()].copy_from_slice(g.row(r));
                    }
                    acc(&mut grads, *x, gx);
                }
                Op::ConcatCols(parts) => {
                    let mut offset = 0;
                    for p in parts {
                        let cols = self.value(*p).cols();
                        let mut gp = Matrix::zeros(g.rows(), cols);
                        for r in 0..g.rows() {
                            gp.row_mut(r).copy_from_slice(&g.row(r)[offset..offset + cols]);
                        }
                        offset += cols;
                        acc(&mut grads, *p, gp);
                    }
                }
                Op::ConcatRows(parts) => {
                    let mut offset = 0;
                    let cols = g.cols();
                    for p in parts {
                        let rows = self.value(*p).rows();
                        let slice = g.data()[offset * cols..(offset + rows) * cols].to_vec();
                        offset += rows;
                        acc(&mut grads, *p, Matrix::from_vec(rows, cols, slice).unwrap());
                    }
                }
                Op::MaxPoolRows { x, argmax } => {
                    let xv = self.value(*x);
                    let mut gx = Matrix::zeros(xv.rows(), xv.cols());
                    for (c, &r) in argmax.iter().enumerate() {
                        gx.set(r, c, g.data()[c]);
                    }
                    acc(&mut grads, *x, gx);
                }
                Op::RowCosine { x, v, mask } => {
                    let xv = self.value(*x);
                    let vv = self.value(*v).data();
                    let nv = dot(vv, vv).sqrt();
                    let mut gx = Matrix::zeros(xv.rows(), xv.cols());
                    let mut gvec = vec![0.0; vv.len()];
                    for r in 0..xv.rows() {
                        if !mask[r] {
                            continue;
                        }
                        let u = xv.row(r);
                        let nu = dot(u, u).sqrt();
                        if nu == 0.0 || nv == 0.0 {
                            continue;
                        }
                        let gr = g.data()[r];
                        let c = node.value.data()[r];
                        let inv = 1.0 / (nu * nv);
                        let gxr = gx.row_mut(r);
                        for k in 0..u.len() {
                            gxr[k] = gr * (vv[k] * inv - c * u[k] / (nu * nu));
                            gvec[k] += gr * (u[k] * inv - c * vv[k] / (nv * nv));
                        }
                    }
                    acc(&mut grads, *x, gx);
                    acc(&mut grads, *v, Matrix::row_vector(gvec));
                }
                Op::MinMaxScale {
                    s,
                    mask,
                    lo,
                    hi,
                    range,
                } => {
                    let n = g.len();
                    let mut gs = vec![0.0; n];
                    if *range != 0.0 {
                        let out = node.value.data();
                        let mut to_lo = 0.0;
                        let mut to_hi = 0.0;
                        for i in 0..n {
                            if !mask[i] {
                                continue;
                            }
                            let gi = g.data()[i];
                            gs[i] += gi / range;
                            to_lo += gi * (out[i] - 1.0) / range;
                            to_hi -= gi * out[i] / range;
                        }
                        gs[*lo] += to_lo;
                        gs[*hi] += to_hi;
                    }
                    acc(&mut grads, *s, Matrix::column(gs));
                }
                Op::MaskedMax { s, argmax } => {
                    let mut gs = vec![0.0; self.value(*s).len()];
                    gs[*argmax] = g.item();
                    let (rows, cols) = self.value(*s).shape();
                    acc(&mut grads, *s, Matrix::from_vec(rows, cols, gs).unwrap());
                }
                Op::ScaleRows { x, s } => {
                    let xv = self.value(*x);
                    let sv = self.value(*s).data();
                    let mut gx = g.clone();
                    let mut gs = vec![0.0; sv.len()];
                    for r in 0..xv.rows() {
                        gs[r] = dot(g.row(r), xv.row(r));
                        for v in gx.row_mut(r) {
                            *v *= sv[r];
                        }
                    }
                    acc(&mut grads, *x, gx);
                    acc(&mut grads, *s, Matrix::column(gs));
                }
                Op::Linearized { x, jacobian } => {
                    let (rows, cols) = self.value(*x).shape();
                    let mut gx = vec![0.0; rows * cols];
                    for (o, &go) in g.data().iter().enumerate() {
                        for (i, gi) in gx.iter_mut().enumerate() {
                            *gi += go * jacobian.get(o, i);
                        }
                    }
                    acc(&mut grads, *x, Matrix::from_vec(rows, cols, gx).unwrap());
                }
                Op::NllPick {
                    logits,
                    mask,
                    target,
                    probs,
                } => {
                    let gl = g.item();
                    let (rows, cols) = self.value(*logits).shape();
                    let values = probs
                        .iter()
                        .enumerate()
                        .map(|(i, p)| {
                            if !mask[i] {
                                0.0
                            } else if i == *target {
                                gl * (p - 1.0)
                            } else {
                                gl * p
                            }
                        })
                        .collect();
                    acc(&mut grads, *logits, Matrix::from_vec(rows, cols, values).unwrap());
                }
            }
        }
        param_grads
    }
}
