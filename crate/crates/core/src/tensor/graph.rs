//! Operation recording and reverse-mode differentiation.

use std::cell::RefCell;
use std::collections::HashSet;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::linalg;
use super::{GradStore, Tensor, TensorError};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// Records backward closures and applies dropout.
    Train,
    /// Pure forward pass: no recording, dropout is the identity.
    Eval,
}

struct Node {
    out: Tensor,
    /// Gradient-carrying inputs of this op, kept so backward can write
    /// final leaf gradients onto the tensors themselves.
    tracked: Vec<Tensor>,
    back: Box<dyn Fn(&[f64], &mut GradStore)>,
}

/// A tape of recorded operations. One graph per forward pass; weights are
/// plain tensors that outlive it.
pub struct Graph {
    mode: Mode,
    nodes: RefCell<Vec<Node>>,
}

type OpResult = Result<Tensor, TensorError>;

fn shape_err(op: &'static str, a: &Tensor, b: &Tensor) -> TensorError {
    TensorError::ShapeMismatch {
        op,
        lhs: a.shape(),
        rhs: b.shape(),
    }
}

impl Graph {
    pub fn new(mode: Mode) -> Graph {
        Graph {
            mode,
            nodes: RefCell::new(Vec::new()),
        }
    }

    pub fn train() -> Graph {
        Graph::new(Mode::Train)
    }

    pub fn eval() -> Graph {
        Graph::new(Mode::Eval)
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    fn recording(&self) -> bool {
        self.mode == Mode::Train
    }

    pub fn node_count(&self) -> usize {
        self.nodes.borrow().len()
    }

    fn push(&self, out: &Tensor, tracked: Vec<Tensor>, back: Box<dyn Fn(&[f64], &mut GradStore)>) {
        self.nodes.borrow_mut().push(Node {
            out: out.clone(),
            tracked,
            back,
        });
    }

    /// Records `back` if the graph is in training mode and any input carries
    /// gradients. Returns the output with `requires_grad` propagated.
    fn record(
        &self,
        rows: usize,
        cols: usize,
        data: Vec<f64>,
        inputs: &[&Tensor],
        back: impl Fn(&[f64], &mut GradStore) + 'static,
    ) -> Tensor {
        let needs = inputs.iter().any(|t| t.requires_grad());
        let out = Tensor::result(rows, cols, data, needs);
        if needs && self.recording() {
            let tracked = inputs
                .iter()
                .filter(|t| t.requires_grad())
                .map(|t| (*t).clone())
                .collect();
            self.push(&out, tracked, Box::new(back));
        }
        out
    }

    // ---- elementwise ----

    pub fn add(&self, a: &Tensor, b: &Tensor) -> OpResult {
        if a.shape() != b.shape() {
            return Err(shape_err("add", a, b));
        }
        let data = a.data().iter().zip(b.data().iter()).map(|(x, y)| x + y).collect();
        let (ac, bc) = (a.clone(), b.clone());
        Ok(self.record(a.rows(), a.cols(), data, &[a, b], move |g, store| {
            for t in [&ac, &bc] {
                if t.requires_grad() {
                    let acc = store.entry(t);
                    for (o, gv) in acc.iter_mut().zip(g) {
                        *o += gv;
                    }
                }
            }
        }))
    }

    pub fn sub(&self, a: &Tensor, b: &Tensor) -> OpResult {
        if a.shape() != b.shape() {
            return Err(shape_err("sub", a, b));
        }
        let data = a.data().iter().zip(b.data().iter()).map(|(x, y)| x - y).collect();
        let (ac, bc) = (a.clone(), b.clone());
        Ok(self.record(a.rows(), a.cols(), data, &[a, b], move |g, store| {
            if ac.requires_grad() {
                let acc = store.entry(&ac);
                for (o, gv) in acc.iter_mut().zip(g) {
                    *o += gv;
                }
            }
            if bc.requires_grad() {
                let acc = store.entry(&bc);
                for (o, gv) in acc.iter_mut().zip(g) {
                    *o -= gv;
                }
            }
        }))
    }

    pub fn mul(&self, a: &Tensor, b: &Tensor) -> OpResult {
        if a.shape() != b.shape() {
            return Err(shape_err("mul", a, b));
        }
        let data = a.data().iter().zip(b.data().iter()).map(|(x, y)| x * y).collect();
        let (ac, bc) = (a.clone(), b.clone());
        let (av, bv) = (a.to_vec(), b.to_vec());
        Ok(self.record(a.rows(), a.cols(), data, &[a, b], move |g, store| {
            if ac.requires_grad() {
                let acc = store.entry(&ac);
                for i in 0..g.len() {
                    acc[i] += g[i] * bv[i];
                }
            }
            if bc.requires_grad() {
                let acc = store.entry(&bc);
                for i in 0..g.len() {
                    acc[i] += g[i] * av[i];
                }
            }
        }))
    }

    pub fn scale(&self, a: &Tensor, c: f64) -> OpResult {
        let data = a.data().iter().map(|x| x * c).collect();
        let ac = a.clone();
        Ok(self.record(a.rows(), a.cols(), data, &[a], move |g, store| {
            let acc = store.entry(&ac);
            for (o, gv) in acc.iter_mut().zip(g) {
                *o += c * gv;
            }
        }))
    }

    pub fn add_scalar(&self, a: &Tensor, c: f64) -> OpResult {
        let data = a.data().iter().map(|x| x + c).collect();
        let ac = a.clone();
        Ok(self.record(a.rows(), a.cols(), data, &[a], move |g, store| {
            let acc = store.entry(&ac);
            for (o, gv) in acc.iter_mut().zip(g) {
                *o += gv;
            }
        }))
    }

    /// Adds a 1xN row vector to every row of an MxN matrix.
    pub fn add_row(&self, x: &Tensor, b: &Tensor) -> OpResult {
        if b.rows() != 1 || b.cols() != x.cols() {
            return Err(shape_err("add_row", x, b));
        }
        let (m, n) = x.shape();
        let bd = b.data();
        let mut data = x.to_vec();
        for i in 0..m {
            for j in 0..n {
                data[i * n + j] += bd[j];
            }
        }
        drop(bd);
        let (xc, bc) = (x.clone(), b.clone());
        Ok(self.record(m, n, data, &[x, b], move |g, store| {
            if xc.requires_grad() {
                let acc = store.entry(&xc);
                for (o, gv) in acc.iter_mut().zip(g) {
                    *o += gv;
                }
            }
            if bc.requires_grad() {
                let acc = store.entry(&bc);
                for i in 0..m {
                    for j in 0..n {
                        acc[j] += g[i * n + j];
                    }
                }
            }
        }))
    }

    // ---- products and layout ----

    pub fn matmul(&self, a: &Tensor, b: &Tensor) -> OpResult {
        let (m, ka) = a.shape();
        let (kb, n) = b.shape();
        if ka != kb {
            return Err(shape_err("matmul", a, b));
        }
        let mut data = vec![0.0; m * n];
        linalg::mm_nn_acc(&a.data(), &b.data(), &mut data, m, ka, n);
        let (ac, bc) = (a.clone(), b.clone());
        let (av, bv) = (a.to_vec(), b.to_vec());
        Ok(self.record(m, n, data, &[a, b], move |g, store| {
            if ac.requires_grad() {
                // dA = dC * B^T
                let acc = store.entry(&ac);
                linalg::mm_nt_acc(g, &bv, acc, m, n, ka);
            }
            if bc.requires_grad() {
                // dB = A^T * dC
                let acc = store.entry(&bc);
                linalg::mm_tn_acc(&av, g, acc, m, ka, n);
            }
        }))
    }

    pub fn transpose(&self, a: &Tensor) -> OpResult {
        let (m, n) = a.shape();
        let mut data = vec![0.0; m * n];
        linalg::transpose_into(&a.data(), &mut data, m, n);
        let ac = a.clone();
        Ok(self.record(n, m, data, &[a], move |g, store| {
            let acc = store.entry(&ac);
            // grad of transpose is the transposed gradient
            for i in 0..n {
                for j in 0..m {
                    acc[j * n + i] += g[i * m + j];
                }
            }
        }))
    }

    pub fn concat_rows(&self, parts: &[&Tensor]) -> OpResult {
        assert!(!parts.is_empty(), "concat_rows of zero tensors");
        let cols = parts[0].cols();
        let mut rows = 0;
        for p in parts {
            if p.cols() != cols {
                return Err(shape_err("concat_rows", parts[0], p));
            }
            rows += p.rows();
        }
        let mut data = Vec::with_capacity(rows * cols);
        for p in parts {
            data.extend_from_slice(&p.data());
        }
        let owned: Vec<Tensor> = parts.iter().map(|p| (*p).clone()).collect();
        Ok(self.record(rows, cols, data, parts, move |g, store| {
            let mut off = 0;
            for p in &owned {
                let len = p.numel();
                if p.requires_grad() {
                    let acc = store.entry(p);
                    for (o, gv) in acc.iter_mut().zip(&g[off..off + len]) {
                        *o += gv;
                    }
                }
                off += len;
            }
        }))
    }

    pub fn concat_cols(&self, parts: &[&Tensor]) -> OpResult {
        assert!(!parts.is_empty(), "concat_cols of zero tensors");
        let rows = parts[0].rows();
        let mut cols = 0;
        for p in parts {
            if p.rows() != rows {
                return Err(shape_err("concat_cols", parts[0], p));
            }
            cols += p.cols();
        }
        let mut data = vec![0.0; rows * cols];
        let mut off = 0;
        for p in parts {
            let pc = p.cols();
            let pd = p.data();
            for i in 0..rows {
                data[i * cols + off..i * cols + off + pc].copy_from_slice(&pd[i * pc..(i + 1) * pc]);
            }
            off += pc;
        }
        let owned: Vec<Tensor> = parts.iter().map(|p| (*p).clone()).collect();
        Ok(self.record(rows, cols, data, parts, move |g, store| {
            let mut off = 0;
            for p in &owned {
                let pc = p.cols();
                if p.requires_grad() {
                    let acc = store.entry(p);
                    for i in 0..rows {
                        for j in 0..pc {
                            acc[i * pc + j] += g[i * cols + off + j];
                        }
                    }
                }
                off += pc;
            }
        }))
    }

    pub fn slice_rows(&self, x: &Tensor, start: usize, len: usize) -> OpResult {
        let (m, n) = x.shape();
        assert!(start + len <= m, "slice_rows out of bounds");
        let data = x.data()[start * n..(start + len) * n].to_vec();
        let xc = x.clone();
        Ok(self.record(len, n, data, &[x], move |g, store| {
            let acc = store.entry(&xc);
            for (o, gv) in acc[start * n..(start + len) * n].iter_mut().zip(g) {
                *o += gv;
            }
        }))
    }

    pub fn slice_cols(&self, x: &Tensor, start: usize, len: usize) -> OpResult {
        let (m, n) = x.shape();
        assert!(start + len <= n, "slice_cols out of bounds");
        let xd = x.data();
        let mut data = Vec::with_capacity(m * len);
        for i in 0..m {
            data.extend_from_slice(&xd[i * n + start..i * n + start + len]);
        }
        drop(xd);
        let xc = x.clone();
        Ok(self.record(m, len, data, &[x], move |g, store| {
            let acc = store.entry(&xc);
            for i in 0..m {
                for j in 0..len {
                    acc[i * n + start + j] += g[i * len + j];
                }
            }
        }))
    }

    // ---- nonlinearities ----

    /// Row-wise softmax with max subtraction for overflow safety.
    pub fn softmax_rows(&self, x: &Tensor) -> OpResult {
        let (m, n) = x.shape();
        assert!(n > 0, "softmax_rows on zero-width tensor");
        let xd = x.data();
        let mut data = vec![0.0; m * n];
        for i in 0..m {
            let row = &xd[i * n..(i + 1) * n];
            let mx = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let out = &mut data[i * n..(i + 1) * n];
            let mut z = 0.0;
            for (o, &v) in out.iter_mut().zip(row) {
                *o = (v - mx).exp();
                z += *o;
            }
            for o in out.iter_mut() {
                *o /= z;
            }
        }
        drop(xd);
        let y = data.clone();
        let xc = x.clone();
        Ok(self.record(m, n, data, &[x], move |g, store| {
            let acc = store.entry(&xc);
            for i in 0..m {
                let yr = &y[i * n..(i + 1) * n];
                let gr = &g[i * n..(i + 1) * n];
                let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                let ar = &mut acc[i * n..(i + 1) * n];
                for j in 0..n {
                    ar[j] += yr[j] * (gr[j] - dot);
                }
            }
        }))
    }

    /// Per-row standardization (population variance) followed by an affine
    /// transform with 1xD gain and bias.
    pub fn layer_norm(&self, x: &Tensor, gain: &Tensor, bias: &Tensor, eps: f64) -> OpResult {
        let (m, d) = x.shape();
        assert!(eps > 0.0, "layer_norm eps must be positive");
        if gain.shape() != (1, d) {
            return Err(shape_err("layer_norm", x, gain));
        }
        if bias.shape() != (1, d) {
            return Err(shape_err("layer_norm", x, bias));
        }
        let xd = x.data();
        let gd = gain.data();
        let bd = bias.data();
        let mut data = vec![0.0; m * d];
        let mut xhat = vec![0.0; m * d];
        let mut inv_std = vec![0.0; m];
        for i in 0..m {
            let row = &xd[i * d..(i + 1) * d];
            let mean = row.iter().sum::<f64>() / d as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
            let inv = 1.0 / (var + eps).sqrt();
            inv_std[i] = inv;
            for j in 0..d {
                let h = (row[j] - mean) * inv;
                xhat[i * d + j] = h;
                data[i * d + j] = gd[j] * h + bd[j];
            }
        }
        drop(xd);
        let gv = gd.clone();
        drop(gd);
        drop(bd);
        let (xc, gc, bc) = (x.clone(), gain.clone(), bias.clone());
        Ok(self.record(m, d, data, &[x, gain, bias], move |g, store| {
            if xc.requires_grad() {
                let acc = store.entry(&xc);
                for i in 0..m {
                    let gr = &g[i * d..(i + 1) * d];
                    let hr = &xhat[i * d..(i + 1) * d];
                    let mut dh = vec![0.0; d];
                    for j in 0..d {
                        dh[j] = gr[j] * gv[j];
                    }
                    let mean_dh = dh.iter().sum::<f64>() / d as f64;
                    let mean_dh_h = dh.iter().zip(hr).map(|(a, b)| a * b).sum::<f64>() / d as f64;
                    let ar = &mut acc[i * d..(i + 1) * d];
                    for j in 0..d {
                        ar[j] += inv_std[i] * (dh[j] - mean_dh - hr[j] * mean_dh_h);
                    }
                }
            }
            if gc.requires_grad() {
                let acc = store.entry(&gc);
                for i in 0..m {
                    for j in 0..d {
                        acc[j] += g[i * d + j] * xhat[i * d + j];
                    }
                }
            }
            if bc.requires_grad() {
                let acc = store.entry(&bc);
                for i in 0..m {
                    for j in 0..d {
                        acc[j] += g[i * d + j];
                    }
                }
            }
        }))
    }

    pub fn gelu(&self, x: &Tensor) -> OpResult {
        let xv = x.to_vec();
        let data = xv.iter().map(|&v| gelu_val(v)).collect();
        let xc = x.clone();
        Ok(self.record(x.rows(), x.cols(), data, &[x], move |g, store| {
            let acc = store.entry(&xc);
            for i in 0..g.len() {
                acc[i] += g[i] * gelu_grad(xv[i]);
            }
        }))
    }

    pub fn sigmoid(&self, x: &Tensor) -> OpResult {
        let data: Vec<f64> = x.data().iter().map(|&v| 1.0 / (1.0 + (-v).exp())).collect();
        let y = data.clone();
        let xc = x.clone();
        Ok(self.record(x.rows(), x.cols(), data, &[x], move |g, store| {
            let acc = store.entry(&xc);
            for i in 0..g.len() {
                acc[i] += g[i] * y[i] * (1.0 - y[i]);
            }
        }))
    }

    pub fn tanh(&self, x: &Tensor) -> OpResult {
        let data: Vec<f64> = x.data().iter().map(|&v| v.tanh()).collect();
        let y = data.clone();
        let xc = x.clone();
        Ok(self.record(x.rows(), x.cols(), data, &[x], move |g, store| {
            let acc = store.entry(&xc);
            for i in 0..g.len() {
                acc[i] += g[i] * (1.0 - y[i] * y[i]);
            }
        }))
    }

    /// Inverted dropout. Identity in eval mode or when `p` is zero; in
    /// training mode kept entries are scaled by 1/(1-p).
    pub fn dropout(&self, x: &Tensor, p: f64, rng: &mut ChaCha8Rng) -> OpResult {
        assert!((0.0..1.0).contains(&p), "dropout probability must be in [0, 1)");
        if self.mode == Mode::Eval || p == 0.0 {
            return Ok(x.clone());
        }
        let keep = 1.0 / (1.0 - p);
        let mask: Vec<f64> = (0..x.numel())
            .map(|_| if rng.gen::<f64>() < p { 0.0 } else { keep })
            .collect();
        let data = x.data().iter().zip(&mask).map(|(v, m)| v * m).collect();
        let xc = x.clone();
        Ok(self.record(x.rows(), x.cols(), data, &[x], move |g, store| {
            let acc = store.entry(&xc);
            for i in 0..g.len() {
                acc[i] += g[i] * mask[i];
            }
        }))
    }

    // ---- lookups and reductions ----

    /// Gathers `ids` rows from an embedding table; the gradient scatter-adds
    /// back into the table rows.
    pub fn embedding(&self, table: &Tensor, ids: &[usize]) -> OpResult {
        let (v, d) = table.shape();
        for &id in ids {
            if id >= v {
                return Err(TensorError::IdOutOfRange { id, rows: v });
            }
        }
        let td = table.data();
        let mut data = Vec::with_capacity(ids.len() * d);
        for &id in ids {
            data.extend_from_slice(&td[id * d..(id + 1) * d]);
        }
        drop(td);
        let ids: Vec<usize> = ids.to_vec();
        let tc = table.clone();
        Ok(self.record(ids.len(), d, data, &[table], move |g, store| {
            let acc = store.entry(&tc);
            for (r, &id) in ids.iter().enumerate() {
                let grow = &g[r * d..(r + 1) * d];
                let arow = &mut acc[id * d..(id + 1) * d];
                for (o, gv) in arow.iter_mut().zip(grow) {
                    *o += gv;
                }
            }
        }))
    }

    pub fn sum(&self, x: &Tensor) -> OpResult {
        let s = x.data().iter().sum();
        let xc = x.clone();
        Ok(self.record(1, 1, vec![s], &[x], move |g, store| {
            let acc = store.entry(&xc);
            for o in acc.iter_mut() {
                *o += g[0];
            }
        }))
    }

    /// Column means over the rows where `mask` is true; output is 1xD.
    pub fn mean_rows_masked(&self, x: &Tensor, mask: &[bool]) -> OpResult {
        let (m, d) = x.shape();
        assert_eq!(mask.len(), m, "mask length must match row count");
        let count = mask.iter().filter(|&&b| b).count();
        if count == 0 {
            return Err(TensorError::EmptyMask);
        }
        let inv = 1.0 / count as f64;
        let xd = x.data();
        let mut data = vec![0.0; d];
        for (i, &keep) in mask.iter().enumerate() {
            if keep {
                for j in 0..d {
                    data[j] += xd[i * d + j];
                }
            }
        }
        for v in data.iter_mut() {
            *v *= inv;
        }
        drop(xd);
        let mask: Vec<bool> = mask.to_vec();
        let xc = x.clone();
        Ok(self.record(1, d, data, &[x], move |g, store| {
            let acc = store.entry(&xc);
            for (i, &keep) in mask.iter().enumerate() {
                if keep {
                    for j in 0..d {
                        acc[i * d + j] += g[j] * inv;
                    }
                }
            }
        }))
    }

    /// Mean negative log-likelihood over the rows whose target is not
    /// `ignore_index`. Targets must lie in [0, cols) otherwise.
    pub fn cross_entropy_from_logits(
        &self,
        logits: &Tensor,
        targets: &[usize],
        ignore_index: usize,
    ) -> OpResult {
        let (m, c) = logits.shape();
        assert_eq!(targets.len(), m, "one target per logit row");
        let active: Vec<usize> = (0..m).filter(|&i| targets[i] != ignore_index).collect();
        if active.is_empty() {
            return Err(TensorError::AllIgnored);
        }
        for &i in &active {
            assert!(targets[i] < c, "target {} out of range for {} classes", targets[i], c);
        }
        let ld = logits.data();
        let mut probs = vec![0.0; m * c];
        let mut loss = 0.0;
        for &i in &active {
            let row = &ld[i * c..(i + 1) * c];
            let mx = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let p = &mut probs[i * c..(i + 1) * c];
            let mut z = 0.0;
            for (o, &v) in p.iter_mut().zip(row) {
                *o = (v - mx).exp();
                z += *o;
            }
            for o in p.iter_mut() {
                *o /= z;
            }
            loss -= p[targets[i]].ln();
        }
        let count = active.len() as f64;
        loss /= count;
        drop(ld);
        let targets: Vec<usize> = targets.to_vec();
        let lc = logits.clone();
        Ok(self.record(1, 1, vec![loss], &[logits], move |g, store| {
            let acc = store.entry(&lc);
            let scale = g[0] / count;
            for &i in &active {
                let p = &probs[i * c..(i + 1) * c];
                let ar = &mut acc[i * c..(i + 1) * c];
                for j in 0..c {
                    let onehot = if j == targets[i] { 1.0 } else { 0.0 };
                    ar[j] += scale * (p[j] - onehot);
                }
            }
        }))
    }

    // ---- backward ----

    /// Reverse pass from a scalar loss. Walks the tape in reverse recording
    /// order and accumulates into `grad` on every requires-grad tensor the
    /// tape touched; repeated calls without `zero_grad` keep accumulating.
    pub fn backward(&self, loss: &Tensor) -> Result<(), TensorError> {
        if loss.numel() != 1 {
            return Err(TensorError::NotScalar(loss.shape()));
        }
        let mut store = GradStore::new();
        store.seed(loss, 1.0);
        let nodes = self.nodes.borrow();
        for node in nodes.iter().rev() {
            let Some(gout) = store.take(&node.out) else {
                continue;
            };
            if node.out.requires_grad() {
                node.out.accumulate_grad(&gout);
            }
            (node.back)(&gout, &mut store);
        }
        // Whatever is left in the store belongs to leaves.
        let mut seen: HashSet<u64> = HashSet::new();
        for node in nodes.iter() {
            for t in &node.tracked {
                if seen.insert(t.id()) {
                    if let Some(g) = store.take(t) {
                        t.accumulate_grad(&g);
                    } else {
                        t.ensure_grad();
                    }
                }
            }
            if node.out.requires_grad() && seen.insert(node.out.id()) {
                node.out.ensure_grad();
            }
        }
        if loss.requires_grad() {
            // A bare leaf used directly as the loss never appears on the tape.
            if let Some(g) = store.take(loss) {
                loss.accumulate_grad(&g);
            }
        }
        Ok(())
    }
}

fn gelu_val(x: f64) -> f64 {
    const SQRT_2_OVER_PI: f64 = 0.7978845608028654;
    const C: f64 = 0.044715;
    let u = SQRT_2_OVER_PI * (x + C * x * x * x);
    0.5 * x * (1.0 + u.tanh())
}

fn gelu_grad(x: f64) -> f64 {
    const SQRT_2_OVER_PI: f64 = 0.7978845608028654;
    const C: f64 = 0.044715;
    let u = SQRT_2_OVER_PI * (x + C * x * x * x);
    let t = u.tanh();
    let du = SQRT_2_OVER_PI * (1.0 + 3.0 * C * x * x);
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du
}
