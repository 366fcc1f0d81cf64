//! Reverse-mode differentiation over dense row-major matrices.
//!
//! Every forward op records its FLOP cost on the tape: a multiply–add is two
//! FLOPs, any other arithmetic or nonlinearity one FLOP per output element,
//! and pure data movement (gathers, column selection, reshapes) is free.

use std::sync::Arc;

/// Dense row-major matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self { rows, cols, data: vec![0.0; rows * cols] }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(rows * cols, data.len(), "tensor data does not match shape");
        Self { rows, cols, data }
    }

    pub fn scalar(v: f64) -> Self {
        Self::from_vec(1, 1, vec![v])
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }
}

/// `c += a·b` (or `aᵀ`, `bᵀ` when flagged) for row-major operands.
#[allow(clippy::too_many_arguments)]
fn gemm(m: usize, k: usize, n: usize, a: &[f64], a_t: bool, b: &[f64], b_t: bool, c: &mut [f64]) {
    if m == 0 || n == 0 || k == 0 {
        return;
    }
    let (rsa, csa) = if a_t { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if b_t { (1, k as isize) } else { (n as isize, 1) };
    // SAFETY: slices are sized m·k, k·n and m·n; the strides above index
    // within those bounds for the declared shapes.
    unsafe {
        matrixmultiply::dgemm(m, k, n, 1.0, a.as_ptr(), rsa, csa, b.as_ptr(), rsb, csb, 1.0, c.as_mut_ptr(), n as isize, 1);
    }
}

/// Handle to a value on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

/// Per-row constant rotation blocks for spherical features laid out as
/// `[(ℓ² + ℓ + m)·C + c]`.
#[derive(Debug, Clone)]
pub struct RowRotations {
    pub l_max: usize,
    pub channels: usize,
    /// For every row, the concatenated row-major `(2ℓ+1)²` blocks for ℓ = 0..=l_max.
    pub blocks: Vec<f64>,
}

impl RowRotations {
    pub fn block_len(l_max: usize) -> usize {
        (0..=l_max).map(|l| (2 * l + 1) * (2 * l + 1)).sum()
    }

    fn apply(&self, input: &[f64], rows: usize, transpose: bool, out: &mut [f64]) {
        let c = self.channels;
        let width = c * (self.l_max + 1) * (self.l_max + 1);
        let bl = Self::block_len(self.l_max);
        for r in 0..rows {
            let x = &input[r * width..(r + 1) * width];
            let y = &mut out[r * width..(r + 1) * width];
            let mut off = r * bl;
            for l in 0..=self.l_max {
                let d = 2 * l + 1;
                let base = l * l * c;
                let blk = &self.blocks[off..off + d * d];
                for i in 0..d {
                    let yi = &mut y[base + i * c..base + (i + 1) * c];
                    for j in 0..d {
                        let coef = if transpose { blk[j * d + i] } else { blk[i * d + j] };
                        if coef == 0.0 {
                            continue;
                        }
                        let xj = &x[base + j * c..base + (j + 1) * c];
                        for (yv, xv) in yi.iter_mut().zip(xj) {
                            *yv += coef * xv;
                        }
                    }
                }
                off += d * d;
            }
        }
    }

    fn flops(&self, rows: usize) -> u64 {
        let per_row: usize = (0..=self.l_max).map(|l| 2 * (2 * l + 1) * (2 * l + 1) * self.channels).sum();
        (rows * per_row) as u64
    }
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    MulCol(Var, Var),
    ScaleRows(Var, Arc<Vec<f64>>),
    Scale(Var, f64),
    Silu(Var),
    Abs(Var),
    RowNorm(Var),
    Sum(Var),
    GatherRows(Var, Arc<Vec<usize>>),
    ScatterRows(Var, Arc<Vec<usize>>, Option<Arc<Vec<f64>>>),
    GatherCols(Var, Arc<Vec<usize>>),
    ScatterCols(Var, Arc<Vec<usize>>),
    Concat(Vec<Var>),
    FoldCols(Var, usize),
    EdgeMatProduct(Var, Var, usize),
    Rotate(Var, Arc<RowRotations>, bool),
    Reshape(Var),
}

struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

/// Records a computation for one backward pass.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
    flops: u64,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    /// Forward FLOPs recorded so far.
    pub fn flops(&self) -> u64 {
        self.flops
    }

    /// Adds externally tabulated cost (geometry preprocessing).
    pub fn add_flops(&mut self, f: u64) {
        self.flops += f;
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        let t = &self.nodes[v.0].value;
        (t.rows, t.cols)
    }

    fn push(&mut self, value: Tensor, op: Op, needs_grad: bool, flops: u64) -> Var {
        self.flops += flops;
        self.nodes.push(Node { value, op, needs_grad });
        Var(self.nodes.len() - 1)
    }

    fn ng(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, false, 0)
    }

    /// A leaf whose gradient is requested.
    pub fn param(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, true, 0)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let (m, k) = self.shape(a);
        let (k2, n) = self.shape(b);
        assert_eq!(k, k2, "matmul inner dimensions {k} and {k2}");
        let mut out = Tensor::zeros(m, n);
        gemm(m, k, n, &self.value(a).data, false, &self.value(b).data, false, &mut out.data);
        let ng = self.ng(a) || self.ng(b);
        self.push(out, Op::MatMul(a, b), ng, (2 * m * k * n) as u64)
    }

    fn zip(&mut self, a: Var, b: Var, f: impl Fn(f64, f64) -> f64, op: Op) -> Var {
        assert_eq!(self.shape(a), self.shape(b), "elementwise shapes differ");
        let (r, c) = self.shape(a);
        let data = self.value(a).data.iter().zip(&self.value(b).data).map(|(x, y)| f(*x, *y)).collect();
        let ng = self.ng(a) || self.ng(b);
        self.push(Tensor::from_vec(r, c, data), op, ng, (r * c) as u64)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        self.zip(a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        self.zip(a, b, |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        self.zip(a, b, |x, y| x * y, Op::Mul(a, b))
    }

    /// Adds a `1 × cols` row to every row.
    pub fn add_row(&mut self, a: Var, row: Var) -> Var {
        let (r, c) = self.shape(a);
        assert_eq!(self.shape(row), (1, c), "bias shape");
        let b = self.value(row).data.clone();
        let mut data = self.value(a).data.clone();
        for chunk in data.chunks_mut(c.max(1)) {
            for (x, y) in chunk.iter_mut().zip(&b) {
                *x += y;
            }
        }
        let ng = self.ng(a) || self.ng(row);
        self.push(Tensor::from_vec(r, c, data), Op::AddRow(a, row), ng, (r * c) as u64)
    }

    /// Multiplies row `i` by `col[i]` for a `rows × 1` variable.
    pub fn mul_col(&mut self, a: Var, col: Var) -> Var {
        let (r, c) = self.shape(a);
        assert_eq!(self.shape(col), (r, 1), "column shape");
        let s = self.value(col).data.clone();
        let mut data = self.value(a).data.clone();
        for (i, chunk) in data.chunks_mut(c.max(1)).enumerate().take(r) {
            for x in chunk.iter_mut() {
                *x *= s[i];
            }
        }
        let ng = self.ng(a) || self.ng(col);
        self.push(Tensor::from_vec(r, c, data), Op::MulCol(a, col), ng, (r * c) as u64)
    }

    /// Multiplies row `i` by the constant `scales[i]`.
    pub fn scale_rows(&mut self, a: Var, scales: Arc<Vec<f64>>) -> Var {
        let (r, c) = self.shape(a);
        assert_eq!(scales.len(), r, "row scale length");
        let mut data = self.value(a).data.clone();
        for (i, chunk) in data.chunks_mut(c.max(1)).enumerate().take(r) {
            for x in chunk.iter_mut() {
                *x *= scales[i];
            }
        }
        let ng = self.ng(a);
        self.push(Tensor::from_vec(r, c, data), Op::ScaleRows(a, scales), ng, (r * c) as u64)
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let (r, c) = self.shape(a);
        let data = self.value(a).data.iter().map(|x| x * s).collect();
        let ng = self.ng(a);
        self.push(Tensor::from_vec(r, c, data), Op::Scale(a, s), ng, (r * c) as u64)
    }

    /// `x·σ(x)`.
    pub fn silu(&mut self, a: Var) -> Var {
        let (r, c) = self.shape(a);
        let data = self.value(a).data.iter().map(|&x| x / (1.0 + (-x).exp())).collect();
        let ng = self.ng(a);
        self.push(Tensor::from_vec(r, c, data), Op::Silu(a), ng, (r * c) as u64)
    }

    /// Elementwise absolute value; subgradient 0 at 0.
    pub fn abs(&mut self, a: Var) -> Var {
        let (r, c) = self.shape(a);
        let data = self.value(a).data.iter().map(|x| x.abs()).collect();
        let ng = self.ng(a);
        self.push(Tensor::from_vec(r, c, data), Op::Abs(a), ng, (r * c) as u64)
    }

    /// Euclidean norm of each row, `rows × 1`; subgradient 0 at the origin.
    pub fn row_norm(&mut self, a: Var) -> Var {
        let (r, c) = self.shape(a);
        let v = self.value(a);
        let data = (0..r).map(|i| v.row(i).iter().map(|x| x * x).sum::<f64>().sqrt()).collect();
        let ng = self.ng(a);
        self.push(Tensor::from_vec(r, 1, data), Op::RowNorm(a), ng, (2 * r * c) as u64)
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let n = self.value(a).len();
        let s = self.value(a).data.iter().sum();
        let ng = self.ng(a);
        self.push(Tensor::scalar(s), Op::Sum(a), ng, n as u64)
    }

    /// Row `i` of the output is row `idx[i]` of `a`.
    pub fn gather_rows(&mut self, a: Var, idx: Arc<Vec<usize>>) -> Var {
        let (_, c) = self.shape(a);
        let v = self.value(a);
        let mut data = Vec::with_capacity(idx.len() * c);
        for &i in idx.iter() {
            data.extend_from_slice(v.row(i));
        }
        let ng = self.ng(a);
        self.push(Tensor::from_vec(idx.len(), c, data), Op::GatherRows(a, idx), ng, 0)
    }

    /// Sums row `i` of `a` (times `weights[i]`, if given) into output row `idx[i]`.
    pub fn scatter_rows(&mut self, a: Var, idx: Arc<Vec<usize>>, n_out: usize, weights: Option<Arc<Vec<f64>>>) -> Var {
        let (r, c) = self.shape(a);
        assert_eq!(idx.len(), r, "scatter index length");
        let v = self.value(a);
        let mut out = Tensor::zeros(n_out, c);
        for (i, &t) in idx.iter().enumerate() {
            let w = weights.as_ref().map_or(1.0, |w| w[i]);
            let dst = &mut out.data[t * c..(t + 1) * c];
            for (d, s) in dst.iter_mut().zip(v.row(i)) {
                *d += w * s;
            }
        }
        let per = if weights.is_some() { 2 } else { 1 };
        let ng = self.ng(a);
        self.push(out, Op::ScatterRows(a, idx, weights), ng, (per * r * c) as u64)
    }

    /// Output column `j` is column `cols[j]` of `a`.
    pub fn gather_cols(&mut self, a: Var, cols: Arc<Vec<usize>>) -> Var {
        let (r, _) = self.shape(a);
        let v = self.value(a);
        let mut data = Vec::with_capacity(r * cols.len());
        for i in 0..r {
            let row = v.row(i);
            data.extend(cols.iter().map(|&j| row[j]));
        }
        let ng = self.ng(a);
        self.push(Tensor::from_vec(r, cols.len(), data), Op::GatherCols(a, cols), ng, 0)
    }

    /// Places column `j` of `a` at column `cols[j]` of a zero `rows × total` output.
    pub fn scatter_cols(&mut self, a: Var, cols: Arc<Vec<usize>>, total: usize) -> Var {
        let (r, c) = self.shape(a);
        assert_eq!(cols.len(), c, "column map length");
        let v = self.value(a);
        let mut out = Tensor::zeros(r, total);
        for i in 0..r {
            for (j, &t) in cols.iter().enumerate() {
                out.data[i * total + t] += v.data[i * c + j];
            }
        }
        let ng = self.ng(a);
        self.push(out, Op::ScatterCols(a, cols), ng, 0)
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        let r = self.shape(parts[0]).0;
        let total: usize = parts.iter().map(|p| self.shape(*p).1).sum();
        let mut out = Tensor::zeros(r, total);
        let mut off = 0;
        for p in parts {
            let v = self.value(*p);
            assert_eq!(v.rows, r, "concat row mismatch");
            for i in 0..r {
                out.data[i * total + off..i * total + off + v.cols].copy_from_slice(v.row(i));
            }
            off += v.cols;
        }
        let ng = parts.iter().any(|p| self.ng(*p));
        self.push(out, Op::Concat(parts.to_vec()), ng, 0)
    }

    /// Sums `k` equal column blocks: `[n, k·m] → [n, m]`.
    pub fn fold_cols(&mut self, a: Var, k: usize) -> Var {
        let (r, c) = self.shape(a);
        assert_eq!(c % k, 0, "fold block count");
        let m = c / k;
        let v = self.value(a);
        let mut out = Tensor::zeros(r, m);
        for i in 0..r {
            for b in 0..k {
                for j in 0..m {
                    out.data[i * m + j] += v.data[i * c + b * m + j];
                }
            }
        }
        let ng = self.ng(a);
        self.push(out, Op::FoldCols(a, k), ng, (r * c) as u64)
    }

    /// Row-wise `[3, E] · [E, E]` product: `out[a·E+j] = Σ_i x[a·E+i]·phi[i·E+j]`.
    pub fn edge_mat_product(&mut self, x: Var, phi: Var, e: usize) -> Var {
        let (r, c) = self.shape(x);
        assert_eq!(c, 3 * e, "vector channel layout");
        assert_eq!(self.shape(phi), (r, e * e), "mixer shape");
        let xv = &self.value(x).data;
        let pv = &self.value(phi).data;
        let mut out = Tensor::zeros(r, 3 * e);
        for row in 0..r {
            gemm(
                3,
                e,
                e,
                &xv[row * 3 * e..(row + 1) * 3 * e],
                false,
                &pv[row * e * e..(row + 1) * e * e],
                false,
                &mut out.data[row * 3 * e..(row + 1) * 3 * e],
            );
        }
        let ng = self.ng(x) || self.ng(phi);
        self.push(out, Op::EdgeMatProduct(x, phi, e), ng, (r * 2 * 3 * e * e) as u64)
    }

    /// Applies per-row Wigner blocks (or their transposes) to spherical features.
    pub fn rotate(&mut self, a: Var, rot: Arc<RowRotations>, transpose: bool) -> Var {
        let (r, c) = self.shape(a);
        assert_eq!(c, rot.channels * (rot.l_max + 1) * (rot.l_max + 1), "spherical width");
        assert_eq!(rot.blocks.len(), r * RowRotations::block_len(rot.l_max), "rotation count");
        let mut out = Tensor::zeros(r, c);
        rot.apply(&self.value(a).data, r, transpose, &mut out.data);
        let f = rot.flops(r);
        let ng = self.ng(a);
        self.push(out, Op::Rotate(a, rot, transpose), ng, f)
    }

    /// Reinterprets the row-major data with a new shape.
    pub fn reshape(&mut self, a: Var, rows: usize, cols: usize) -> Var {
        let v = self.value(a);
        assert_eq!(v.len(), rows * cols, "reshape size");
        let t = Tensor::from_vec(rows, cols, v.data.clone());
        let ng = self.ng(a);
        self.push(t, Op::Reshape(a), ng, 0)
    }

    /// Gradients of the scalar `root` with respect to every variable; entries
    /// are `None` for variables that do not influence it or need no gradient.
    pub fn backward(&self, root: Var) -> Gradients {
        assert_eq!(self.shape(root), (1, 1), "backward needs a scalar");
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[root.0] = Some(vec![1.0]);
        for i in (0..=root.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if !node.needs_grad {
                continue;
            }
            self.propagate(&node.op, &node.value, &g, &mut grads);
            grads[i] = Some(g);
        }
        Gradients { grads }
    }

    fn acc<'a>(&self, grads: &'a mut [Option<Vec<f64>>], v: Var) -> Option<&'a mut Vec<f64>> {
        if !self.nodes[v.0].needs_grad {
            return None;
        }
        let n = self.nodes[v.0].value.len();
        Some(grads[v.0].get_or_insert_with(|| vec![0.0; n]))
    }

    fn propagate(&self, op: &Op, out: &Tensor, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        match op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (m, k) = self.shape(*a);
                let n = self.shape(*b).1;
                let bv = &self.value(*b).data;
                if let Some(ga) = self.acc(grads, *a) {
                    gemm(m, n, k, g, false, bv, true, ga);
                }
                let av = &self.value(*a).data;
                if let Some(gb) = self.acc(grads, *b) {
                    gemm(k, m, n, av, true, g, false, gb);
                }
            }
            Op::Add(a, b) => {
                for v in [*a, *b] {
                    if let Some(gv) = self.acc(grads, v) {
                        add_into(gv, g);
                    }
                }
            }
            Op::Sub(a, b) => {
                if let Some(ga) = self.acc(grads, *a) {
                    add_into(ga, g);
                }
                if let Some(gb) = self.acc(grads, *b) {
                    for (x, y) in gb.iter_mut().zip(g) {
                        *x -= y;
                    }
                }
            }
            Op::Mul(a, b) => {
                let bv = &self.value(*b).data;
                if let Some(ga) = self.acc(grads, *a) {
                    for ((x, y), z) in ga.iter_mut().zip(g).zip(bv) {
                        *x += y * z;
                    }
                }
                let av = &self.value(*a).data;
                if let Some(gb) = self.acc(grads, *b) {
                    for ((x, y), z) in gb.iter_mut().zip(g).zip(av) {
                        *x += y * z;
                    }
                }
            }
            Op::AddRow(a, row) => {
                if let Some(ga) = self.acc(grads, *a) {
                    add_into(ga, g);
                }
                let c = out.cols;
                if let Some(gr) = self.acc(grads, *row) {
                    for chunk in g.chunks(c.max(1)) {
                        add_into(gr, chunk);
                    }
                }
            }
            Op::MulCol(a, col) => {
                let c = out.cols;
                let s = &self.value(*col).data;
                if let Some(ga) = self.acc(grads, *a) {
                    for (i, (gx, gy)) in ga.chunks_mut(c.max(1)).zip(g.chunks(c.max(1))).enumerate() {
                        for (x, y) in gx.iter_mut().zip(gy) {
                            *x += y * s[i];
                        }
                    }
                }
                let av = &self.value(*a).data;
                if let Some(gc) = self.acc(grads, *col) {
                    for (i, (gy, ay)) in g.chunks(c.max(1)).zip(av.chunks(c.max(1))).enumerate() {
                        gc[i] += gy.iter().zip(ay).map(|(p, q)| p * q).sum::<f64>();
                    }
                }
            }
            Op::ScaleRows(a, scales) => {
                let c = out.cols;
                if let Some(ga) = self.acc(grads, *a) {
                    for (i, (gx, gy)) in ga.chunks_mut(c.max(1)).zip(g.chunks(c.max(1))).enumerate() {
                        for (x, y) in gx.iter_mut().zip(gy) {
                            *x += y * scales[i];
                        }
                    }
                }
            }
            Op::Scale(a, s) => {
                if let Some(ga) = self.acc(grads, *a) {
                    for (x, y) in ga.iter_mut().zip(g) {
                        *x += y * s;
                    }
                }
            }
            Op::Silu(a) => {
                let av = &self.value(*a).data;
                if let Some(ga) = self.acc(grads, *a) {
                    for ((x, y), &z) in ga.iter_mut().zip(g).zip(av) {
                        let s = 1.0 / (1.0 + (-z).exp());
                        *x += y * s * (1.0 + z * (1.0 - s));
                    }
                }
            }
            Op::Abs(a) => {
                let av = &self.value(*a).data;
                if let Some(ga) = self.acc(grads, *a) {
                    for ((x, y), &z) in ga.iter_mut().zip(g).zip(av) {
                        if z > 0.0 {
                            *x += y;
                        } else if z < 0.0 {
                            *x -= y;
                        }
                    }
                }
            }
            Op::RowNorm(a) => {
                let av = self.value(*a);
                let c = av.cols;
                if let Some(ga) = self.acc(grads, *a) {
                    for i in 0..av.rows {
                        let n = out.data[i];
                        if n == 0.0 {
                            continue;
                        }
                        for j in 0..c {
                            ga[i * c + j] += g[i] * av.data[i * c + j] / n;
                        }
                    }
                }
            }
            Op::Sum(a) => {
                if let Some(ga) = self.acc(grads, *a) {
                    for x in ga.iter_mut() {
                        *x += g[0];
                    }
                }
            }
            Op::GatherRows(a, idx) => {
                let c = out.cols;
                if let Some(ga) = self.acc(grads, *a) {
                    for (i, &src) in idx.iter().enumerate() {
                        add_into(&mut ga[src * c..(src + 1) * c], &g[i * c..(i + 1) * c]);
                    }
                }
            }
            Op::ScatterRows(a, idx, weights) => {
                let c = out.cols;
                if let Some(ga) = self.acc(grads, *a) {
                    for (i, &t) in idx.iter().enumerate() {
                        let w = weights.as_ref().map_or(1.0, |w| w[i]);
                        for j in 0..c {
                            ga[i * c + j] += w * g[t * c + j];
                        }
                    }
                }
            }
            Op::GatherCols(a, cols) => {
                let ac = self.shape(*a).1;
                let c = out.cols;
                if let Some(ga) = self.acc(grads, *a) {
                    for i in 0..out.rows {
                        for (j, &src) in cols.iter().enumerate() {
                            ga[i * ac + src] += g[i * c + j];
                        }
                    }
                }
            }
            Op::ScatterCols(a, cols) => {
                let ac = self.shape(*a).1;
                let total = out.cols;
                if let Some(ga) = self.acc(grads, *a) {
                    for i in 0..out.rows {
                        for (j, &t) in cols.iter().enumerate() {
                            ga[i * ac + j] += g[i * total + t];
                        }
                    }
                }
            }
            Op::Concat(parts) => {
                let total = out.cols;
                let mut off = 0;
                for p in parts {
                    let pc = self.shape(*p).1;
                    if let Some(gp) = self.acc(grads, *p) {
                        for i in 0..out.rows {
                            add_into(&mut gp[i * pc..(i + 1) * pc], &g[i * total + off..i * total + off + pc]);
                        }
                    }
                    off += pc;
                }
            }
            Op::FoldCols(a, k) => {
                let m = out.cols;
                if let Some(ga) = self.acc(grads, *a) {
                    for i in 0..out.rows {
                        for b in 0..*k {
                            add_into(&mut ga[i * k * m + b * m..i * k * m + (b + 1) * m], &g[i * m..(i + 1) * m]);
                        }
                    }
                }
            }
            Op::EdgeMatProduct(x, phi, e) => {
                let e = *e;
                let rows = out.rows;
                let pv = &self.value(*phi).data;
                if let Some(gx) = self.acc(grads, *x) {
                    for r in 0..rows {
                        // dX = G · Φᵀ
                        gemm(
                            3,
                            e,
                            e,
                            &g[r * 3 * e..(r + 1) * 3 * e],
                            false,
                            &pv[r * e * e..(r + 1) * e * e],
                            true,
                            &mut gx[r * 3 * e..(r + 1) * 3 * e],
                        );
                    }
                }
                let xv = &self.value(*x).data;
                if let Some(gp) = self.acc(grads, *phi) {
                    for r in 0..rows {
                        // dΦ = Xᵀ · G
                        gemm(
                            e,
                            3,
                            e,
                            &xv[r * 3 * e..(r + 1) * 3 * e],
                            true,
                            &g[r * 3 * e..(r + 1) * 3 * e],
                            false,
                            &mut gp[r * e * e..(r + 1) * e * e],
                        );
                    }
                }
            }
            Op::Rotate(a, rot, transpose) => {
                if let Some(ga) = self.acc(grads, *a) {
                    rot.apply(g, out.rows, !*transpose, ga);
                }
            }
            Op::Reshape(a) => {
                if let Some(ga) = self.acc(grads, *a) {
                    add_into(ga, g);
                }
            }
        }
    }
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}

/// Output of [`Tape::backward`].
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
}

impl Gradients {
    /// Gradient of `v`, or zeros of `len` if it received none.
    pub fn get_or_zeros(&self, v: Var, len: usize) -> Vec<f64> {
        self.grads[v.0].clone().unwrap_or_else(|| vec![0.0; len])
    }

    pub fn get(&self, v: Var) -> Option<&[f64]> {
        self.grads[v.0].as_deref()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rand_tensor(rng: &mut ChaCha8Rng, r: usize, c: usize) -> Tensor {
        Tensor::from_vec(r, c, (0..r * c).map(|_| rng.random::<f64>() * 2.0 - 1.0).collect())
    }

    /// Central-difference check of `f` built on a tape from a single parameter.
    fn check(seed: u64, shape: (usize, usize), f: impl Fn(&mut Tape, Var) -> Var) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x0 = rand_tensor(&mut rng, shape.0, shape.1);
        let mut tape = Tape::new();
        let x = tape.param(x0.clone());
        let y = f(&mut tape, x);
        let grad = tape.backward(y).get_or_zeros(x, x0.len());
        let h = 1e-6;
        for i in 0..x0.len() {
            let eval = |delta: f64| {
                let mut t = Tape::new();
                let mut xi = x0.clone();
                xi.data[i] += delta;
                let v = t.param(xi);
                let out = f(&mut t, v);
                t.value(out).data[0]
            };
            let fd = (eval(h) - eval(-h)) / (2.0 * h);
            assert!((fd - grad[i]).abs() < 1e-6 * (1.0 + fd.abs()), "entry {i}: fd {fd} vs {}", grad[i]);
        }
    }

    /// Reduces any output to a scalar with fixed random weights.
    fn project(t: &mut Tape, v: Var, seed: u64) -> Var {
        let (r, c) = t.shape(v);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let w = t.constant(rand_tensor(&mut rng, r, c));
        let p = t.mul(v, w);
        t.sum(p)
    }

    #[test]
    fn quadratic_probe() {
        let mut t = Tape::new();
        let x = t.param(Tensor::from_vec(1, 3, vec![1.5, -2.0, 0.25]));
        let sq = t.mul(x, x);
        let s = t.sum(sq);
        assert_eq!(t.backward(s).get(x).unwrap(), &[3.0, -4.0, 0.5]);
    }

    #[test]
    fn matmul_counts_two_flops_per_multiply_add() {
        let mut t = Tape::new();
        let a = t.constant(Tensor::zeros(1, 7));
        let b = t.constant(Tensor::zeros(7, 7));
        t.matmul(a, b);
        assert_eq!(t.flops(), 2 * 7 * 7);
    }

    #[test]
    fn grad_matmul_both_sides() {
        check(1, (3, 4), |t, x| {
            let mut rng = ChaCha8Rng::seed_from_u64(2);
            let b = t.param(rand_tensor(&mut rng, 4, 2));
            let y = t.matmul(x, b);
            project(t, y, 3)
        });
        check(4, (4, 2), |t, x| {
            let mut rng = ChaCha8Rng::seed_from_u64(5);
            let a = t.constant(rand_tensor(&mut rng, 3, 4));
            let y = t.matmul(a, x);
            project(t, y, 6)
        });
    }

    #[test]
    fn grad_elementwise_and_broadcast() {
        check(7, (3, 4), |t, x| {
            let s = t.silu(x);
            let m = t.mul(s, x);
            let d = t.sub(m, x);
            let a = t.add(d, s);
            let sc = t.scale(a, 0.7);
            project(t, sc, 8)
        });
        check(9, (1, 4), |t, row| {
            let mut rng = ChaCha8Rng::seed_from_u64(10);
            let a = t.param(rand_tensor(&mut rng, 3, 4));
            let y = t.add_row(a, row);
            let y = t.silu(y);
            project(t, y, 11)
        });
        check(12, (3, 1), |t, col| {
            let mut rng = ChaCha8Rng::seed_from_u64(13);
            let a = t.param(rand_tensor(&mut rng, 3, 4));
            let y = t.mul_col(a, col);
            let y = t.scale_rows(y, Arc::new(vec![0.5, -1.0, 2.0]));
            project(t, y, 14)
        });
    }

    #[test]
    fn grad_norms_and_abs() {
        check(15, (4, 3), |t, x| {
            let n = t.row_norm(x);
            let a = t.abs(x);
            let s1 = t.sum(n);
            let s2 = project(t, a, 16);
            t.add(s1, s2)
        });
    }

    #[test]
    fn subgradient_is_zero_at_kinks() {
        let mut t = Tape::new();
        let x = t.param(Tensor::zeros(2, 3));
        let n = t.row_norm(x);
        let a = t.abs(x);
        let s1 = t.sum(n);
        let s2 = t.sum(a);
        let s = t.add(s1, s2);
        assert!(t.backward(s).get(x).unwrap().iter().all(|&g| g == 0.0));
    }

    #[test]
    fn grad_indexing_ops() {
        check(17, (4, 3), |t, x| {
            let g = t.gather_rows(x, Arc::new(vec![0, 2, 2, 3, 1]));
            let s = t.scatter_rows(g, Arc::new(vec![1, 0, 1, 1, 0]), 2, Some(Arc::new(vec![0.5, 1.0, -1.0, 2.0, 0.3])));
            let c = t.gather_cols(s, Arc::new(vec![2, 0]));
            let p = t.scatter_cols(c, Arc::new(vec![3, 1]), 5);
            let cat = t.concat_cols(&[p, s]);
            let f = t.fold_cols(cat, 2);
            let r = t.reshape(f, 1, 8);
            project(t, r, 18)
        });
    }

    #[test]
    fn grad_edge_mat_product() {
        let e = 3;
        check(19, (2, 3 * e), |t, x| {
            let mut rng = ChaCha8Rng::seed_from_u64(20);
            let phi = t.param(rand_tensor(&mut rng, 2, e * e));
            let y = t.edge_mat_product(x, phi, e);
            let y2 = t.mul(y, y);
            project(t, y2, 21)
        });
        check(22, (2, e * e), |t, phi| {
            let mut rng = ChaCha8Rng::seed_from_u64(23);
            let x = t.constant(rand_tensor(&mut rng, 2, 3 * e));
            let y = t.edge_mat_product(x, phi, e);
            project(t, y, 24)
        });
    }

    #[test]
    fn edge_mat_product_matches_loops() {
        let e = 2;
        let x = Tensor::from_vec(1, 6, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let phi = Tensor::from_vec(1, 4, vec![1.0, 0.5, -1.0, 2.0]);
        let mut t = Tape::new();
        let (xv, pv) = (t.constant(x), t.constant(phi));
        let y = t.edge_mat_product(xv, pv, e);
        // row a: [x_a0, x_a1] · [[1, .5], [-1, 2]]
        assert_eq!(t.value(y).data, vec![-1.0, 4.5, -1.0, 9.5, -1.0, 14.5]);
    }

    #[test]
    fn grad_rotation_blocks() {
        use crate::so3::{sample_rotation, wigner_d_all};
        let l_max = 2;
        let c = 2;
        let mut rng = ChaCha8Rng::seed_from_u64(25);
        let mut blocks = Vec::new();
        for _ in 0..3 {
            for d in wigner_d_all(&sample_rotation(&mut rng), l_max) {
                blocks.extend(d.matrix);
            }
        }
        let rot = Arc::new(RowRotations { l_max, channels: c, blocks });
        for tr in [false, true] {
            let rot = rot.clone();
            check(26, (3, c * 9), move |t, x| {
                let y = t.rotate(x, rot.clone(), tr);
                let y2 = t.mul(y, y);
                let s = project(t, y, 27);
                let s2 = t.sum(y2);
                t.add(s, s2)
            });
        }
    }

    #[test]
    fn rotate_then_unrotate_is_identity() {
        use crate::so3::{sample_rotation, wigner_d_all};
        let mut rng = ChaCha8Rng::seed_from_u64(28);
        let blocks: Vec<f64> = wigner_d_all(&sample_rotation(&mut rng), 3).into_iter().flat_map(|d| d.matrix).collect();
        let rot = Arc::new(RowRotations { l_max: 3, channels: 2, blocks });
        let x0 = rand_tensor(&mut rng, 1, 32);
        let mut t = Tape::new();
        let x = t.constant(x0.clone());
        let y = t.rotate(x, rot.clone(), false);
        let z = t.rotate(y, rot, true);
        for (a, b) in t.value(z).data.iter().zip(&x0.data) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn constants_receive_no_gradient() {
        let mut t = Tape::new();
        let c = t.constant(Tensor::scalar(2.0));
        let p = t.param(Tensor::scalar(3.0));
        let m = t.mul(c, p);
        let g = t.backward(m);
        assert!(g.get(c).is_none());
        assert_eq!(g.get(p).unwrap(), &[2.0]);
    }
}
