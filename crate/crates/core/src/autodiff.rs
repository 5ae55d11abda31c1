//! Reverse-mode differentiation over dense matrices.
//!
//! A [`Tape`] records every operation as a node holding its value and the
//! ids of its inputs. [`Tape::backward`] walks the nodes in reverse creation
//! order, which is a valid topological order because inputs always exist
//! before the nodes that consume them.
//!
//! ```
//! use paul_core::autodiff::Tape;
//! use paul_core::Matrix;
//!
//! let mut tape = Tape::new();
//! let x = tape.leaf(Matrix::from_rows(&[[3.0, 4.0]]));
//! let n = tape.frobenius_norm(x);
//! assert_eq!(tape.value(n)[(0, 0)], 5.0);
//! let grads = tape.backward(n).unwrap();
//! let g = grads.wrt(&tape, x);
//! assert!((g[(0, 0)] - 0.6).abs() < 1e-15 && (g[(0, 1)] - 0.8).abs() < 1e-15);
//! ```

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{AutodiffError, ShapeError};
use crate::linalg::{self, cross3};
use crate::matrix::{gemm_nt, gemm_tn, Matrix};

/// Largest magnitude allowed for the `1/(σᵢ² − σⱼ²)` and `1/σ` factors of the
/// SVD adjoint.
pub const SVD_CLAMP: f64 = 1e8;

/// Relative ridge added before inverting normal matrices.
pub const RIDGE_FACTOR: f64 = 1e-9;

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Elementwise {
    Add,
    Sub,
    Scale(f64),
    LeakyActivation,
    Square,
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Constant,
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Scale(Var, f64),
    Leaky(Var),
    Square(Var),
    AddRowBroadcast(Var, Var),
    Transpose(Var),
    View { src: Var, offset: usize },
    VStack(Var, Var),
    GatherRows { src: Var, rows: Vec<usize> },
    Sum(Var),
    Frobenius(Var),
    SquaredNorm(Var),
    Ridge(Var),
    Inverse3(Var),
    Svd2x3(Var),
    CompleteRotation(Var),
    NuclearNorm(Var),
}

#[derive(Debug, Clone)]
struct Node {
    value: Matrix,
    op: Op,
    requires_grad: bool,
}

/// Slope of the leaky activation for negative inputs.
pub const LEAKY_SLOPE: f64 = 0.01;

#[derive(Debug, Default, Clone)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Packed layout of an SVD node: `u` (2×2), `sigma` (2), `v` (3×2).
pub const SVD_U: (usize, usize, usize) = (0, 2, 2);
pub const SVD_SIGMA: (usize, usize, usize) = (4, 1, 2);
pub const SVD_V: (usize, usize, usize) = (6, 3, 2);

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

    pub fn value(&self, v: Var) -> &Matrix {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        self.nodes[v.0].value.shape()
    }

    /// Scalar value of a 1×1 node.
    pub fn scalar(&self, v: Var) -> f64 {
        let m = self.value(v);
        debug_assert_eq!(m.shape(), (1, 1));
        m.as_slice()[0]
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn push(&mut self, value: Matrix, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// A differentiable input.
    pub fn leaf(&mut self, value: Matrix) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// An input that never receives an adjoint.
    pub fn constant(&mut self, value: Matrix) -> Var {
        self.push(value, Op::Constant, false)
    }

    /// Passes the value through and blocks the adjoint.
    pub fn stop_gradient(&mut self, a: Var) -> Var {
        let value = self.value(a).clone();
        self.push(value, Op::Constant, false)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        let value = self.value(a).matmul(self.value(b))?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(value, Op::MatMul(a, b), rg))
    }

    pub fn elementwise(&mut self, kind: Elementwise, a: Var, b: Option<Var>) -> Result<Var, AutodiffError> {
        match (kind, b) {
            (Elementwise::Add, Some(b)) => self.add(a, b),
            (Elementwise::Sub, Some(b)) => self.sub(a, b),
            (Elementwise::Scale(k), None) => Ok(self.scale(a, k)),
            (Elementwise::LeakyActivation, None) => Ok(self.leaky(a)),
            (Elementwise::Square, None) => Ok(self.square(a)),
            (_, b) => Err(ShapeError::Mismatch {
                op: "elementwise arity",
                lhs: self.shape(a),
                rhs: b.map(|b| self.shape(b)).unwrap_or((0, 0)),
            }
            .into()),
        }
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        let value = self.value(a).zip_map(self.value(b), |x, y| x + y)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(value, Op::Add(a, b), rg))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        let value = self.value(a).zip_map(self.value(b), |x, y| x - y)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(value, Op::Sub(a, b), rg))
    }

    pub fn scale(&mut self, a: Var, k: f64) -> Var {
        let value = self.value(a).scaled(k);
        let rg = self.rg(a);
        self.push(value, Op::Scale(a, k), rg)
    }

    pub fn leaky(&mut self, a: Var) -> Var {
        let value = self.value(a).map(|x| if x > 0.0 { x } else { LEAKY_SLOPE * x });
        let rg = self.rg(a);
        self.push(value, Op::Leaky(a), rg)
    }

    pub fn square(&mut self, a: Var) -> Var {
        let value = self.value(a).map(|x| x * x);
        let rg = self.rg(a);
        self.push(value, Op::Square(a), rg)
    }

    /// Adds the 1×m row `b` to every row of `a`.
    pub fn add_row_broadcast(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        let (n, m) = self.shape(a);
        if self.shape(b) != (1, m) {
            return Err(ShapeError::Mismatch {
                op: "add_row_broadcast",
                lhs: (n, m),
                rhs: self.shape(b),
            }
            .into());
        }
        let mut value = self.value(a).clone();
        let bias = self.value(b).as_slice().to_vec();
        for r in 0..n {
            for (x, y) in value.row_mut(r).iter_mut().zip(&bias) {
                *x += y;
            }
        }
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(value, Op::AddRowBroadcast(a, b), rg))
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let value = self.value(a).transpose();
        let rg = self.rg(a);
        self.push(value, Op::Transpose(a), rg)
    }

    /// A `rows × cols` view of the contiguous row-major range starting at
    /// `offset` of `src`.
    pub fn view(&mut self, src: Var, offset: usize, rows: usize, cols: usize) -> Result<Var, AutodiffError> {
        let s = self.value(src);
        if offset + rows * cols > s.len() {
            return Err(ShapeError::Reshape {
                from: s.shape(),
                to: (rows, cols),
            }
            .into());
        }
        let data = s.as_slice()[offset..offset + rows * cols].to_vec();
        let value = Matrix::from_vec(rows, cols, data)?;
        let rg = self.rg(src);
        Ok(self.push(value, Op::View { src, offset }, rg))
    }

    /// Row `r` of `src` reshaped to `rows × cols`.
    pub fn row_as(&mut self, src: Var, r: usize, rows: usize, cols: usize) -> Result<Var, AutodiffError> {
        let width = self.shape(src).1;
        if rows * cols != width || r >= self.shape(src).0 {
            return Err(ShapeError::Reshape {
                from: (1, width),
                to: (rows, cols),
            }
            .into());
        }
        self.view(src, r * width, rows, cols)
    }

    /// Stacks `a` on top of `b`.
    pub fn vstack(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        let (ra, ca) = self.shape(a);
        let (rb, cb) = self.shape(b);
        if ca != cb {
            return Err(ShapeError::Mismatch {
                op: "vstack",
                lhs: (ra, ca),
                rhs: (rb, cb),
            }
            .into());
        }
        let mut data = self.value(a).as_slice().to_vec();
        data.extend_from_slice(self.value(b).as_slice());
        let value = Matrix::from_vec(ra + rb, ca, data)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(value, Op::VStack(a, b), rg))
    }

    pub fn gather_rows(&mut self, src: Var, rows: &[usize]) -> Result<Var, AutodiffError> {
        let s = self.value(src);
        let (n, m) = s.shape();
        if let Some(&bad) = rows.iter().find(|&&r| r >= n) {
            return Err(ShapeError::Expected {
                op: "gather_rows",
                expected: (bad + 1, m),
                got: (n, m),
            }
            .into());
        }
        let mut data = Vec::with_capacity(rows.len() * m);
        for &r in rows {
            data.extend_from_slice(s.row(r));
        }
        let value = Matrix::from_vec(rows.len(), m, data)?;
        let rg = self.rg(src);
        Ok(self.push(
            value,
            Op::GatherRows {
                src,
                rows: rows.to_vec(),
            },
            rg,
        ))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let value = Matrix::filled(1, 1, self.value(a).sum());
        let rg = self.rg(a);
        self.push(value, Op::Sum(a), rg)
    }

    pub fn frobenius_norm(&mut self, a: Var) -> Var {
        let value = Matrix::filled(1, 1, self.value(a).frobenius());
        let rg = self.rg(a);
        self.push(value, Op::Frobenius(a), rg)
    }

    pub fn squared_norm(&mut self, a: Var) -> Var {
        let value = Matrix::filled(1, 1, self.value(a).frobenius_sq());
        let rg = self.rg(a);
        self.push(value, Op::SquaredNorm(a), rg)
    }

    /// `a + ε·I` with `ε = RIDGE_FACTOR · trace(a) / 3`.
    pub fn ridge(&mut self, a: Var) -> Result<Var, AutodiffError> {
        expect_shape(self.value(a), (3, 3), "ridge")?;
        let mut value = self.value(a).clone();
        let eps = RIDGE_FACTOR * value.trace() / 3.0;
        for i in 0..3 {
            value[(i, i)] += eps;
        }
        let rg = self.rg(a);
        Ok(self.push(value, Op::Ridge(a), rg))
    }

    pub fn inverse3(&mut self, a: Var) -> Result<Var, AutodiffError> {
        expect_shape(self.value(a), (3, 3), "inverse3")?;
        let value =
            linalg::inverse3(self.value(a)).map_err(|condition| AutodiffError::DegenerateMatrix { condition })?;
        let rg = self.rg(a);
        Ok(self.push(value, Op::Inverse3(a), rg))
    }

    /// Thin SVD of a 2×3 node. Returns `(u, sigma, v)` with `sigma` as a 1×2
    /// row; all three are views into one packed node.
    pub fn svd_small(&mut self, a: Var) -> Result<(Var, Var, Var), AutodiffError> {
        expect_shape(self.value(a), (2, 3), "svd_small")?;
        let svd = linalg::svd_2x3(self.value(a));
        let mut packed = Vec::with_capacity(12);
        packed.extend_from_slice(&[svd.u[0][0], svd.u[0][1], svd.u[1][0], svd.u[1][1]]);
        packed.extend_from_slice(&svd.sigma);
        for row in &svd.v {
            packed.extend_from_slice(row);
        }
        let value = Matrix::from_vec(1, 12, packed)?;
        let rg = self.rg(a);
        let node = self.push(value, Op::Svd2x3(a), rg);
        let u = self.view(node, SVD_U.0, SVD_U.1, SVD_U.2)?;
        let s = self.view(node, SVD_SIGMA.0, SVD_SIGMA.1, SVD_SIGMA.2)?;
        let v = self.view(node, SVD_V.0, SVD_V.1, SVD_V.2)?;
        Ok((u, s, v))
    }

    /// Extends a 2×3 matrix with orthonormal rows to the 3×3 rotation whose
    /// third row is the cross product of the first two.
    pub fn complete_rotation(&mut self, rxy: Var) -> Result<Var, AutodiffError> {
        expect_shape(self.value(rxy), (2, 3), "complete_rotation")?;
        let m = self.value(rxy);
        let rz = cross3(m.row(0), m.row(1));
        let mut data = m.as_slice().to_vec();
        data.extend_from_slice(&rz);
        let value = Matrix::from_vec(3, 3, data)?;
        let rg = self.rg(rxy);
        Ok(self.push(value, Op::CompleteRotation(rxy), rg))
    }

    /// Sum of singular values of a wide matrix (rows ≤ cols).
    pub fn nuclear_norm(&mut self, a: Var) -> Result<Var, AutodiffError> {
        let (r, c) = self.shape(a);
        if r > c {
            return Err(ShapeError::Expected {
                op: "nuclear_norm",
                expected: (c, c),
                got: (r, c),
            }
            .into());
        }
        let (_, sigma, _) = linalg::svd_wide(self.value(a));
        let value = Matrix::filled(1, 1, sigma.iter().sum());
        let rg = self.rg(a);
        Ok(self.push(value, Op::NuclearNorm(a), rg))
    }

    /// Accumulates the adjoint of every node that influences the scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients, AutodiffError> {
        let shape = self.shape(loss);
        if shape != (1, 1) {
            return Err(AutodiffError::NotScalar(shape));
        }
        let mut adj: Vec<Option<Matrix>> = vec![None; loss.0 + 1];
        adj[loss.0] = Some(Matrix::filled(1, 1, 1.0));
        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            let g = match adj[idx].take() {
                Some(g) => g,
                None => continue,
            };
            self.propagate(idx, &g, &mut adj);
            adj[idx] = Some(g);
        }
        Ok(Gradients { adjoints: adj })
    }

    fn propagate(&self, idx: usize, g: &Matrix, adj: &mut [Option<Matrix>]) {
        let node = &self.nodes[idx];
        match &node.op {
            Op::Leaf | Op::Constant => {}
            Op::MatMul(a, b) => {
                if self.rg(*a) {
                    let bv = self.value(*b);
                    let acc = slot(adj, *a, self.shape(*a));
                    gemm_nt(g, bv, acc);
                }
                if self.rg(*b) {
                    let av = self.value(*a);
                    let acc = slot(adj, *b, self.shape(*b));
                    gemm_tn(av, g, acc);
                }
            }
            Op::Add(a, b) => {
                if self.rg(*a) {
                    slot(adj, *a, g.shape()).add_assign(g);
                }
                if self.rg(*b) {
                    slot(adj, *b, g.shape()).add_assign(g);
                }
            }
            Op::Sub(a, b) => {
                if self.rg(*a) {
                    slot(adj, *a, g.shape()).add_assign(g);
                }
                if self.rg(*b) {
                    slot(adj, *b, g.shape()).add_assign(&g.scaled(-1.0));
                }
            }
            Op::Scale(a, k) => {
                slot(adj, *a, g.shape()).add_assign(&g.scaled(*k));
            }
            Op::Leaky(a) => {
                let x = self.value(*a);
                let local = x
                    .zip_map(g, |xv, gv| if xv > 0.0 { gv } else { LEAKY_SLOPE * gv })
                    .expect("same shape");
                slot(adj, *a, g.shape()).add_assign(&local);
            }
            Op::Square(a) => {
                let x = self.value(*a);
                let local = x.zip_map(g, |xv, gv| 2.0 * xv * gv).expect("same shape");
                slot(adj, *a, g.shape()).add_assign(&local);
            }
            Op::AddRowBroadcast(a, b) => {
                if self.rg(*a) {
                    slot(adj, *a, g.shape()).add_assign(g);
                }
                if self.rg(*b) {
                    let acc = slot(adj, *b, (1, g.cols()));
                    for r in 0..g.rows() {
                        for (o, v) in acc.as_mut_slice().iter_mut().zip(g.row(r)) {
                            *o += v;
                        }
                    }
                }
            }
            Op::Transpose(a) => {
                slot(adj, *a, self.shape(*a)).add_assign(&g.transpose());
            }
            Op::View { src, offset } => {
                let acc = slot(adj, *src, self.shape(*src));
                for (o, v) in acc.as_mut_slice()[*offset..*offset + g.len()]
                    .iter_mut()
                    .zip(g.as_slice())
                {
                    *o += v;
                }
            }
            Op::VStack(a, b) => {
                let split = self.value(*a).len();
                if self.rg(*a) {
                    let acc = slot(adj, *a, self.shape(*a));
                    for (o, v) in acc.as_mut_slice().iter_mut().zip(&g.as_slice()[..split]) {
                        *o += v;
                    }
                }
                if self.rg(*b) {
                    let acc = slot(adj, *b, self.shape(*b));
                    for (o, v) in acc.as_mut_slice().iter_mut().zip(&g.as_slice()[split..]) {
                        *o += v;
                    }
                }
            }
            Op::GatherRows { src, rows } => {
                let acc = slot(adj, *src, self.shape(*src));
                for (i, &r) in rows.iter().enumerate() {
                    for (o, v) in acc.row_mut(r).iter_mut().zip(g.row(i)) {
                        *o += v;
                    }
                }
            }
            Op::Sum(a) => {
                let s = g.as_slice()[0];
                let (r, c) = self.shape(*a);
                slot(adj, *a, (r, c)).add_assign(&Matrix::filled(r, c, s));
            }
            Op::Frobenius(a) => {
                let norm = node.value.as_slice()[0];
                // Zero matrix: 0 is a valid subgradient.
                if norm > 0.0 {
                    let k = g.as_slice()[0] / norm;
                    slot(adj, *a, self.shape(*a)).add_assign(&self.value(*a).scaled(k));
                }
            }
            Op::SquaredNorm(a) => {
                let k = 2.0 * g.as_slice()[0];
                slot(adj, *a, self.shape(*a)).add_assign(&self.value(*a).scaled(k));
            }
            Op::Ridge(a) => {
                let mut local = g.clone();
                let t = RIDGE_FACTOR * g.trace() / 3.0;
                for i in 0..3 {
                    local[(i, i)] += t;
                }
                slot(adj, *a, (3, 3)).add_assign(&local);
            }
            Op::Inverse3(a) => {
                // ∂L/∂A = −A⁻ᵀ · Ḡ · A⁻ᵀ
                let inv_t = node.value.transpose();
                let local = inv_t
                    .matmul(g)
                    .and_then(|m| m.matmul(&inv_t))
                    .expect("3x3")
                    .scaled(-1.0);
                slot(adj, *a, (3, 3)).add_assign(&local);
            }
            Op::Svd2x3(a) => {
                let local = svd_adjoint(&node.value, g);
                slot(adj, *a, (2, 3)).add_assign(&local);
            }
            Op::CompleteRotation(rxy) => {
                let r = &node.value;
                let gz = g.row(2);
                let dx = cross3(r.row(1), gz);
                let dy = cross3(gz, r.row(0));
                let acc = slot(adj, *rxy, (2, 3));
                for c in 0..3 {
                    acc[(0, c)] += g[(0, c)] + dx[c];
                    acc[(1, c)] += g[(1, c)] + dy[c];
                }
            }
            Op::NuclearNorm(a) => {
                let (u, _, vt) = linalg::svd_wide(self.value(*a));
                let local = u.matmul(&vt).expect("thin svd").scaled(g.as_slice()[0]);
                slot(adj, *a, self.shape(*a)).add_assign(&local);
            }
        }
    }
}

fn expect_shape(m: &Matrix, expected: (usize, usize), op: &'static str) -> Result<(), AutodiffError> {
    if m.shape() != expected {
        return Err(ShapeError::Expected {
            op,
            expected,
            got: m.shape(),
        }
        .into());
    }
    Ok(())
}

fn slot(adj: &mut [Option<Matrix>], v: Var, shape: (usize, usize)) -> &mut Matrix {
    adj[v.0].get_or_insert_with(|| Matrix::zeros(shape.0, shape.1))
}

fn clamp_inv(d: f64) -> f64 {
    if d == 0.0 {
        0.0
    } else {
        let inv = 1.0 / d;
        libm::copysign(libm::fabs(inv).min(SVD_CLAMP), inv)
    }
}

/// Adjoint of the thin SVD `A = U Σ Vᵀ` for a 2×3 input:
///
/// `Ā = U [ (F∘(UᵀŪ − ŪᵀU)) Σ + diag(Σ̄) + Σ (F∘(VᵀV̄ − V̄ᵀV)) ] Vᵀ + U Σ⁻¹ V̄ᵀ (I − V Vᵀ)`
///
/// with `F_ij = 1/(σ_j² − σ_i²)` off the diagonal. `U` is square, so the
/// `(I − UUᵀ)` term vanishes.
fn svd_adjoint(packed: &Matrix, g: &Matrix) -> Matrix {
    let p = packed.as_slice();
    let gp = g.as_slice();
    let u = Matrix::from_vec(2, 2, p[0..4].to_vec()).expect("u");
    let s = [p[4], p[5]];
    let v = Matrix::from_vec(3, 2, p[6..12].to_vec()).expect("v");
    let gu = Matrix::from_vec(2, 2, gp[0..4].to_vec()).expect("gu");
    let gs = [gp[4], gp[5]];
    let gv = Matrix::from_vec(3, 2, gp[6..12].to_vec()).expect("gv");

    let mut f = Matrix::zeros(2, 2);
    for i in 0..2 {
        for j in 0..2 {
            if i != j {
                f[(i, j)] = clamp_inv(s[j] * s[j] - s[i] * s[i]);
            }
        }
    }
    let utgu = u.transpose().matmul(&gu).expect("2x2");
    let vtgv = v.transpose().matmul(&gv).expect("2x2");
    let mut inner = Matrix::zeros(2, 2);
    for i in 0..2 {
        for j in 0..2 {
            let ju = f[(i, j)] * (utgu[(i, j)] - utgu[(j, i)]);
            let jv = f[(i, j)] * (vtgv[(i, j)] - vtgv[(j, i)]);
            inner[(i, j)] = ju * s[j] + s[i] * jv;
        }
        inner[(i, i)] += gs[i];
    }
    let mut out = u.matmul(&inner).and_then(|m| m.matmul(&v.transpose())).expect("2x3");

    // U Σ⁻¹ V̄ᵀ (I − V Vᵀ)
    let inv_s = Matrix::diag(&[clamp_inv(s[0]), clamp_inv(s[1])]);
    let proj = Matrix::identity(3)
        .zip_map(&v.matmul(&v.transpose()).expect("3x3"), |a, b| a - b)
        .expect("3x3");
    let extra = u
        .matmul(&inv_s)
        .and_then(|m| m.matmul(&gv.transpose()))
        .and_then(|m| m.matmul(&proj))
        .expect("2x3");
    out.add_assign(&extra);
    out
}

/// Adjoints produced by [`Tape::backward`].
#[derive(Debug, Clone)]
pub struct Gradients {
    adjoints: Vec<Option<Matrix>>,
}

impl Gradients {
    /// Adjoint of `v`, or `None` when the loss does not depend on it.
    pub fn get(&self, v: Var) -> Option<&Matrix> {
        self.adjoints.get(v.0).and_then(|a| a.as_ref())
    }

    /// Adjoint of `v`, zero-filled when the loss does not depend on it.
    pub fn wrt(&self, tape: &Tape, v: Var) -> Matrix {
        match self.get(v) {
            Some(m) if tape.requires_grad(v) => m.clone(),
            _ => {
                let (r, c) = tape.shape(v);
                Matrix::zeros(r, c)
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sum_of_leaf_has_unit_adjoint() {
        let mut t = Tape::new();
        let x = t.leaf(Matrix::from_fn(2, 3, |r, c| (r + c) as f64));
        let s = t.sum(x);
        let g = t.backward(s).unwrap();
        assert_eq!(g.wrt(&t, x), Matrix::filled(2, 3, 1.0));
    }

    #[test]
    fn independent_leaf_gets_zero() {
        let mut t = Tape::new();
        let x = t.leaf(Matrix::filled(2, 2, 1.0));
        let y = t.leaf(Matrix::filled(3, 1, 2.0));
        let s = t.sum(x);
        let g = t.backward(s).unwrap();
        assert!(g.get(y).is_none());
        assert_eq!(g.wrt(&t, y), Matrix::zeros(3, 1));
    }

    #[test]
    fn non_scalar_loss_rejected() {
        let mut t = Tape::new();
        let x = t.leaf(Matrix::zeros(2, 2));
        assert_eq!(t.backward(x).unwrap_err(), AutodiffError::NotScalar((2, 2)));
    }

    #[test]
    fn elementwise_identities() {
        let mut t = Tape::new();
        let x = t.leaf(Matrix::from_fn(2, 3, |r, c| r as f64 - c as f64 * 0.3));
        let z = t.constant(Matrix::zeros(2, 3));
        let sum = t.elementwise(Elementwise::Add, x, Some(z)).unwrap();
        assert_eq!(t.value(sum), t.value(x));
        let one = t.elementwise(Elementwise::Scale(1.0), x, None).unwrap();
        assert_eq!(t.value(one), t.value(x));
    }

    #[test]
    fn frobenius_of_identity_and_zero() {
        let mut t = Tape::new();
        let i = t.leaf(Matrix::identity(3));
        let n = t.frobenius_norm(i);
        assert!((t.scalar(n) - libm::sqrt(3.0)).abs() < 1e-15);

        let z = t.leaf(Matrix::zeros(2, 2));
        let nz = t.frobenius_norm(z);
        assert_eq!(t.scalar(nz), 0.0);
        let g = t.backward(nz).unwrap();
        assert_eq!(g.wrt(&t, z), Matrix::zeros(2, 2));
    }

    #[test]
    fn stop_gradient_blocks_adjoint() {
        let mut t = Tape::new();
        let x = t.leaf(Matrix::filled(1, 2, 3.0));
        let s = t.stop_gradient(x);
        assert_eq!(t.value(s), t.value(x));
        let y = t.square(s);
        let l = t.sum(y);
        let g = t.backward(l).unwrap();
        assert_eq!(g.wrt(&t, x), Matrix::zeros(1, 2));
    }

    #[test]
    fn matmul_mismatch_is_structured() {
        let mut t = Tape::new();
        let a = t.leaf(Matrix::zeros(2, 3));
        let b = t.leaf(Matrix::zeros(2, 3));
        assert_eq!(
            t.matmul(a, b).unwrap_err(),
            AutodiffError::Shape(ShapeError::Mismatch {
                op: "matmul",
                lhs: (2, 3),
                rhs: (2, 3)
            })
        );
    }

    #[test]
    fn inverse3_examples() {
        let mut t = Tape::new();
        let d = t.leaf(Matrix::diag(&[2.0, 4.0, 5.0]));
        let inv = t.inverse3(d).unwrap();
        assert_eq!(t.value(inv), &Matrix::diag(&[0.5, 0.25, 0.2]));
        let sing = t.leaf(Matrix::zeros(3, 3));
        assert!(matches!(t.inverse3(sing), Err(AutodiffError::DegenerateMatrix { .. })));
    }

    #[test]
    fn complete_rotation_has_positive_determinant() {
        let mut t = Tape::new();
        let rxy = t.leaf(Matrix::from_rows(&[[0.0, 1.0, 0.0], [0.0, 0.0, 1.0]]));
        let r = t.complete_rotation(rxy).unwrap();
        assert_eq!(t.value(r).row(2), &[1.0, 0.0, 0.0]);
    }
}
