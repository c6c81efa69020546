//! Dense operators on `d^L`-dimensional tensor-product spaces and the
//! site-aware operations built on them (embedding, partial trace, truncation,
//! spectral functions, nested commutators).

use std::ops::{Add, AddAssign, Mul, Neg, Sub};
use std::sync::atomic::{AtomicUsize, Ordering};

use faer::{c64, Mat, MatRef, Side};

use crate::error::{Error, Result};
use crate::window::{SiteSet, Window};

pub const DEFAULT_DIM_CAP: usize = 1 << 16;
pub const HERMITIAN_TOL: f64 = 1e-12;
pub const MAX_EXPONENT: f64 = 700.0;
pub const ADJOINT_POWER_CAP: usize = 12;
/// Dimension from which `op_norm` switches to Lanczos iteration.
pub const LANCZOS_MIN_DIM: usize = 256;

static DIM_CAP: AtomicUsize = AtomicUsize::new(DEFAULT_DIM_CAP);

/// Largest dense dimension any constructor will allocate.
pub fn dim_cap() -> usize {
    DIM_CAP.load(Ordering::Relaxed)
}

pub fn set_dim_cap(cap: usize) {
    DIM_CAP.store(cap.max(1), Ordering::Relaxed);
}

pub fn check_dim(dim: usize) -> Result<()> {
    let cap = dim_cap();
    if dim > cap {
        Err(Error::DimensionCap { dim, cap })
    } else {
        Ok(())
    }
}

/// `d^len`, checked against the dimension cap.
pub fn space_dim(d: usize, len: usize) -> Result<usize> {
    let cap = dim_cap();
    let mut dim: usize = 1;
    for _ in 0..len {
        dim = match dim.checked_mul(d) {
            Some(v) if v <= cap => v,
            _ => {
                return Err(Error::DimensionCap {
                    dim: d.checked_pow(len as u32).unwrap_or(usize::MAX),
                    cap,
                })
            }
        };
    }
    Ok(dim)
}

fn czero() -> c64 {
    c64::new(0.0, 0.0)
}

/// Square complex matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct DenseOperator {
    mat: Mat<c64>,
}

impl DenseOperator {
    pub fn from_mat(mat: Mat<c64>) -> Self {
        assert_eq!(mat.nrows(), mat.ncols(), "operator must be square");
        Self { mat }
    }

    pub fn from_fn(dim: usize, f: impl FnMut(usize, usize) -> c64) -> Self {
        Self {
            mat: Mat::from_fn(dim, dim, f),
        }
    }

    pub fn from_real_rows(rows: &[&[f64]]) -> Self {
        let dim = rows.len();
        Self::from_fn(dim, |i, j| c64::new(rows[i][j], 0.0))
    }

    pub fn zeros(dim: usize) -> Self {
        Self {
            mat: Mat::zeros(dim, dim),
        }
    }

    pub fn identity(dim: usize) -> Self {
        Self {
            mat: Mat::identity(dim, dim),
        }
    }

    pub fn diagonal(values: &[f64]) -> Self {
        let mut out = Self::zeros(values.len());
        for (i, v) in values.iter().enumerate() {
            out.mat[(i, i)] = c64::new(*v, 0.0);
        }
        out
    }

    pub fn dim(&self) -> usize {
        self.mat.nrows()
    }

    pub fn mat(&self) -> MatRef<'_, c64> {
        self.mat.as_ref()
    }

    pub fn into_mat(self) -> Mat<c64> {
        self.mat
    }

    pub fn get(&self, i: usize, j: usize) -> c64 {
        self.mat[(i, j)]
    }

    pub fn set(&mut self, i: usize, j: usize, v: c64) {
        self.mat[(i, j)] = v;
    }

    pub fn trace(&self) -> c64 {
        (0..self.dim()).map(|i| self.mat[(i, i)]).sum()
    }

    pub fn adjoint(&self) -> Self {
        Self {
            mat: self.mat.adjoint().to_owned(),
        }
    }

    pub fn scale(&self, s: c64) -> Self {
        Self::from_fn(self.dim(), |i, j| self.mat[(i, j)] * s)
    }

    pub fn scale_real(&self, s: f64) -> Self {
        Self::from_fn(self.dim(), |i, j| self.mat[(i, j)] * s)
    }

    pub fn matmul(&self, other: &Self) -> Self {
        Self {
            mat: &self.mat * &other.mat,
        }
    }

    pub fn commutator(&self, other: &Self) -> Self {
        &self.matmul(other) - &other.matmul(self)
    }

    pub fn max_abs(&self) -> f64 {
        let mut m = 0.0f64;
        for j in 0..self.dim() {
            for i in 0..self.dim() {
                m = m.max(self.mat[(i, j)].norm());
            }
        }
        m
    }

    pub fn frobenius_norm(&self) -> f64 {
        let mut s = 0.0;
        for j in 0..self.dim() {
            for i in 0..self.dim() {
                s += self.mat[(i, j)].norm_sqr();
            }
        }
        s.sqrt()
    }

    pub fn is_finite(&self) -> bool {
        (0..self.dim()).all(|j| (0..self.dim()).all(|i| self.mat[(i, j)].is_finite()))
    }

    /// Largest entry of `|A - A†|`.
    pub fn hermitian_violation(&self) -> f64 {
        let n = self.dim();
        let mut m = 0.0f64;
        for j in 0..n {
            for i in 0..=j {
                m = m.max((self.mat[(i, j)] - self.mat[(j, i)].conj()).norm());
            }
        }
        m
    }

    pub fn is_hermitian(&self) -> bool {
        self.hermitian_violation() <= HERMITIAN_TOL * self.max_abs().max(1.0)
    }

    pub fn is_real(&self) -> bool {
        (0..self.dim()).all(|j| (0..self.dim()).all(|i| self.mat[(i, j)].im == 0.0))
    }

    pub fn is_diagonal(&self) -> bool {
        let n = self.dim();
        (0..n).all(|j| (0..n).all(|i| i == j || self.mat[(i, j)] == czero()))
    }

    pub fn diagonal_real(&self) -> Vec<f64> {
        (0..self.dim()).map(|i| self.mat[(i, i)].re).collect()
    }

    /// `(A + A†)/2`.
    pub fn hermitian_part(&self) -> Self {
        Self::from_fn(self.dim(), |i, j| {
            (self.mat[(i, j)] + self.mat[(j, i)].conj()) * 0.5
        })
    }
}

impl Add for &DenseOperator {
    type Output = DenseOperator;
    fn add(self, rhs: &DenseOperator) -> DenseOperator {
        DenseOperator {
            mat: &self.mat + &rhs.mat,
        }
    }
}

impl Sub for &DenseOperator {
    type Output = DenseOperator;
    fn sub(self, rhs: &DenseOperator) -> DenseOperator {
        DenseOperator {
            mat: &self.mat - &rhs.mat,
        }
    }
}

impl Mul for &DenseOperator {
    type Output = DenseOperator;
    fn mul(self, rhs: &DenseOperator) -> DenseOperator {
        self.matmul(rhs)
    }
}

impl Neg for &DenseOperator {
    type Output = DenseOperator;
    fn neg(self) -> DenseOperator {
        self.scale_real(-1.0)
    }
}

impl AddAssign<&DenseOperator> for DenseOperator {
    fn add_assign(&mut self, rhs: &DenseOperator) {
        self.mat += &rhs.mat;
    }
}

/// Kronecker product `a ⊗ b` (`a` acts on the more significant digits).
pub fn kron(a: &DenseOperator, b: &DenseOperator) -> Result<DenseOperator> {
    let (na, nb) = (a.dim(), b.dim());
    let dim = na
        .checked_mul(nb)
        .ok_or(Error::DimensionCap { dim: usize::MAX, cap: dim_cap() })?;
    check_dim(dim)?;
    Ok(DenseOperator::from_fn(dim, |i, j| {
        a.mat[(i / nb, j / nb)] * b.mat[(i % nb, j % nb)]
    }))
}

pub fn pauli_x() -> DenseOperator {
    DenseOperator::from_real_rows(&[&[0.0, 1.0], &[1.0, 0.0]])
}

pub fn pauli_y() -> DenseOperator {
    let mut y = DenseOperator::zeros(2);
    y.set(0, 1, c64::new(0.0, -1.0));
    y.set(1, 0, c64::new(0.0, 1.0));
    y
}

pub fn pauli_z() -> DenseOperator {
    DenseOperator::diagonal(&[1.0, -1.0])
}

/// A dense operator together with the window it acts on.
#[derive(Clone, Debug, PartialEq)]
pub struct SupportedOperator {
    op: DenseOperator,
    window: Window,
    local_dim: usize,
}

impl SupportedOperator {
    pub fn new(op: DenseOperator, window: Window, local_dim: usize) -> Result<Self> {
        if local_dim < 2 {
            return Err(Error::InvalidParam(format!("local dimension {local_dim} < 2")));
        }
        let expect = space_dim(local_dim, window.len())?;
        if op.dim() != expect {
            return Err(Error::Shape(format!(
                "operator of dimension {} cannot act on {} sites of dimension {}",
                op.dim(),
                window.len(),
                local_dim
            )));
        }
        Ok(Self { op, window, local_dim })
    }

    pub fn zeros(window: Window, local_dim: usize) -> Result<Self> {
        let dim = space_dim(local_dim, window.len())?;
        Self::new(DenseOperator::zeros(dim), window, local_dim)
    }

    pub fn identity(window: Window, local_dim: usize) -> Result<Self> {
        let dim = space_dim(local_dim, window.len())?;
        Self::new(DenseOperator::identity(dim), window, local_dim)
    }

    pub fn op(&self) -> &DenseOperator {
        &self.op
    }

    pub fn into_op(self) -> DenseOperator {
        self.op
    }

    pub fn window(&self) -> Window {
        self.window
    }

    pub fn local_dim(&self) -> usize {
        self.local_dim
    }

    pub fn dim(&self) -> usize {
        self.op.dim()
    }

    /// Same support, new matrix.
    pub fn with_op(&self, op: DenseOperator) -> Self {
        assert_eq!(op.dim(), self.op.dim());
        Self {
            op,
            window: self.window,
            local_dim: self.local_dim,
        }
    }

    fn same_frame(&self, other: &Self) -> Result<()> {
        if self.window != other.window || self.local_dim != other.local_dim {
            return Err(Error::Support(format!(
                "operators on {} and {} must share a window",
                self.window, other.window
            )));
        }
        Ok(())
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        self.same_frame(other)?;
        Ok(self.with_op(&self.op + &other.op))
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.same_frame(other)?;
        Ok(self.with_op(&self.op - &other.op))
    }

    pub fn matmul(&self, other: &Self) -> Result<Self> {
        self.same_frame(other)?;
        Ok(self.with_op(self.op.matmul(&other.op)))
    }

    pub fn scale_real(&self, s: f64) -> Self {
        self.with_op(self.op.scale_real(s))
    }

    pub fn adjoint(&self) -> Self {
        self.with_op(self.op.adjoint())
    }
}

fn weights(d: usize, len: usize) -> Vec<usize> {
    let mut w = vec![1usize; len];
    for p in (0..len.saturating_sub(1)).rev() {
        w[p] = w[p + 1] * d;
    }
    w
}

/// All basis offsets spanned by the digits at `positions` of a `len`-site window.
fn digit_offsets(d: usize, len: usize, positions: &[usize]) -> Vec<usize> {
    let w = weights(d, len);
    let mut offsets = vec![0usize];
    for &p in positions {
        let mut next = Vec::with_capacity(offsets.len() * d);
        for &o in &offsets {
            for s in 0..d {
                next.push(o + s * w[p]);
            }
        }
        offsets = next;
    }
    offsets
}

/// `op ⊗ I` on `target ⊇ op.window()`.
pub fn embed(op: &SupportedOperator, target: Window) -> Result<SupportedOperator> {
    let w = op.window;
    if !target.contains(&w) {
        return Err(Error::Support(format!("cannot embed {w} into {target}")));
    }
    if target == w {
        return Ok(op.clone());
    }
    let d = op.local_dim;
    let left = space_dim(d, w.lo() - target.lo())?;
    let right = space_dim(d, target.hi() - w.hi())?;
    let mid = op.dim();
    let dim = left
        .checked_mul(mid)
        .and_then(|x| x.checked_mul(right))
        .ok_or(Error::DimensionCap { dim: usize::MAX, cap: dim_cap() })?;
    check_dim(dim)?;
    let mut out = Mat::<c64>::zeros(dim, dim);
    for j in 0..mid {
        for i in 0..mid {
            let v = op.op.mat[(i, j)];
            if v == czero() {
                continue;
            }
            for l in 0..left {
                let rb = (l * mid + i) * right;
                let cb = (l * mid + j) * right;
                for r in 0..right {
                    out[(rb + r, cb + r)] = v;
                }
            }
        }
    }
    SupportedOperator::new(DenseOperator::from_mat(out), target, d)
}

/// Adds `c · (op ⊗ I)` into `acc`, whose window must contain `op`'s.
pub fn add_embedded(acc: &mut SupportedOperator, op: &SupportedOperator, c: f64) -> Result<()> {
    let (w, t) = (op.window, acc.window);
    if !t.contains(&w) || op.local_dim != acc.local_dim {
        return Err(Error::Support(format!("cannot embed {w} into {t}")));
    }
    let d = op.local_dim;
    let left = d.pow((w.lo() - t.lo()) as u32);
    let right = d.pow((t.hi() - w.hi()) as u32);
    let mid = op.dim();
    for j in 0..mid {
        for i in 0..mid {
            let v = op.op.mat[(i, j)] * c;
            if v == czero() {
                continue;
            }
            for l in 0..left {
                let rb = (l * mid + i) * right;
                let cb = (l * mid + j) * right;
                for r in 0..right {
                    acc.op.mat[(rb + r, cb + r)] += v;
                }
            }
        }
    }
    Ok(())
}

struct SiteSplit {
    kept: Vec<usize>,
    traced: Vec<usize>,
}

fn split_sites(op: &SupportedOperator, keep: &SiteSet) -> Result<SiteSplit> {
    let w = op.window;
    let d = op.local_dim;
    let len = w.len();
    let mut kept_pos = Vec::new();
    let mut traced_pos = Vec::new();
    for (p, site) in w.sites().enumerate() {
        if keep.contains_site(site) {
            kept_pos.push(p);
        } else {
            traced_pos.push(p);
        }
    }
    Ok(SiteSplit {
        kept: digit_offsets(d, len, &kept_pos),
        traced: digit_offsets(d, len, &traced_pos),
    })
}

/// Normalized partial trace onto `keep ⊆ op.window()`.
pub fn reduce(op: &SupportedOperator, keep: Window) -> Result<SupportedOperator> {
    if !op.window.contains(&keep) {
        return Err(Error::Support(format!(
            "cannot reduce {} onto {keep}",
            op.window
        )));
    }
    let red = reduce_sites(op, &SiteSet::from(keep))?;
    SupportedOperator::new(red, keep, op.local_dim)
}

/// Normalized partial trace onto the sites of `keep` that lie in the window,
/// in increasing site order.
pub fn reduce_sites(op: &SupportedOperator, keep: &SiteSet) -> Result<DenseOperator> {
    let s = split_sites(op, keep)?;
    let nk = s.kept.len();
    let norm = 1.0 / s.traced.len() as f64;
    let mut red = Mat::<c64>::zeros(nk, nk);
    for (b, &cb) in s.kept.iter().enumerate() {
        for (a, &ca) in s.kept.iter().enumerate() {
            let mut acc = czero();
            for &t in &s.traced {
                acc += op.op.mat[(ca + t, cb + t)];
            }
            red[(a, b)] = acc * norm;
        }
    }
    Ok(DenseOperator::from_mat(red))
}

/// `O^{(W)}`: normalized partial trace over the complement of `keep`,
/// re-embedded with the identity on the original window.
pub fn truncate(op: &SupportedOperator, keep: Window) -> Result<SupportedOperator> {
    if !op.window.contains(&keep) {
        return Err(Error::Support(format!(
            "truncation window {keep} not inside {}",
            op.window
        )));
    }
    truncate_sites(op, &SiteSet::from(keep))
}

/// Truncation onto an arbitrary site set (sites outside the window are ignored).
pub fn truncate_sites(op: &SupportedOperator, keep: &SiteSet) -> Result<SupportedOperator> {
    let s = split_sites(op, keep)?;
    if s.traced.len() == 1 {
        return Ok(op.clone());
    }
    let red = reduce_sites(op, keep)?;
    let dim = op.dim();
    let mut out = Mat::<c64>::zeros(dim, dim);
    for (b, &cb) in s.kept.iter().enumerate() {
        for (a, &ca) in s.kept.iter().enumerate() {
            let v = red.mat[(a, b)];
            if v == czero() {
                continue;
            }
            for &t in &s.traced {
                out[(ca + t, cb + t)] = v;
            }
        }
    }
    Ok(op.with_op(DenseOperator::from_mat(out)))
}

/// Spectral norm; Lanczos from [`LANCZOS_MIN_DIM`] on, with the dense
/// computation as fallback.
pub fn op_norm(op: &DenseOperator) -> Result<f64> {
    if !op.is_finite() {
        return Err(Error::Numeric("non-finite entries in op_norm".into()));
    }
    if op.dim() == 0 {
        return Ok(0.0);
    }
    if op.dim() >= LANCZOS_MIN_DIM {
        if let Some(v) = lanczos_norm(op.mat()) {
            return Ok(v);
        }
    }
    op_norm_dense(op)
}

/// Spectral norm from a full dense eigenvalue computation.
pub fn op_norm_dense(op: &DenseOperator) -> Result<f64> {
    if !op.is_finite() {
        return Err(Error::Numeric("non-finite entries in op_norm".into()));
    }
    if op.dim() == 0 {
        return Ok(0.0);
    }
    if op.hermitian_violation() <= HERMITIAN_TOL * op.max_abs() {
        let ev = herm_eigenvalues(op)?;
        return Ok(ev.iter().fold(0.0f64, |m, v| m.max(v.abs())));
    }
    let gram = op.adjoint().matmul(op);
    let ev = herm_eigenvalues(&gram)?;
    Ok(ev.last().copied().unwrap_or(0.0).max(0.0).sqrt())
}

fn dot(a: &Mat<c64>, b: &Mat<c64>) -> c64 {
    (0..a.nrows()).map(|i| a[(i, 0)].conj() * b[(i, 0)]).sum()
}

fn axpy(y: &mut Mat<c64>, c: c64, x: &Mat<c64>) {
    for i in 0..y.nrows() {
        let v = x[(i, 0)];
        y[(i, 0)] -= c * v;
    }
}

fn col_norm(a: &Mat<c64>) -> f64 {
    (0..a.nrows()).map(|i| a[(i, 0)].norm_sqr()).sum::<f64>().sqrt()
}

/// Spectral norm from Lanczos on `A†A` with full reorthogonalization,
/// iterated until the top Ritz value is stable to machine precision;
/// `None` when that does not happen within the iteration cap.
pub fn lanczos_norm(a: MatRef<'_, c64>) -> Option<f64> {
    let n = a.ncols();
    let mut state = 0x9e37_79b9_7f4a_7c15u64;
    let mut q = Mat::from_fn(n, 1, |_, _| {
        state = crate::rng::splitmix64(state);
        let re = (state >> 11) as f64 / (1u64 << 53) as f64 - 0.5;
        state = crate::rng::splitmix64(state);
        let im = (state >> 11) as f64 / (1u64 << 53) as f64 - 0.5;
        c64::new(re, im)
    });
    let s = col_norm(&q);
    q *= faer::Scale(c64::new(1.0 / s, 0.0));
    let max_iter = n.min(120);
    let mut basis: Vec<Mat<c64>> = Vec::with_capacity(max_iter);
    let mut alpha: Vec<f64> = Vec::new();
    let mut beta: Vec<f64> = Vec::new();
    let mut top = 0.0f64;
    let mut stable = 0;
    for j in 0..max_iter {
        let aq = a * &q;
        let mut w = a.adjoint() * &aq;
        let aj = dot(&q, &w).re;
        alpha.push(aj);
        basis.push(q.clone());
        for _ in 0..2 {
            for b in &basis {
                let c = dot(b, &w);
                axpy(&mut w, c, b);
            }
        }
        let ritz = {
            let m = alpha.len();
            let t = Mat::from_fn(m, m, |r, c| {
                if r == c {
                    alpha[r]
                } else if r == c + 1 {
                    beta[c]
                } else if c == r + 1 {
                    beta[r]
                } else {
                    0.0
                }
            });
            t.self_adjoint_eigenvalues(Side::Lower)
                .map(|v| v.last().copied().unwrap_or(0.0))
                .unwrap_or(aj)
        };
        if j > 0 && (ritz - top).abs() <= 1e-14 * ritz.abs() {
            stable += 1;
        } else {
            stable = 0;
        }
        top = top.max(ritz);
        let bj = col_norm(&w);
        if stable >= 2 || bj <= 1e-14 * top.max(f64::MIN_POSITIVE) || j + 1 == n {
            return Some(top.max(0.0).sqrt());
        }
        beta.push(bj);
        q = w * faer::Scale(c64::new(1.0 / bj, 0.0));
    }
    None
}

/// Eigendecomposition `H = V diag(λ) V†` with ascending `λ`.
#[derive(Clone, Debug)]
pub struct Spectrum {
    pub eigenvalues: Vec<f64>,
    pub basis: Mat<c64>,
}

impl Spectrum {
    pub fn dim(&self) -> usize {
        self.eigenvalues.len()
    }

    pub fn min(&self) -> f64 {
        self.eigenvalues[0]
    }

    pub fn max(&self) -> f64 {
        *self.eigenvalues.last().unwrap()
    }

    /// `V† O V`.
    pub fn to_eigenbasis(&self, op: &DenseOperator) -> DenseOperator {
        let tmp = &op.mat * &self.basis;
        DenseOperator::from_mat(self.basis.adjoint() * &tmp)
    }

    /// `V X V†`.
    pub fn from_eigenbasis(&self, op: &DenseOperator) -> DenseOperator {
        let tmp = &self.basis * &op.mat;
        DenseOperator::from_mat(&tmp * self.basis.adjoint())
    }

    pub fn reconstruct(&self) -> DenseOperator {
        self.from_eigenbasis(&DenseOperator::diagonal(&self.eigenvalues))
    }

    /// `V f(λ) V†` for a scalar function.
    pub fn apply(&self, f: impl Fn(f64) -> c64) -> DenseOperator {
        let n = self.dim();
        let vals: Vec<c64> = self.eigenvalues.iter().map(|&l| f(l)).collect();
        let scaled = Mat::from_fn(n, n, |i, j| self.basis[(i, j)] * vals[j]);
        DenseOperator::from_mat(&scaled * self.basis.adjoint())
    }
}

fn check_hermitian(op: &DenseOperator) -> Result<()> {
    if !op.is_finite() {
        return Err(Error::Numeric("non-finite entries".into()));
    }
    let viol = op.hermitian_violation();
    if viol > HERMITIAN_TOL * op.max_abs().max(1.0) {
        return Err(Error::Shape(format!(
            "operator is not Hermitian (violation {viol:.3e})"
        )));
    }
    Ok(())
}

fn real_symmetrized(op: &DenseOperator) -> Mat<f64> {
    let n = op.dim();
    Mat::from_fn(n, n, |i, j| 0.5 * (op.mat[(i, j)].re + op.mat[(j, i)].re))
}

/// Hermitian eigendecomposition; Hermiticity is enforced to `1e-12` and the
/// input is symmetrized before factorization.
pub fn herm_eig(op: &DenseOperator) -> Result<Spectrum> {
    check_hermitian(op)?;
    let n = op.dim();
    let err = |e| Error::Numeric(format!("eigendecomposition failed: {e:?}"));
    if op.is_real() {
        let evd = real_symmetrized(op).self_adjoint_eigen(Side::Lower).map_err(err)?;
        let s = evd.S().column_vector();
        let u = evd.U();
        Ok(Spectrum {
            eigenvalues: (0..n).map(|i| s[i]).collect(),
            basis: Mat::from_fn(n, n, |i, j| c64::new(u[(i, j)], 0.0)),
        })
    } else {
        let evd = op.hermitian_part().mat.self_adjoint_eigen(Side::Lower).map_err(err)?;
        let s = evd.S().column_vector();
        Ok(Spectrum {
            eigenvalues: (0..n).map(|i| s[i].re).collect(),
            basis: evd.U().to_owned(),
        })
    }
}

/// Ascending eigenvalues of a Hermitian operator.
pub fn herm_eigenvalues(op: &DenseOperator) -> Result<Vec<f64>> {
    check_hermitian(op)?;
    let err = |e| Error::Numeric(format!("eigenvalue computation failed: {e:?}"));
    if op.is_diagonal() {
        let mut v = op.diagonal_real();
        v.sort_by(f64::total_cmp);
        return Ok(v);
    }
    if op.is_real() {
        real_symmetrized(op).self_adjoint_eigenvalues(Side::Lower).map_err(err)
    } else {
        op.hermitian_part()
            .mat
            .self_adjoint_eigenvalues(Side::Lower)
            .map_err(err)
    }
}

/// Exponent scale for `exp(z λ)`: `z = s` or `z = i s`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Scale {
    Real(f64),
    Imag(f64),
}

impl Scale {
    fn exp(self, x: f64) -> c64 {
        match self {
            Scale::Real(s) => c64::new((s * x).exp(), 0.0),
            Scale::Imag(s) => c64::from_polar(1.0, s * x),
        }
    }
}

/// `exp(z H)` from a spectrum of `H`.
pub fn expm_scaled(spec: &Spectrum, scale: Scale) -> Result<DenseOperator> {
    if let Scale::Real(s) = scale {
        let top = (s * spec.min()).max(s * spec.max());
        if top > MAX_EXPONENT {
            return Err(Error::Overflow { exponent: top });
        }
    }
    Ok(spec.apply(|l| scale.exp(l)))
}

/// `exp(z H) O exp(-z H)` computed in the eigenbasis of `H`.
pub fn conjugate(op: &DenseOperator, spec: &Spectrum, scale: Scale) -> Result<DenseOperator> {
    if let Scale::Real(s) = scale {
        let top = s.abs() * (spec.max() - spec.min());
        if top > MAX_EXPONENT {
            return Err(Error::Overflow { exponent: top });
        }
    }
    let mut t = spec.to_eigenbasis(op);
    conjugate_in_eigenbasis(&mut t, spec, scale);
    Ok(spec.from_eigenbasis(&t))
}

/// Multiplies entry `(a,b)` by `exp(z (λ_a - λ_b))`.
pub fn conjugate_in_eigenbasis(t: &mut DenseOperator, spec: &Spectrum, scale: Scale) {
    let ev = &spec.eigenvalues;
    let n = ev.len();
    if n == 0 {
        return;
    }
    let mid = 0.5 * (spec.min() + spec.max());
    let up: Vec<c64> = ev.iter().map(|l| scale.exp(l - mid)).collect();
    let down: Vec<c64> = ev.iter().map(|l| scale.exp(mid - l)).collect();
    for b in 0..n {
        for a in 0..n {
            t.mat[(a, b)] *= up[a] * down[b];
        }
    }
}

/// Matrix exponential of a general operator: Taylor series with scaling and squaring.
pub fn expm(x: &DenseOperator) -> Result<DenseOperator> {
    if !x.is_finite() {
        return Err(Error::Numeric("non-finite entries in expm".into()));
    }
    let n = x.dim();
    let norm = x.frobenius_norm();
    let mut squarings = 0u32;
    if norm > 0.25 {
        squarings = (norm / 0.25).log2().ceil() as u32;
    }
    if squarings > 60 {
        return Err(Error::Overflow { exponent: norm });
    }
    let y = x.scale_real(0.5f64.powi(squarings as i32));
    let mut sum = DenseOperator::identity(n);
    let mut term = DenseOperator::identity(n);
    for p in 1..=30 {
        term = term.matmul(&y).scale_real(1.0 / p as f64);
        sum += &term;
        if term.frobenius_norm() <= 1e-18 * sum.frobenius_norm() {
            break;
        }
    }
    for _ in 0..squarings {
        sum = sum.matmul(&sum);
    }
    Ok(sum)
}

/// `(h ⊗ I) · x` for `h.window() ⊆ x.window()`.
pub fn apply_left(h: &SupportedOperator, x: &SupportedOperator) -> Result<DenseOperator> {
    let mut out = Mat::<c64>::zeros(x.dim(), x.dim());
    left_acc(h, x, &mut out, c64::new(1.0, 0.0))?;
    Ok(DenseOperator::from_mat(out))
}

fn nonzeros(h: &SupportedOperator) -> Vec<(usize, usize, c64)> {
    let mid = h.dim();
    let mut nz = Vec::new();
    for j in 0..mid {
        for i in 0..mid {
            let v = h.op.mat[(i, j)];
            if v != czero() {
                nz.push((i, j, v));
            }
        }
    }
    nz
}

/// `out += c (h ⊗ I) x`.
fn left_acc(h: &SupportedOperator, x: &SupportedOperator, out: &mut Mat<c64>, c: c64) -> Result<()> {
    let (left, mid, right) = layout(h, x.window)?;
    let nz: Vec<(usize, usize, c64)> = nonzeros(h).into_iter().map(|(i, j, v)| (i, j, v * c)).collect();
    for col in 0..x.dim() {
        let xs = x.op.mat.col_as_slice(col);
        let os = out.col_as_slice_mut(col);
        for l in 0..left {
            for &(i, j, v) in &nz {
                let dst = (l * mid + i) * right;
                let src = (l * mid + j) * right;
                for (o, xv) in os[dst..dst + right].iter_mut().zip(&xs[src..src + right]) {
                    *o += v * xv;
                }
            }
        }
    }
    Ok(())
}

/// `x · (h ⊗ I)` for `h.window() ⊆ x.window()`.
pub fn apply_right(x: &SupportedOperator, h: &SupportedOperator) -> Result<DenseOperator> {
    let mut out = Mat::<c64>::zeros(x.dim(), x.dim());
    right_acc(x, h, &mut out, c64::new(1.0, 0.0))?;
    Ok(DenseOperator::from_mat(out))
}

/// `out += c x (h ⊗ I)`.
fn right_acc(x: &SupportedOperator, h: &SupportedOperator, out: &mut Mat<c64>, c: c64) -> Result<()> {
    let (left, mid, right) = layout(h, x.window)?;
    let nz = nonzeros(h);
    for l in 0..left {
        for r in 0..right {
            for &(i, j, v) in &nz {
                let col = (l * mid + j) * right + r;
                let src = (l * mid + i) * right + r;
                let v = v * c;
                let xs = x.op.mat.col_as_slice(src);
                let os = out.col_as_slice_mut(col);
                for (o, xv) in os.iter_mut().zip(xs) {
                    *o += xv * v;
                }
            }
        }
    }
    Ok(())
}

fn layout(h: &SupportedOperator, target: Window) -> Result<(usize, usize, usize)> {
    let w = h.window;
    if !target.contains(&w) {
        return Err(Error::Support(format!("{w} is not inside {target}")));
    }
    let d = h.local_dim;
    Ok((
        d.pow((w.lo() - target.lo()) as u32),
        h.dim(),
        d.pow((target.hi() - w.hi()) as u32),
    ))
}

/// `ad_H^m(O) = [H, [H, …, [H, O]]]` keeping only the terms that touch the
/// current support at each level.
pub fn adjoint_power(
    terms: &[SupportedOperator],
    o: &SupportedOperator,
    m: usize,
) -> Result<SupportedOperator> {
    if m > ADJOINT_POWER_CAP {
        return Err(Error::InvalidParam(format!(
            "adjoint power {m} exceeds cap {ADJOINT_POWER_CAP}"
        )));
    }
    if terms.iter().any(|t| t.local_dim != o.local_dim) {
        return Err(Error::Support("mixed local dimensions".into()));
    }
    let mut cur = o.clone();
    for _ in 0..m {
        let touching: Vec<&SupportedOperator> = terms
            .iter()
            .filter(|t| t.window.intersects(&cur.window))
            .collect();
        let target = touching
            .iter()
            .fold(cur.window, |w, t| w.hull(&t.window));
        let x = embed(&cur, target)?;
        let mut acc = Mat::<c64>::zeros(x.dim(), x.dim());
        for t in touching {
            left_acc(t, &x, &mut acc, c64::new(1.0, 0.0))?;
            right_acc(&x, t, &mut acc, c64::new(-1.0, 0.0))?;
        }
        cur = SupportedOperator::new(DenseOperator::from_mat(acc), target, o.local_dim)?;
    }
    Ok(cur)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn on(op: DenseOperator, lo: usize, hi: usize) -> SupportedOperator {
        SupportedOperator::new(op, Window::new(lo, hi).unwrap(), 2).unwrap()
    }

    fn close(a: &DenseOperator, b: &DenseOperator, tol: f64) -> bool {
        (a - b).max_abs() <= tol
    }

    #[test]
    fn kron_of_identities() {
        let k = kron(&DenseOperator::identity(2), &DenseOperator::identity(3)).unwrap();
        assert_eq!(k, DenseOperator::identity(6));
    }

    #[test]
    fn truncating_z_on_other_site_gives_zero() {
        let z1 = on(pauli_z(), 1, 1);
        let z1 = embed(&z1, Window::new(1, 2).unwrap()).unwrap();
        let t = truncate(&z1, Window::site(2).unwrap()).unwrap();
        assert!(t.op().max_abs() < 1e-15);
        let kept = truncate(&z1, Window::site(1).unwrap()).unwrap();
        assert!(close(kept.op(), z1.op(), 0.0));
    }

    #[test]
    fn norm_of_zz_plus_x() {
        let zz = kron(&pauli_z(), &pauli_z()).unwrap();
        let xi = kron(&pauli_x(), &DenseOperator::identity(2)).unwrap();
        let n = op_norm(&(&zz + &xi)).unwrap();
        assert_relative_eq!(n, 2f64.sqrt(), max_relative = 1e-12);
    }

    #[test]
    fn norm_of_non_hermitian() {
        let mut a = DenseOperator::zeros(2);
        a.set(0, 1, c64::new(3.0, 0.0));
        assert_relative_eq!(op_norm(&a).unwrap(), 3.0, max_relative = 1e-12);
    }

    #[test]
    fn lanczos_matches_dense_norm() {
        let mut state = 7u64;
        let mut next = || {
            state = crate::rng::splitmix64(state);
            (state >> 11) as f64 / (1u64 << 53) as f64 - 0.5
        };
        let g = DenseOperator::from_fn(300, |_, _| c64::new(next(), next()));
        let gram = g.adjoint().matmul(&g);
        let ev = herm_eigenvalues(&gram).unwrap();
        let dense = ev.last().unwrap().sqrt();
        assert_relative_eq!(lanczos_norm(g.mat()).unwrap(), dense, max_relative = 1e-12);
        let h = g.hermitian_part();
        let ev = herm_eigenvalues(&h).unwrap();
        let dense = ev.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        assert_relative_eq!(op_norm(&h).unwrap(), dense, max_relative = 1e-12);
        assert_eq!(lanczos_norm(DenseOperator::zeros(300).mat()), Some(0.0));
        let d = DenseOperator::diagonal(&(0..300).map(|i| i as f64 / 100.0).collect::<Vec<_>>());
        assert_relative_eq!(op_norm(&d).unwrap(), 2.99, max_relative = 1e-12);
    }

    #[test]
    fn commutator_of_x_and_z() {
        let c = pauli_x().commutator(&pauli_z());
        assert_relative_eq!(op_norm(&c).unwrap(), 2.0, max_relative = 1e-12);
        let mut expect = DenseOperator::zeros(2);
        expect.set(0, 1, c64::new(-2.0, 0.0));
        expect.set(1, 0, c64::new(2.0, 0.0));
        assert!(close(&c, &expect, 1e-15));
    }

    #[test]
    fn adjoint_power_zero_is_identity_map() {
        let o = on(pauli_x(), 3, 3);
        let terms = vec![on(kron(&pauli_z(), &pauli_z()).unwrap(), 2, 3)];
        assert_eq!(adjoint_power(&terms, &o, 0).unwrap(), o);
    }

    #[test]
    fn adjoint_power_matches_dense_commutator() {
        let zz = kron(&pauli_z(), &pauli_z()).unwrap();
        let xx = kron(&pauli_x(), &pauli_x()).unwrap();
        let terms = vec![on(zz, 1, 2), on(xx.clone(), 2, 3), on(zz_plus_x(), 3, 4)];
        let o = on(pauli_y(), 2, 2);
        let full = Window::new(1, 4).unwrap();
        let mut h = SupportedOperator::zeros(full, 2).unwrap();
        for t in &terms {
            add_embedded(&mut h, t, 1.0).unwrap();
        }
        let mut dense = embed(&o, full).unwrap().into_op();
        for m in 1..=3 {
            dense = h.op().commutator(&dense);
            let local = adjoint_power(&terms, &o, m).unwrap();
            let lifted = embed(&local, full).unwrap();
            assert!(close(lifted.op(), &dense, 1e-12), "m = {m}");
        }
    }

    fn zz_plus_x() -> DenseOperator {
        let zz = kron(&pauli_z(), &pauli_z()).unwrap();
        let xi = kron(&pauli_x(), &DenseOperator::identity(2)).unwrap();
        &zz + &xi
    }

    #[test]
    fn adjoint_power_cap() {
        let o = on(pauli_x(), 1, 1);
        assert!(matches!(
            adjoint_power(&[], &o, ADJOINT_POWER_CAP + 1),
            Err(Error::InvalidParam(_))
        ));
    }

    #[test]
    fn dimension_cap_is_enforced() {
        let w = Window::new(1, 17).unwrap();
        assert!(matches!(
            SupportedOperator::identity(w, 2),
            Err(Error::DimensionCap { .. })
        ));
    }

    #[test]
    fn herm_eig_rejects_non_hermitian() {
        let mut a = DenseOperator::zeros(2);
        a.set(0, 1, c64::new(1.0, 0.0));
        assert!(matches!(herm_eig(&a), Err(Error::Shape(_))));
    }

    #[test]
    fn herm_eig_reconstructs_complex_input() {
        let h = &zz_plus_x() + &kron(&pauli_y(), &pauli_x()).unwrap();
        let s = herm_eig(&h).unwrap();
        assert!(close(&s.reconstruct(), &h, 1e-13));
        assert!(s.eigenvalues.windows(2).all(|w| w[0] <= w[1]));
    }

    #[test]
    fn expm_agrees_with_spectral_exponential() {
        let h = &zz_plus_x() + &kron(&pauli_y(), &pauli_x()).unwrap();
        let s = herm_eig(&h).unwrap();
        let a = expm_scaled(&s, Scale::Real(-1.3)).unwrap();
        let b = expm(&h.scale_real(-1.3)).unwrap();
        assert!(close(&a, &b, 1e-12));
        let u = expm_scaled(&s, Scale::Imag(0.7)).unwrap();
        let v = expm(&h.scale(c64::new(0.0, 0.7))).unwrap();
        assert!(close(&u, &v, 1e-12));
    }

    #[test]
    fn expm_overflow_is_reported() {
        let s = herm_eig(&DenseOperator::diagonal(&[0.0, 1.0])).unwrap();
        assert!(matches!(
            expm_scaled(&s, Scale::Real(800.0)),
            Err(Error::Overflow { .. })
        ));
    }

    #[test]
    fn conjugate_matches_explicit_product() {
        let h = zz_plus_x();
        let o = kron(&pauli_y(), &pauli_z()).unwrap();
        let s = herm_eig(&h).unwrap();
        let got = conjugate(&o, &s, Scale::Real(0.4)).unwrap();
        let want = expm_scaled(&s, Scale::Real(0.4))
            .unwrap()
            .matmul(&o)
            .matmul(&expm_scaled(&s, Scale::Real(-0.4)).unwrap());
        assert!(close(&got, &want, 1e-12));
    }

    #[test]
    fn truncation_onto_split_site_set() {
        let full = Window::new(1, 3).unwrap();
        let zxz = kron(&kron(&pauli_z(), &pauli_x()).unwrap(), &pauli_z()).unwrap();
        let zxz = SupportedOperator::new(zxz.clone(), full, 2).unwrap();
        let keep = SiteSet::new([Window::site(1).unwrap(), Window::site(3).unwrap()]);
        let t = truncate_sites(&zxz, &keep).unwrap();
        assert!(t.op().max_abs() < 1e-15);
        let zz = kron(&kron(&pauli_z(), &DenseOperator::identity(2)).unwrap(), &pauli_z()).unwrap();
        let zz = SupportedOperator::new(zz, full, 2).unwrap();
        let t = truncate_sites(&zz, &keep).unwrap();
        assert!(close(t.op(), zz.op(), 1e-15));
        let red = reduce_sites(&zz, &keep).unwrap();
        assert!(close(&red, &kron(&pauli_z(), &pauli_z()).unwrap(), 1e-15));
    }

    #[test]
    fn apply_left_right_match_embedding() {
        let full = Window::new(1, 4).unwrap();
        let h = on(kron(&pauli_y(), &pauli_x()).unwrap(), 2, 3);
        let x = SupportedOperator::new(
            DenseOperator::from_fn(16, |i, j| c64::new((i * 3 + j) as f64, (i as f64) - (j as f64))),
            full,
            2,
        )
        .unwrap();
        let he = embed(&h, full).unwrap();
        assert!(close(&apply_left(&h, &x).unwrap(), &he.op().matmul(x.op()), 1e-12));
        assert!(close(&apply_right(&x, &h).unwrap(), &x.op().matmul(he.op()), 1e-12));
    }
}
