//! k-local open chains `H = Σ_j h_j`, their presets, window geometry and the
//! inside / outside / boundary splitting of a term list.

use std::io::{Read, Write};

use faer::c64;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::operator::{
    add_embedded, kron, op_norm, pauli_x, pauli_y, pauli_z, space_dim, DenseOperator,
    SupportedOperator,
};
use crate::rng::{stream_rng, STREAM_MODEL};
use crate::window::{SiteSet, Window};

/// One interaction term `h_j` acting on `[start, start + width - 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct LocalTerm {
    start: usize,
    width: usize,
    op: DenseOperator,
    norm_bound: f64,
}

impl LocalTerm {
    pub fn new(start: usize, width: usize, op: DenseOperator, d: usize) -> Result<Self> {
        if start == 0 || width == 0 {
            return Err(Error::Geometry(format!(
                "term at start {start} with width {width}"
            )));
        }
        let dim = space_dim(d, width)?;
        if op.dim() != dim {
            return Err(Error::Shape(format!(
                "term of width {width} needs dimension {dim}, got {}",
                op.dim()
            )));
        }
        if !op.is_hermitian() {
            return Err(Error::Shape(format!("term at site {start} is not Hermitian")));
        }
        let norm_bound = op_norm(&op)?;
        if norm_bound > 1.0 + 1e-12 {
            return Err(Error::InvalidParam(format!(
                "term at site {start} has norm {norm_bound:.6} > 1"
            )));
        }
        Ok(Self {
            start,
            width,
            op,
            norm_bound,
        })
    }

    pub fn start(&self) -> usize {
        self.start
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn op(&self) -> &DenseOperator {
        &self.op
    }

    pub fn norm_bound(&self) -> f64 {
        self.norm_bound
    }

    pub fn support(&self) -> Window {
        Window::new(self.start, self.start + self.width - 1).expect("valid term support")
    }

    pub fn to_supported(&self, d: usize) -> SupportedOperator {
        SupportedOperator::new(self.op.clone(), self.support(), d).expect("term shape checked")
    }
}

/// Open chain of `n` sites of dimension `d` with terms of width at most `k`.
#[derive(Clone, Debug, PartialEq)]
pub struct ChainSpec {
    n: usize,
    d: usize,
    k: usize,
    terms: Vec<LocalTerm>,
    rotation: Option<DenseOperator>,
}

impl ChainSpec {
    pub fn new(n: usize, d: usize, k: usize, mut terms: Vec<LocalTerm>) -> Result<Self> {
        if n == 0 || k == 0 {
            return Err(Error::Geometry(format!("chain with n = {n}, k = {k}")));
        }
        if d < 2 {
            return Err(Error::InvalidParam(format!("local dimension {d} < 2")));
        }
        for t in &terms {
            if t.width > k {
                return Err(Error::Geometry(format!(
                    "term at {} has width {} > k = {k}",
                    t.start, t.width
                )));
            }
            if t.start + t.width - 1 > n {
                return Err(Error::Geometry(format!(
                    "term {} leaves the chain of {n} sites",
                    t.support()
                )));
            }
            if t.op.dim() != space_dim(d, t.width)? {
                return Err(Error::Shape("term dimension does not match d".into()));
            }
        }
        terms.sort_by_key(|t| t.start);
        Ok(Self {
            n,
            d,
            k,
            terms,
            rotation: None,
        })
    }

    /// Declares a single-site unitary `U` such that every term is diagonal in
    /// the product basis `U^{⊗n}|s⟩`.
    pub fn with_rotation(mut self, u: DenseOperator) -> Result<Self> {
        if u.dim() != self.d {
            return Err(Error::Shape("rotation must act on one site".into()));
        }
        let defect = (&u.adjoint().matmul(&u) - &DenseOperator::identity(self.d)).max_abs();
        if defect > 1e-12 {
            return Err(Error::InvalidParam("rotation is not unitary".into()));
        }
        self.rotation = Some(u);
        Ok(self)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn terms(&self) -> &[LocalTerm] {
        &self.terms
    }

    pub fn num_terms(&self) -> usize {
        self.terms.len()
    }

    pub fn rotation(&self) -> Option<&DenseOperator> {
        self.rotation.as_ref()
    }

    pub fn full_window(&self) -> Window {
        Window::new(1, self.n).expect("n >= 1")
    }

    /// 1-indexed term access.
    pub fn term(&self, i: usize) -> Result<&LocalTerm> {
        if i == 0 || i > self.terms.len() {
            return Err(Error::IndexOutOfRange {
                index: i,
                max: self.terms.len(),
            });
        }
        Ok(&self.terms[i - 1])
    }
}

/// Named model families.
#[derive(Clone, Debug, PartialEq)]
pub enum Preset {
    /// `h_j = -(J Z_j Z_{j+1} + g X_j)`, the last term also carries `-g X_n`.
    Tfim { j: f64, g: f64 },
    /// `h_j = J (X X + Y Y + Δ Z Z)`.
    Xxz { j: f64, delta: f64 },
    /// `h_j = -(J Z_j Z_{j+1} + h Z_j)`, last term also `-h Z_n`.
    ClassicalIsing { j: f64, h: f64 },
    /// `h_j = J1 σ_j·σ_{j+1} + J2 Σ_α σ^α_j σ^α_{j+2}` (width 3).
    ThreeSite { j1: f64, j2: f64 },
    /// Gaussian Hermitian width-k terms, each scaled to unit norm.
    RandomKlocal,
}

impl Preset {
    pub fn name(&self) -> &'static str {
        match self {
            Preset::Tfim { .. } => "tfim",
            Preset::Xxz { .. } => "xxz",
            Preset::ClassicalIsing { .. } => "classical_ising",
            Preset::ThreeSite { .. } => "three_site",
            Preset::RandomKlocal => "random_klocal",
        }
    }

    /// Interaction width of the family (`random_klocal` uses the requested k).
    pub fn width(&self, k: usize) -> usize {
        match self {
            Preset::ThreeSite { .. } => 3,
            Preset::RandomKlocal => k,
            _ => 2,
        }
    }
}

fn id2() -> DenseOperator {
    DenseOperator::identity(2)
}

fn two_site(a: &DenseOperator, b: &DenseOperator) -> DenseOperator {
    kron(a, b).expect("4x4")
}

fn rescale_terms(ops: Vec<DenseOperator>) -> Result<Vec<DenseOperator>> {
    let mut top = 0.0f64;
    for o in &ops {
        top = top.max(op_norm(o)?);
    }
    if top > 1.0 {
        Ok(ops.iter().map(|o| o.scale_real(1.0 / top)).collect())
    } else {
        Ok(ops)
    }
}

/// Builds a preset chain. Fixed-coupling families are divided by their
/// largest term norm whenever it exceeds one, so every `‖h_j‖ ≤ 1`.
pub fn build_preset(preset: &Preset, n: usize, d: usize, k: usize, seed: u64) -> Result<ChainSpec> {
    let width = preset.width(k);
    if !matches!(preset, Preset::RandomKlocal) && d != 2 {
        return Err(Error::InvalidParam(format!(
            "preset {} is defined for d = 2",
            preset.name()
        )));
    }
    if width > k {
        return Err(Error::InvalidParam(format!(
            "preset {} needs k >= {width}",
            preset.name()
        )));
    }
    if n < k {
        return Err(Error::Geometry(format!("chain of {n} sites shorter than k = {k}")));
    }
    let count = n - width + 1;
    let (x, y, z) = (pauli_x(), pauli_y(), pauli_z());
    let mut rotation = None;
    let ops: Vec<DenseOperator> = match preset {
        Preset::Tfim { j, g } => {
            let zz = two_site(&z, &z);
            let xi = two_site(&x, &id2());
            let ix = two_site(&id2(), &x);
            let ops = (1..=count)
                .map(|s| {
                    let mut h = &zz.scale_real(*j) + &xi.scale_real(*g);
                    if s == count {
                        h += &ix.scale_real(*g);
                    }
                    h.scale_real(-1.0)
                })
                .collect();
            rescale_terms(ops)?
        }
        Preset::Xxz { j, delta } => {
            let h = &(&two_site(&x, &x) + &two_site(&y, &y)) + &two_site(&z, &z).scale_real(*delta);
            rescale_terms(vec![h.scale_real(*j); count])?
        }
        Preset::ClassicalIsing { j, h } => {
            rotation = Some(id2());
            let zz = two_site(&z, &z);
            let zi = two_site(&z, &id2());
            let iz = two_site(&id2(), &z);
            let ops = (1..=count)
                .map(|s| {
                    let mut t = &zz.scale_real(*j) + &zi.scale_real(*h);
                    if s == count {
                        t += &iz.scale_real(*h);
                    }
                    t.scale_real(-1.0)
                })
                .collect();
            rescale_terms(ops)?
        }
        Preset::ThreeSite { j1, j2 } => {
            let mut h = DenseOperator::zeros(8);
            for p in [&x, &y, &z] {
                h += &kron(&two_site(p, p), &id2())?.scale_real(*j1);
                h += &kron(&two_site(p, &id2()), p)?.scale_real(*j2);
            }
            rescale_terms(vec![h; count])?
        }
        Preset::RandomKlocal => {
            let mut rng = stream_rng(seed, STREAM_MODEL);
            let dim = space_dim(d, width)?;
            let mut ops = Vec::with_capacity(count);
            for _ in 0..count {
                let g = DenseOperator::from_fn(dim, |_, _| {
                    c64::new(StandardNormal.sample(&mut rng), StandardNormal.sample(&mut rng))
                });
                let h = g.hermitian_part();
                let norm = op_norm(&h)?;
                ops.push(h.scale_real(1.0 / norm));
            }
            ops
        }
    };
    let terms = ops
        .into_iter()
        .enumerate()
        .map(|(s, op)| LocalTerm::new(s + 1, width, op, d))
        .collect::<Result<Vec<_>>>()?;
    let spec = ChainSpec::new(n, d, k, terms)?;
    match rotation {
        Some(u) => spec.with_rotation(u),
        None => Ok(spec),
    }
}

/// Terms of `H_i = Σ_{j<i} h_j`.
pub fn partial_hamiltonian(spec: &ChainSpec, i: usize) -> Result<&[LocalTerm]> {
    if i == 0 || i > spec.num_terms() + 1 {
        return Err(Error::IndexOutOfRange {
            index: i,
            max: spec.num_terms() + 1,
        });
    }
    Ok(&spec.terms[..i - 1])
}

/// Support of `h_i` grown by `l` sites per side, clipped to the chain.
pub fn window_around(spec: &ChainSpec, i: usize, l: usize) -> Result<Window> {
    Ok(spec.term(i)?.support().extend(l, spec.n))
}

/// Whether extending the support of `h_i` by `l` hit a chain end.
pub fn is_clipped(spec: &ChainSpec, i: usize, l: usize) -> Result<bool> {
    let s = spec.term(i)?.support();
    Ok(s.lo() <= l || s.hi() + l > spec.n)
}

/// Terms partitioned relative to a window.
#[derive(Clone, Debug, PartialEq)]
pub struct HamSplit {
    pub window: Window,
    pub inside: Vec<LocalTerm>,
    pub outside: Vec<LocalTerm>,
    pub boundary: Vec<LocalTerm>,
}

impl HamSplit {
    /// Union of boundary-term supports.
    pub fn boundary_support(&self) -> SiteSet {
        SiteSet::new(self.boundary.iter().map(LocalTerm::support))
    }
}

pub fn split(terms: &[LocalTerm], window: Window) -> HamSplit {
    let mut s = HamSplit {
        window,
        inside: Vec::new(),
        outside: Vec::new(),
        boundary: Vec::new(),
    };
    for t in terms {
        let sup = t.support();
        if window.contains(&sup) {
            s.inside.push(t.clone());
        } else if !window.intersects(&sup) {
            s.outside.push(t.clone());
        } else {
            s.boundary.push(t.clone());
        }
    }
    s
}

/// `Σ_j h_j ⊗ I` on `window`.
pub fn assemble(terms: &[LocalTerm], window: Window, d: usize) -> Result<SupportedOperator> {
    let mut acc = SupportedOperator::zeros(window, d)?;
    for t in terms {
        if !window.contains(&t.support()) {
            return Err(Error::Support(format!(
                "term {} is not inside {window}",
                t.support()
            )));
        }
        add_embedded(&mut acc, &t.to_supported(d), 1.0)?;
    }
    Ok(acc)
}

/// Diagonal of `Σ_j h_j` on `window` when every term is diagonal.
pub fn diagonal_energies(terms: &[LocalTerm], window: Window, d: usize) -> Result<Option<Vec<f64>>> {
    if !terms.iter().all(|t| t.op.is_diagonal()) {
        return Ok(None);
    }
    let dim = space_dim(d, window.len())?;
    let mut e = vec![0.0; dim];
    for t in terms {
        let sup = t.support();
        if !window.contains(&sup) {
            return Err(Error::Support(format!("term {sup} is not inside {window}")));
        }
        let right = d.pow((window.hi() - sup.hi()) as u32);
        let mid = t.op.dim();
        let diag = t.op.diagonal_real();
        for (idx, v) in e.iter_mut().enumerate() {
            *v += diag[(idx / right) % mid];
        }
    }
    Ok(Some(e))
}

const MAGIC: &[u8; 4] = b"G1DC";

/// Binary dump: `"G1DC"`, then `n, d, k, count` as little-endian `u64`, then
/// per term `start, width` (`u64`) and the matrix row-major as `(re, im)`
/// little-endian `f64` pairs.
pub fn write_binary(spec: &ChainSpec, mut w: impl Write) -> Result<()> {
    w.write_all(MAGIC)?;
    for v in [spec.n, spec.d, spec.k, spec.terms.len()] {
        w.write_all(&(v as u64).to_le_bytes())?;
    }
    for t in &spec.terms {
        w.write_all(&(t.start as u64).to_le_bytes())?;
        w.write_all(&(t.width as u64).to_le_bytes())?;
        let dim = t.op.dim();
        for i in 0..dim {
            for j in 0..dim {
                let v = t.op.get(i, j);
                w.write_all(&v.re.to_le_bytes())?;
                w.write_all(&v.im.to_le_bytes())?;
            }
        }
    }
    Ok(())
}

fn read_u64(r: &mut impl Read) -> Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

fn read_f64(r: &mut impl Read) -> Result<f64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(f64::from_le_bytes(b))
}

fn to_usize(v: u64, what: &str) -> Result<usize> {
    usize::try_from(v).map_err(|_| Error::Format(format!("{what} {v} out of range")))
}

pub fn read_binary(mut r: impl Read) -> Result<ChainSpec> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(Error::Format("bad magic".into()));
    }
    let n = to_usize(read_u64(&mut r)?, "n")?;
    let d = to_usize(read_u64(&mut r)?, "d")?;
    let k = to_usize(read_u64(&mut r)?, "k")?;
    let count = to_usize(read_u64(&mut r)?, "term count")?;
    if d < 2 || k == 0 || n == 0 {
        return Err(Error::Format(format!("invalid header n={n} d={d} k={k}")));
    }
    let mut terms = Vec::with_capacity(count.min(1 << 16));
    for _ in 0..count {
        let start = to_usize(read_u64(&mut r)?, "start")?;
        let width = to_usize(read_u64(&mut r)?, "width")?;
        if width == 0 || width > k {
            return Err(Error::Format(format!("term width {width} with k = {k}")));
        }
        let dim = space_dim(d, width)?;
        let mut op = DenseOperator::zeros(dim);
        for i in 0..dim {
            for j in 0..dim {
                let re = read_f64(&mut r)?;
                let im = read_f64(&mut r)?;
                op.set(i, j, c64::new(re, im));
            }
        }
        terms.push(LocalTerm::new(start, width, op, d)?);
    }
    ChainSpec::new(n, d, k, terms)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn tfim(n: usize, j: f64, g: f64) -> ChainSpec {
        build_preset(&Preset::Tfim { j, g }, n, 2, 2, 0).unwrap()
    }

    #[test]
    fn tfim_classical_limit_is_single_zz() {
        let s = tfim(2, 1.0, 0.0);
        assert_eq!(s.num_terms(), 1);
        let want = two_site(&pauli_z(), &pauli_z()).scale_real(-1.0);
        assert!((s.terms()[0].op() - &want).max_abs() < 1e-15);
        assert_relative_eq!(s.terms()[0].norm_bound(), 1.0, max_relative = 1e-14);
    }

    #[test]
    fn three_site_matches_formula() {
        let s = build_preset(&Preset::ThreeSite { j1: 0.2, j2: 0.1 }, 6, 2, 3, 0).unwrap();
        assert_eq!(s.num_terms(), 4);
        let (x, y, z) = (pauli_x(), pauli_y(), pauli_z());
        let mut want = DenseOperator::zeros(8);
        for p in [&x, &y, &z] {
            want += &kron(&kron(p, p).unwrap(), &id2()).unwrap().scale_real(0.2);
            want += &kron(&kron(p, &id2()).unwrap(), p).unwrap().scale_real(0.1);
        }
        for t in s.terms() {
            assert_eq!(t.width(), 3);
            assert!((t.op() - &want).max_abs() < 1e-15);
        }
    }

    #[test]
    fn random_klocal_is_deterministic() {
        let a = build_preset(&Preset::RandomKlocal, 6, 2, 3, 11).unwrap();
        let b = build_preset(&Preset::RandomKlocal, 6, 2, 3, 11).unwrap();
        let c = build_preset(&Preset::RandomKlocal, 6, 2, 3, 12).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
        for t in a.terms() {
            assert_relative_eq!(t.norm_bound(), 1.0, max_relative = 1e-12);
        }
    }

    #[test]
    fn short_chain_is_a_geometry_error() {
        assert!(matches!(
            build_preset(&Preset::RandomKlocal, 2, 2, 3, 0),
            Err(Error::Geometry(_))
        ));
    }

    #[test]
    fn partial_hamiltonian_prefixes() {
        let s = tfim(5, 1.0, 1.0);
        assert!(partial_hamiltonian(&s, 1).unwrap().is_empty());
        assert_eq!(partial_hamiltonian(&s, 5).unwrap().len(), 4);
        let p3 = partial_hamiltonian(&s, 3).unwrap();
        assert_eq!(p3, &s.terms()[..2]);
        assert!(partial_hamiltonian(&s, 6).is_err());
        assert!(partial_hamiltonian(&s, 0).is_err());
    }

    #[test]
    fn window_around_examples() {
        let s = tfim(10, 1.0, 1.0);
        assert_eq!(window_around(&s, 4, 0).unwrap(), Window::new(4, 5).unwrap());
        assert_eq!(window_around(&s, 4, 3).unwrap(), Window::new(1, 8).unwrap());
        assert_eq!(window_around(&s, 1, 3).unwrap(), Window::new(1, 5).unwrap());
        assert!(is_clipped(&s, 1, 3).unwrap());
        assert!(!is_clipped(&s, 4, 3).unwrap());
    }

    #[test]
    fn split_nearest_neighbour() {
        let s = tfim(10, 1.0, 1.0);
        let sp = split(s.terms(), Window::new(3, 6).unwrap());
        let b: Vec<usize> = sp.boundary.iter().map(|t| t.start()).collect();
        assert_eq!(b, vec![2, 6]);
        assert_eq!(sp.inside.len(), 3);
        assert_eq!(sp.outside.len(), 4);
        assert!(split(s.terms(), s.full_window()).boundary.is_empty());
        let edge = split(s.terms(), Window::new(1, 9).unwrap());
        assert_eq!(edge.boundary.len(), 1);
        assert_eq!(edge.boundary[0].support(), Window::new(9, 10).unwrap());
    }

    #[test]
    fn assemble_tfim_three_sites_by_hand() {
        let s = tfim(3, 0.7, 0.3);
        let h = assemble(s.terms(), s.full_window(), 2).unwrap();
        let (x, z, i) = (pauli_x(), pauli_z(), id2());
        let k3 = |a: &DenseOperator, b: &DenseOperator, c: &DenseOperator| {
            kron(&kron(a, b).unwrap(), c).unwrap()
        };
        let raw = &(&(&k3(&z, &z, &i).scale_real(-0.7) + &k3(&i, &z, &z).scale_real(-0.7))
            + &(&k3(&x, &i, &i) + &k3(&i, &x, &i)).scale_real(-0.3))
            + &k3(&i, &i, &x).scale_real(-0.3);
        assert!((h.op() - &raw).max_abs() < 1e-15);
        assert!(assemble(&[], s.full_window(), 2).unwrap().op().max_abs() == 0.0);
        assert!(assemble(s.terms(), Window::new(1, 2).unwrap(), 2).is_err());
    }

    #[test]
    fn diagonal_energies_match_assembly() {
        let s = build_preset(&Preset::ClassicalIsing { j: 1.0, h: 0.3 }, 5, 2, 2, 0).unwrap();
        let e = diagonal_energies(s.terms(), s.full_window(), 2).unwrap().unwrap();
        let h = assemble(s.terms(), s.full_window(), 2).unwrap();
        for (i, v) in e.iter().enumerate() {
            assert!((h.op().get(i, i).re - v).abs() < 1e-15);
        }
    }

    #[test]
    fn binary_roundtrip() {
        let a = build_preset(&Preset::RandomKlocal, 5, 2, 2, 3).unwrap();
        let mut buf = Vec::new();
        write_binary(&a, &mut buf).unwrap();
        assert_eq!(&buf[..4], b"G1DC");
        let b = read_binary(buf.as_slice()).unwrap();
        assert_eq!(a, b);
        buf[0] = b'X';
        assert!(read_binary(buf.as_slice()).is_err());
    }
}
