//! Exact reference computations: full diagonalization, transfer matrices for
//! commuting chains, Gibbs expectations and connected correlations.

use std::io::Write;

use faer::c64;

use crate::chain::{assemble, diagonal_energies, ChainSpec, LocalTerm};
use crate::error::{Error, Result};
use crate::operator::{
    apply_left, embed, herm_eig, herm_eigenvalues, kron, op_norm, space_dim, DenseOperator,
    Spectrum, SupportedOperator,
};
use crate::window::Window;

/// Tolerance for declaring two terms commuting.
pub const COMMUTATION_TOL: f64 = 1e-10;
/// Floor below which correlation values are treated as noise.
pub const CORRELATION_FLOOR: f64 = 1e-14;

/// `log Σ_i exp(x_i)`.
pub fn logsumexp(values: &[f64]) -> f64 {
    let top = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !top.is_finite() {
        return top;
    }
    top + values.iter().map(|v| (v - top).exp()).sum::<f64>().ln()
}

/// `log tr exp(-β H)` for `H = Σ terms` on `window`.
pub fn log_trace_exp(terms: &[LocalTerm], window: Window, d: usize, beta: f64) -> Result<f64> {
    let dim = space_dim(d, window.len())?;
    if terms.is_empty() || beta == 0.0 {
        return Ok(window.len() as f64 * (d as f64).ln());
    }
    let energies = match diagonal_energies(terms, window, d)? {
        Some(e) => e,
        None => herm_eigenvalues(assemble(terms, window, d)?.op())?,
    };
    debug_assert_eq!(energies.len(), dim);
    let scaled: Vec<f64> = energies.iter().map(|e| -beta * e).collect();
    Ok(logsumexp(&scaled))
}

/// `log tr e^{-βH}` for the whole chain.
pub fn exact_log_partition(spec: &ChainSpec, beta: f64) -> Result<f64> {
    log_trace_exp(spec.terms(), spec.full_window(), spec.d(), beta)
}

/// Largest commutator norm over overlapping term pairs, with the pair.
pub fn max_commutator(spec: &ChainSpec) -> Result<(f64, usize, usize)> {
    let d = spec.d();
    let terms = spec.terms();
    let mut worst = (0.0, 0, 0);
    for a in 0..terms.len() {
        for b in a + 1..terms.len() {
            let (sa, sb) = (terms[a].support(), terms[b].support());
            if !sa.intersects(&sb) {
                continue;
            }
            let hull = sa.hull(&sb);
            let ea = embed(&terms[a].to_supported(d), hull)?;
            let eb = embed(&terms[b].to_supported(d), hull)?;
            let norm = op_norm(&ea.op().commutator(eb.op()))?;
            if norm > worst.0 {
                worst = (norm, a + 1, b + 1);
            }
        }
    }
    Ok(worst)
}

/// Single-site basis in which every term of a width-≤2 commuting chain is
/// diagonal, found by diagonalizing a generic combination of the single-site
/// slices of all terms at that site.
fn detect_site_bases(spec: &ChainSpec) -> Result<Vec<DenseOperator>> {
    let d = spec.d();
    let mut slices: Vec<Vec<DenseOperator>> = vec![Vec::new(); spec.n() + 1];
    for t in spec.terms() {
        let h = t.op();
        match t.width() {
            1 => slices[t.start()].push(h.clone()),
            2 => {
                for p in 0..d {
                    for q in 0..d {
                        let left = DenseOperator::from_fn(d, |i, j| h.get(i * d + p, j * d + q));
                        let right = DenseOperator::from_fn(d, |i, j| h.get(p * d + i, q * d + j));
                        slices[t.start()].push(left);
                        slices[t.start() + 1].push(right);
                    }
                }
            }
            w => {
                return Err(Error::NoProductBasis(format!(
                    "automatic basis detection handles width <= 2, found width {w}"
                )))
            }
        }
    }
    let mut bases = Vec::with_capacity(spec.n());
    for site in 1..=spec.n() {
        let mut mix = DenseOperator::zeros(d);
        let mut r = 0usize;
        for s in &slices[site] {
            for herm in [
                s + &s.adjoint(),
                (s - &s.adjoint()).scale(c64::new(0.0, 1.0)),
            ] {
                r += 1;
                let w = 0.5 + ((r as f64) * 0.618_033_988_749_894_9).fract();
                mix += &herm.scale_real(w);
            }
        }
        bases.push(DenseOperator::from_mat(herm_eig(&mix)?.basis));
    }
    Ok(bases)
}

/// Diagonal of `(⊗_s U_s)† h (⊗_s U_s)` for each term, checking that the
/// rotated term is diagonal.
fn rotated_term_diagonals(spec: &ChainSpec, bases: &[DenseOperator]) -> Result<Vec<Vec<f64>>> {
    let mut out = Vec::with_capacity(spec.num_terms());
    for (idx, t) in spec.terms().iter().enumerate() {
        let mut u = bases[t.start() - 1].clone();
        for s in t.start() + 1..t.start() + t.width() {
            u = kron(&u, &bases[s - 1])?;
        }
        let r = u.adjoint().matmul(t.op()).matmul(&u);
        let dim = r.dim();
        let mut off = 0.0f64;
        for i in 0..dim {
            for j in 0..dim {
                if i != j {
                    off = off.max(r.get(i, j).norm());
                }
            }
        }
        if off > COMMUTATION_TOL * t.norm_bound().max(1.0) {
            return Err(Error::NoProductBasis(format!(
                "term {} keeps off-diagonal weight {off:.3e} in the product basis",
                idx + 1
            )));
        }
        out.push(r.diagonal_real());
    }
    Ok(out)
}

/// `log Z` for a commuting chain, contracting `d^{k-1}`-state transfer
/// matrices left to right with per-step rescaling.
pub fn transfer_matrix_log_partition(spec: &ChainSpec, beta: f64) -> Result<f64> {
    let (norm, i, j) = max_commutator(spec)?;
    if norm > COMMUTATION_TOL {
        return Err(Error::NonCommuting { i, j, norm });
    }
    let d = spec.d();
    let bases: Vec<DenseOperator> = match spec.rotation() {
        Some(u) => vec![u.clone(); spec.n()],
        None if spec.terms().iter().all(|t| t.op().is_diagonal()) => {
            vec![DenseOperator::identity(d); spec.n()]
        }
        None => detect_site_bases(spec)?,
    };
    let diags = rotated_term_diagonals(spec, &bases)?;
    let memory = spec
        .terms()
        .iter()
        .map(|t| t.width())
        .max()
        .unwrap_or(1)
        .saturating_sub(1);

    let mut ending: Vec<Vec<usize>> = vec![Vec::new(); spec.n() + 1];
    for (idx, t) in spec.terms().iter().enumerate() {
        ending[t.start() + t.width() - 1].push(idx);
    }

    let mut state = vec![1.0f64];
    let mut held = 0usize;
    let mut log_scale = 0.0f64;
    for site in 1..=spec.n() {
        let len = held + 1;
        let combined = d.pow(len as u32);
        let mut weights = vec![0.0f64; combined];
        for (cfg, w) in weights.iter_mut().enumerate() {
            let prev = cfg / d;
            let mut e = 0.0;
            for &idx in &ending[site] {
                let width = spec.terms()[idx].width();
                e += diags[idx][cfg % d.pow(width as u32)];
            }
            *w = state[prev] * (-beta * e).exp();
        }
        let keep = len.min(memory);
        let next_len = d.pow(keep as u32);
        let mut next = vec![0.0f64; next_len];
        for (cfg, w) in weights.iter().enumerate() {
            next[cfg % next_len] += w;
        }
        let top = next.iter().copied().fold(0.0f64, f64::max);
        if !(top > 0.0 && top.is_finite()) {
            return Err(Error::Numeric(format!("transfer matrix underflow at site {site}")));
        }
        for v in next.iter_mut() {
            *v /= top;
        }
        log_scale += top.ln();
        state = next;
        held = keep;
    }
    Ok(log_scale + state.iter().sum::<f64>().ln())
}

/// Gibbs state `e^{-βH}/Z` held in the eigenbasis of `H`.
#[derive(Clone, Debug)]
pub struct GibbsState {
    spectrum: Spectrum,
    probs: Vec<f64>,
    window: Window,
    d: usize,
}

impl GibbsState {
    pub fn new(h: &SupportedOperator, beta: f64) -> Result<Self> {
        Ok(Self::from_spectrum(herm_eig(h.op())?, h.window(), h.local_dim(), beta))
    }

    pub fn from_spectrum(spectrum: Spectrum, window: Window, d: usize, beta: f64) -> Self {
        let exps: Vec<f64> = spectrum.eigenvalues.iter().map(|e| -beta * e).collect();
        let lz = logsumexp(&exps);
        let probs = exps.iter().map(|x| (x - lz).exp()).collect();
        Self {
            spectrum,
            probs,
            window,
            d,
        }
    }

    pub fn window(&self) -> Window {
        self.window
    }

    pub fn spectrum(&self) -> &Spectrum {
        &self.spectrum
    }

    pub fn probabilities(&self) -> &[f64] {
        &self.probs
    }

    fn eigvecs(&self) -> SupportedOperator {
        SupportedOperator::new(
            DenseOperator::from_mat(self.spectrum.basis.clone()),
            self.window,
            self.d,
        )
        .expect("basis matches window")
    }

    fn weighted_overlap(&self, left: &DenseOperator, right: &DenseOperator) -> c64 {
        let dim = left.dim();
        let mut total = c64::new(0.0, 0.0);
        for (a, p) in self.probs.iter().enumerate() {
            if *p == 0.0 {
                continue;
            }
            let mut s = c64::new(0.0, 0.0);
            for i in 0..dim {
                s += left.get(i, a).conj() * right.get(i, a);
            }
            total += s * *p;
        }
        total
    }

    /// `tr(ρ O)` for `O` supported inside the state's window.
    pub fn expectation(&self, o: &SupportedOperator) -> Result<c64> {
        let v = self.eigvecs();
        let ov = apply_left(o, &v)?;
        Ok(self.weighted_overlap(v.op(), &ov))
    }

    /// `tr(ρ P Q)`.
    pub fn product_expectation(&self, p: &SupportedOperator, q: &SupportedOperator) -> Result<c64> {
        let v = self.eigvecs();
        let qv = apply_left(q, &v)?;
        let pdv = apply_left(&p.adjoint(), &v)?;
        Ok(self.weighted_overlap(&pdv, &qv))
    }

    /// `Cor(P, Q) = tr(ρ P Q) − tr(ρ P) tr(ρ Q)`.
    pub fn correlation(&self, p: &SupportedOperator, q: &SupportedOperator) -> Result<c64> {
        Ok(self.product_expectation(p, q)? - self.expectation(p)? * self.expectation(q)?)
    }
}

fn full_gibbs(spec: &ChainSpec, beta: f64) -> Result<GibbsState> {
    let h = assemble(spec.terms(), spec.full_window(), spec.d())?;
    GibbsState::new(&h, beta)
}

fn real_checked(v: c64, what: &str) -> Result<f64> {
    if v.im.abs() > 1e-10 * v.re.abs().max(1.0) {
        return Err(Error::Numeric(format!(
            "{what} has imaginary part {:.3e}",
            v.im
        )));
    }
    Ok(v.re)
}

/// `tr(ρ O)` with `ρ = e^{-βH}/Z` on the full chain.
pub fn gibbs_expectation(spec: &ChainSpec, beta: f64, o: &SupportedOperator) -> Result<f64> {
    real_checked(full_gibbs(spec, beta)?.expectation(o)?, "expectation value")
}

#[derive(Clone, Debug, PartialEq)]
pub struct CorrelationRecord {
    pub distance: usize,
    pub value: f64,
    pub beta: f64,
    pub tags: (String, String),
}

/// `Cor_ρ(O′, O)` for disjointly supported `O`, `O′`.
pub fn correlation(
    spec: &ChainSpec,
    beta: f64,
    o: &SupportedOperator,
    o_prime: &SupportedOperator,
) -> Result<CorrelationRecord> {
    let state = full_gibbs(spec, beta)?;
    correlation_in(&state, beta, o, o_prime, ("O".into(), "O'".into()))
}

/// Same as [`correlation`] with a precomputed state.
pub fn correlation_in(
    state: &GibbsState,
    beta: f64,
    o: &SupportedOperator,
    o_prime: &SupportedOperator,
    tags: (String, String),
) -> Result<CorrelationRecord> {
    let distance = o.window().distance(&o_prime.window()).ok_or_else(|| {
        Error::Geometry(format!(
            "supports {} and {} overlap",
            o.window(),
            o_prime.window()
        ))
    })?;
    let value = real_checked(state.correlation(o_prime, o)?, "correlation")?;
    Ok(CorrelationRecord {
        distance,
        value,
        beta,
        tags,
    })
}

pub fn full_state(spec: &ChainSpec, beta: f64) -> Result<GibbsState> {
    full_gibbs(spec, beta)
}

#[derive(Clone, Debug, PartialEq)]
pub struct CorrelationFit {
    /// Correlation length; `0` means every value sat below the noise floor,
    /// `∞` means no decay.
    pub xi: f64,
    pub r2: f64,
    pub slope: f64,
    pub intercept: f64,
    pub points: usize,
}

/// Least-squares fit `(slope, intercept, r²)` of `y` against `x`.
pub fn linear_fit(x: &[f64], y: &[f64]) -> (f64, f64, f64) {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxx: f64 = x.iter().map(|v| (v - mx).powi(2)).sum();
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let syy: f64 = y.iter().map(|v| (v - my).powi(2)).sum();
    let slope = if sxx > 0.0 { sxy / sxx } else { 0.0 };
    let intercept = my - slope * mx;
    let r2 = if syy > 0.0 { (sxy * sxy) / (sxx * syy) } else { 1.0 };
    (slope, intercept, r2)
}

/// Fits `log|value|` against distance.
pub fn fit_correlation_length(records: &[CorrelationRecord]) -> Result<CorrelationFit> {
    let usable: Vec<&CorrelationRecord> = records
        .iter()
        .filter(|r| r.value.abs() > CORRELATION_FLOOR)
        .collect();
    if usable.is_empty() && !records.is_empty() {
        return Ok(CorrelationFit {
            xi: 0.0,
            r2: 0.0,
            slope: f64::NEG_INFINITY,
            intercept: f64::NEG_INFINITY,
            points: 0,
        });
    }
    if usable.len() < 4 {
        return Err(Error::InsufficientData(format!(
            "{} usable correlation records, need 4",
            usable.len()
        )));
    }
    let x: Vec<f64> = usable.iter().map(|r| r.distance as f64).collect();
    let y: Vec<f64> = usable.iter().map(|r| r.value.abs().ln()).collect();
    let (slope, intercept, r2) = linear_fit(&x, &y);
    let xi = if slope < 0.0 { -1.0 / slope } else { f64::INFINITY };
    Ok(CorrelationFit {
        xi,
        r2,
        slope,
        intercept,
        points: usable.len(),
    })
}

pub fn write_correlation_csv(records: &[CorrelationRecord], mut w: impl Write) -> Result<()> {
    let mut out = csv::Writer::from_writer(&mut w);
    out.write_record(["beta", "distance", "value"])
        .map_err(csv_err)?;
    for r in records {
        out.write_record([
            format!("{:.16e}", r.beta),
            r.distance.to_string(),
            format!("{:.16e}", r.value),
        ])
        .map_err(csv_err)?;
    }
    out.flush()?;
    Ok(())
}

pub(crate) fn csv_err(e: csv::Error) -> Error {
    Error::Io(std::io::Error::other(e.to_string()))
}
