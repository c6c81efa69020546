//! Numerical certification of the locality bounds behind the estimator:
//! imaginary-time Lieb–Robinson, multicommutator growth, the truncation
//! formula, and the real-time Lieb–Robinson decay shape.

use std::f64::consts::E;
use std::fmt;
use std::io::Write;

use faer::c64;
use rand::seq::index::sample;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use crate::chain::{assemble, build_preset, split, ChainSpec, Preset};
use crate::error::{Error, Result};
use crate::operator::{
    adjoint_power, conjugate, conjugate_in_eigenbasis, embed, herm_eig, op_norm, op_norm_dense, truncate, DenseOperator, Scale, Spectrum,
    SupportedOperator,
};
use crate::oracle::{csv_err, linear_fit, logsumexp, GibbsState};
use crate::quadrature::unit_square;
use crate::rng::{stream_rng, STREAM_CERTIFY};
use crate::window::Window;

/// Constant of the log-corrected multicommutator growth.
pub const GAMMA: f64 = 1.6026;
/// Absolute slack for inequality checks with explicit constants.
pub const BOUND_SLACK: f64 = 1e-9;

/// Principal branch of the Lambert W function, `W(x) e^{W(x)} = x`, `x ≥ 0`.
pub fn lambert_w(x: f64) -> Result<f64> {
    if !x.is_finite() || x < 0.0 {
        return Err(Error::Domain(format!("lambert_w needs finite x >= 0, got {x}")));
    }
    if x == 0.0 {
        return Ok(0.0);
    }
    let mut w = x.ln_1p();
    for _ in 0..100 {
        let ew = w.exp();
        let f = w * ew - x;
        let wp1 = w + 1.0;
        let step = f / (ew * wp1 - (w + 2.0) * f / (2.0 * wp1));
        w -= step;
        if step.abs() <= 1e-16 * (1.0 + w.abs()) {
            break;
        }
    }
    Ok(w)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BoundKind {
    ImagLr,
    MulticommSum,
    MulticommClosed,
    TruncIdentity,
    RealLr,
}

impl fmt::Display for BoundKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            BoundKind::ImagLr => "imag_lr",
            BoundKind::MulticommSum => "multicomm_sum",
            BoundKind::MulticommClosed => "multicomm_closed",
            BoundKind::TruncIdentity => "trunc_identity",
            BoundKind::RealLr => "real_lr",
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BoundCheckRecord {
    pub kind: BoundKind,
    pub seed: Option<u64>,
    pub n: usize,
    pub k: usize,
    /// Imaginary time `τ` or real time `t`.
    pub time: Option<f64>,
    pub m: Option<usize>,
    pub l: Option<usize>,
    pub l0: Option<usize>,
    pub beta: Option<f64>,
    /// `NaN` for imaginary-time records that have no finite bound and whose
    /// radius leaves part of the chain outside (not measured).
    pub measured: f64,
    pub bound: f64,
    pub applicable: bool,
    pub violated: bool,
}

impl BoundCheckRecord {
    fn new(kind: BoundKind, n: usize, k: usize, measured: f64, bound: f64, applicable: bool) -> Self {
        Self {
            kind,
            seed: None,
            n,
            k,
            time: None,
            m: None,
            l: None,
            l0: None,
            beta: None,
            measured,
            bound,
            applicable,
            violated: applicable && measured > bound + BOUND_SLACK * bound.abs().max(1.0),
        }
    }

    /// `measured / bound`, used to rank violations.
    pub fn excess(&self) -> f64 {
        if self.bound > 0.0 {
            self.measured / self.bound
        } else if self.measured > 0.0 {
            f64::INFINITY
        } else {
            0.0
        }
    }
}

fn opt<T: ToString>(v: Option<T>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn opt_f(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.16e}")).unwrap_or_default()
}

pub fn write_records_csv(records: &[BoundCheckRecord], mut w: impl Write) -> Result<()> {
    let mut out = csv::Writer::from_writer(&mut w);
    out.write_record([
        "kind", "seed", "n", "k", "time", "m", "l", "l0", "beta", "measured", "bound",
        "applicable", "violated",
    ])
    .map_err(csv_err)?;
    for r in records {
        out.write_record([
            r.kind.to_string(),
            opt(r.seed),
            r.n.to_string(),
            r.k.to_string(),
            opt_f(r.time),
            opt(r.m),
            opt(r.l),
            opt(r.l0),
            opt_f(r.beta),
            format!("{:.16e}", r.measured),
            format!("{:.16e}", r.bound),
            r.applicable.to_string(),
            r.violated.to_string(),
        ])
        .map_err(csv_err)?;
    }
    out.flush()?;
    Ok(())
}

/// Spectrum of the full chain Hamiltonian, reused across times and radii.
pub struct ChainProbe {
    spectrum: Spectrum,
    full: Window,
    d: usize,
}

impl ChainProbe {
    pub fn new(spec: &ChainSpec) -> Result<Self> {
        let h = assemble(spec.terms(), spec.full_window(), spec.d())?;
        Ok(Self {
            spectrum: herm_eig(h.op())?,
            full: spec.full_window(),
            d: spec.d(),
        })
    }

    /// `e^{zH} O e^{−zH}` on the full chain.
    pub fn evolve(&self, o: &SupportedOperator, scale: Scale) -> Result<SupportedOperator> {
        let lifted = embed(o, self.full)?;
        Ok(lifted.with_op(conjugate(lifted.op(), &self.spectrum, scale)?))
    }

    /// `V† O V` on the full chain, for repeated [`ChainProbe::evolve_rotated`].
    pub fn rotate(&self, o: &SupportedOperator) -> Result<DenseOperator> {
        Ok(self.spectrum.to_eigenbasis(embed(o, self.full)?.op()))
    }

    pub fn evolve_rotated(&self, rotated: &DenseOperator, scale: Scale) -> Result<SupportedOperator> {
        if let Scale::Real(s) = scale {
            let top = s.abs() * (self.spectrum.max() - self.spectrum.min());
            if top > crate::operator::MAX_EXPONENT {
                return Err(Error::Overflow { exponent: top });
            }
        }
        let mut t = rotated.clone();
        conjugate_in_eigenbasis(&mut t, &self.spectrum, scale);
        SupportedOperator::new(self.spectrum.from_eigenbasis(&t), self.full, self.d)
    }

    /// `‖X − X^{(base grown by l)}‖` for each `l`, from dense norms.
    pub fn truncation_errors(
        &self,
        x: &SupportedOperator,
        base: Window,
        radii: &[usize],
    ) -> Result<Vec<f64>> {
        radii.iter().map(|&l| self.truncation_error(x, base, l)).collect()
    }

    pub fn truncation_error(&self, x: &SupportedOperator, base: Window, l: usize) -> Result<f64> {
        if self.covers(base, l) {
            return Ok(0.0);
        }
        op_norm_dense(x.sub(&truncate(x, base.extend(l, self.full.hi()))?)?.op())
    }

    /// Whether growing `base` by `l` reaches the whole chain.
    pub fn covers(&self, base: Window, l: usize) -> bool {
        base.extend(l, self.full.hi()) == self.full
    }

    /// `‖ad_H^m(O)‖` from `V† O V`, where `ad_H^m` multiplies entry `(a,b)` by
    /// `(λ_a − λ_b)^m`.
    pub fn multicommutator_norm(&self, rotated: &DenseOperator, m: usize) -> Result<f64> {
        let ev = &self.spectrum.eigenvalues;
        let n = ev.len();
        let mut t = rotated.clone();
        for b in 0..n {
            for a in 0..n {
                t.set(a, b, t.get(a, b) * (ev[a] - ev[b]).powi(m as i32));
            }
        }
        if m % 2 == 1 {
            t = t.scale(c64::new(0.0, 1.0));
        }
        op_norm(&t)
    }

    pub fn local_dim(&self) -> usize {
        self.d
    }
}

/// `‖O(iτ) − [O(iτ)]^{(L'_{l2})}‖` with `O(iτ) = e^{τH} O e^{−τH}`.
pub fn imag_lr_measured(spec: &ChainSpec, o: &SupportedOperator, tau: f64, l2: usize) -> Result<f64> {
    if tau == 0.0 {
        return Ok(0.0);
    }
    let probe = ChainProbe::new(spec)?;
    let x = probe.evolve(o, Scale::Real(tau))?;
    Ok(probe.truncation_errors(&x, o.window(), &[l2])?[0])
}

/// `ζ = 6ekτ / (γ log⌈l2/k⌉)`, when `⌈l2/k⌉ ≥ 2`.
pub fn imag_lr_zeta(tau: f64, l2: usize, k: usize) -> Option<f64> {
    let q = l2.div_ceil(k);
    (q >= 2).then(|| 6.0 * E * k as f64 * tau / (GAMMA * (q as f64).ln()))
}

/// `ζ^{⌈l2/k⌉} / (1 − ζ)` and whether the bound applies (`ζ < 1`).
pub fn imag_lr_bound(tau: f64, l2: usize, k: usize) -> (f64, bool) {
    match imag_lr_zeta(tau, l2, k) {
        Some(z) if z < 1.0 => (z.powi(l2.div_ceil(k) as i32) / (1.0 - z), true),
        _ => (f64::INFINITY, false),
    }
}

/// Largest `τ` with `ζ < 1` at radius `l2`.
pub fn imag_lr_critical_tau(l2: usize, k: usize) -> Option<f64> {
    let q = l2.div_ceil(k);
    (q >= 2).then(|| GAMMA * (q as f64).ln() / (6.0 * E * k as f64))
}

pub fn chain_terms(spec: &ChainSpec) -> Vec<SupportedOperator> {
    spec.terms().iter().map(|t| t.to_supported(spec.d())).collect()
}

/// `‖ad_H^m(O)‖`.
pub fn multicomm_measured(spec: &ChainSpec, o: &SupportedOperator, m: usize) -> Result<f64> {
    op_norm(adjoint_power(&chain_terms(spec), o, m)?.op())
}

fn ln_binom(m: usize, q: usize) -> f64 {
    (1..=q).map(|j| ((m - q + j) as f64 / j as f64).ln()).sum()
}

/// `Σ_q C(m,q) 2^{m+q} [l0 + q(k−1)]^{m−q} (k−1)^q` (per unit `‖O‖`).
pub fn multicomm_bound_sum(m: usize, k: usize, l0: usize) -> f64 {
    let km1 = k.saturating_sub(1) as f64;
    if m <= 20 {
        let mut total = 0.0;
        let mut binom = 1.0f64;
        for q in 0..=m {
            if q > 0 {
                binom = binom * (m - q + 1) as f64 / q as f64;
            }
            let base = l0 as f64 + q as f64 * km1;
            total += binom * 2f64.powi((m + q) as i32) * base.powi((m - q) as i32) * km1.powi(q as i32);
        }
        total
    } else {
        let logs: Vec<f64> = (0..=m)
            .filter(|&q| q == 0 || km1 > 0.0)
            .map(|q| {
                let base = l0 as f64 + q as f64 * km1;
                ln_binom(m, q)
                    + (m + q) as f64 * 2f64.ln()
                    + (m - q) as f64 * base.ln()
                    + if q > 0 { q as f64 * km1.ln() } else { 0.0 }
            })
            .collect();
        logsumexp(&logs).exp()
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MulticommClosed {
    pub closed: f64,
    pub simplified: Option<f64>,
}

/// Lambert-W closed form `(6k)^m X^{M−X}`, `M = m + l0/k`, `X = M / W(eM)`,
/// and the simplified `(6km / (γ log m))^m` when `l0 ≤ k`, `m ≥ 2`
/// (both per unit `‖O‖`).
pub fn multicomm_bound_closed(m: usize, k: usize, l0: usize) -> Result<MulticommClosed> {
    if m == 0 || k == 0 {
        return Err(Error::Domain(format!("closed bound needs m, k >= 1 (m = {m}, k = {k})")));
    }
    let big_m = m as f64 + l0 as f64 / k as f64;
    let x = big_m / lambert_w(E * big_m)?;
    let closed = (6.0 * k as f64).powi(m as i32) * x.powf(big_m - x);
    let simplified = (l0 <= k && m >= 2)
        .then(|| (6.0 * k as f64 * m as f64 / (GAMMA * (m as f64).ln())).powi(m as i32));
    Ok(MulticommClosed { closed, simplified })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TruncIdentity {
    pub residual: f64,
    pub refined: f64,
    pub delta: f64,
}

struct IdentityFrame {
    h: DenseOperator,
    h_boundary: DenseOperator,
    o_full: DenseOperator,
}

fn identity_integral(frame: &IdentityFrame, beta: f64, ns: usize, nk: usize) -> Result<c64> {
    let (rs, rk) = unit_square(ns, nk)?;
    let mut total = c64::new(0.0, 0.0);
    for (s, ws) in rs.pairs() {
        let hs = &frame.h - &frame.h_boundary.scale_real(s);
        let spec = herm_eig(&hs)?;
        let hb = spec.to_eigenbasis(&frame.h_boundary);
        let ob = spec.to_eigenbasis(&frame.o_full);
        let lmin = spec.min();
        let mu: Vec<f64> = spec.eigenvalues.iter().map(|l| l - lmin).collect();
        let log_z = logsumexp(&mu.iter().map(|m| -beta * m).collect::<Vec<_>>());
        let dim = mu.len();
        let p: Vec<f64> = mu.iter().map(|m| (-beta * m - log_z).exp()).collect();
        let mean_h: c64 = (0..dim).map(|a| hb.get(a, a) * p[a]).sum();
        let mean_o: c64 = (0..dim).map(|a| ob.get(a, a) * p[a]).sum();
        for (kappa, wk) in rk.pairs() {
            let mut acc = c64::new(0.0, 0.0);
            for b in 0..dim {
                for a in 0..dim {
                    let w = (-beta * ((1.0 - kappa) * mu[a] + kappa * mu[b]) - log_z).exp();
                    acc += hb.get(a, b) * ob.get(b, a) * w;
                }
            }
            total += (acc - mean_h * mean_o) * (ws * wk);
        }
    }
    Ok(total)
}

/// `|tr(ρO) − tr(ρ^{(L_l)}O) + β ∫∫ Cor_{ρ(s)}(H_∂(s,κ), O) ds dκ|` on an
/// `ns × nκ` Gauss–Legendre grid and on the doubled grid.
pub fn trunc_identity_residual(
    spec: &ChainSpec,
    o: &SupportedOperator,
    l: usize,
    beta: f64,
    grid: (usize, usize),
) -> Result<TruncIdentity> {
    let d = spec.d();
    let full = spec.full_window();
    let window = o.window().extend(l, spec.n());
    let sp = split(spec.terms(), window);
    let h = assemble(spec.terms(), full, d)?;
    let o_full = embed(o, full)?;
    let global = GibbsState::new(&h, beta)?.expectation(o)?;
    let local = GibbsState::new(&assemble(&sp.inside, window, d)?, beta)?.expectation(o)?;
    let frame = IdentityFrame {
        h: h.op().clone(),
        h_boundary: assemble(&sp.boundary, full, d)?.into_op(),
        o_full: o_full.into_op(),
    };
    let residual_at = |ns: usize, nk: usize| -> Result<f64> {
        let integral = if sp.boundary.is_empty() || beta == 0.0 {
            c64::new(0.0, 0.0)
        } else {
            identity_integral(&frame, beta, ns, nk)?
        };
        Ok((global - local + integral * beta).norm())
    };
    let residual = residual_at(grid.0, grid.1)?;
    let refined = residual_at(2 * grid.0, 2 * grid.1)?;
    Ok(TruncIdentity {
        residual,
        refined,
        delta: (residual - refined).abs(),
    })
}

/// `min((2ek²|t|/m₀)^{m₀}, 1)` with `m₀ = ⌊l/k + 1⌋`.
pub fn real_lr_shape(t: f64, l: usize, k: usize) -> f64 {
    let m0 = l / k + 1;
    (2.0 * E * (k * k) as f64 * t.abs() / m0 as f64)
        .powi(m0 as i32)
        .min(1.0)
}

/// Truncation error of `h_i(t) = e^{iHt} h_i e^{−iHt}` on `L_l`, against the
/// decay shape (constant unknown, so never flagged as a violation).
pub fn real_lr_check(spec: &ChainSpec, term: usize, t: f64, l: usize) -> Result<BoundCheckRecord> {
    Ok(real_lr_sweep(spec, term, t, &[l])?.records.remove(0))
}

#[derive(Clone, Debug, PartialEq)]
pub struct RealLrSweep {
    pub records: Vec<BoundCheckRecord>,
    pub measured_slope: Option<f64>,
    pub bound_slope: Option<f64>,
    /// Measured log-slope at most the shape's log-slope plus 10%.
    pub shape_ok: Option<bool>,
}

pub fn real_lr_sweep(spec: &ChainSpec, term: usize, t: f64, radii: &[usize]) -> Result<RealLrSweep> {
    let h = spec.term(term)?.to_supported(spec.d());
    let measured = if t == 0.0 {
        vec![0.0; radii.len()]
    } else {
        let probe = ChainProbe::new(spec)?;
        let x = probe.evolve(&h, Scale::Imag(t))?;
        probe.truncation_errors(&x, h.window(), radii)?
    };
    let records: Vec<BoundCheckRecord> = radii
        .iter()
        .zip(&measured)
        .map(|(&l, &m)| {
            let mut r = BoundCheckRecord::new(
                BoundKind::RealLr,
                spec.n(),
                spec.k(),
                m,
                real_lr_shape(t, l, spec.k()),
                false,
            );
            r.time = Some(t);
            r.l = Some(l);
            r
        })
        .collect();
    let pts: Vec<(f64, f64, f64)> = records
        .iter()
        .filter(|r| r.measured > 1e-14 && r.bound > 0.0)
        .map(|r| (r.l.unwrap() as f64, r.measured.ln(), r.bound.ln()))
        .collect();
    let (measured_slope, bound_slope, shape_ok) = if pts.len() >= 2 {
        let x: Vec<f64> = pts.iter().map(|p| p.0).collect();
        let ym: Vec<f64> = pts.iter().map(|p| p.1).collect();
        let yb: Vec<f64> = pts.iter().map(|p| p.2).collect();
        let (sm, _, _) = linear_fit(&x, &ym);
        let (sb, _, _) = linear_fit(&x, &yb);
        (Some(sm), Some(sb), Some(sm <= sb + 0.1 * sb.abs()))
    } else {
        (None, None, None)
    };
    Ok(RealLrSweep {
        records,
        measured_slope,
        bound_slope,
        shape_ok,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct CertifyConfig {
    pub seeds: Vec<u64>,
    pub k_values: Vec<usize>,
    pub d: usize,
    pub n_min: usize,
    pub n_max: usize,
    pub tau_max: f64,
    /// Fixed imaginary times; when empty two per seed are drawn.
    pub tau_values: Vec<f64>,
    pub l2_max: usize,
    /// Radii in `0..=l2_max` sampled per imaginary time.
    pub radii_per_tau: usize,
    pub m_min: usize,
    pub m_max: usize,
    pub imag_lr: bool,
    pub multicomm: bool,
    /// Multiplies every certified bound (harness self-test hook).
    pub bound_scale: f64,
}

impl Default for CertifyConfig {
    fn default() -> Self {
        Self {
            seeds: (0..100).collect(),
            k_values: vec![2, 3],
            d: 2,
            n_min: 6,
            n_max: 10,
            tau_max: 0.5,
            tau_values: Vec::new(),
            l2_max: 8,
            radii_per_tau: 3,
            m_min: 2,
            m_max: 6,
            imag_lr: true,
            multicomm: true,
            bound_scale: 1.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CertifyReport {
    pub records: Vec<BoundCheckRecord>,
}

impl CertifyReport {
    pub fn violations(&self) -> usize {
        self.records.iter().filter(|r| r.violated).count()
    }

    pub fn applicable(&self) -> usize {
        self.records.iter().filter(|r| r.applicable).count()
    }

    pub fn count(&self, kind: BoundKind) -> (usize, usize, usize) {
        let of: Vec<&BoundCheckRecord> = self.records.iter().filter(|r| r.kind == kind).collect();
        (
            of.len(),
            of.iter().filter(|r| r.applicable).count(),
            of.iter().filter(|r| r.violated).count(),
        )
    }

    pub fn worst_violation(&self) -> Option<&BoundCheckRecord> {
        self.records
            .iter()
            .filter(|r| r.violated)
            .max_by(|a, b| a.excess().total_cmp(&b.excess()))
    }
}

fn random_observable(rng: &mut impl Rng, window: Window, d: usize) -> Result<SupportedOperator> {
    let dim = d.pow(window.len() as u32);
    let g = DenseOperator::from_fn(dim, |_, _| {
        c64::new(StandardNormal.sample(rng), StandardNormal.sample(rng))
    });
    let h = g.hermitian_part();
    let norm = op_norm(&h)?;
    SupportedOperator::new(h.scale_real(1.0 / norm), window, d)
}

fn certify_seed(cfg: &CertifyConfig, seed: u64) -> Result<Vec<BoundCheckRecord>> {
    let mut rng = stream_rng(seed, STREAM_CERTIFY);
    let k = cfg.k_values[(seed as usize) % cfg.k_values.len()];
    let n_lo = cfg.n_min.max(2 * k + 2).min(cfg.n_max).max(k);
    let n = rng.random_range(n_lo..=cfg.n_max.max(n_lo));
    let spec = build_preset(&Preset::RandomKlocal, n, cfg.d, k, seed)?;
    let width = rng.random_range(1..=k);
    let start = if rng.random::<bool>() { 1 } else { n - width + 1 };
    let window = Window::new(start, start + width - 1)?;
    let o = random_observable(&mut rng, window, cfg.d)?;
    let o_norm = op_norm(o.op())?;
    let mut records = Vec::new();
    let tag = |mut r: BoundCheckRecord| {
        r.seed = Some(seed);
        r.l0 = Some(width);
        r
    };

    let probe = ChainProbe::new(&spec)?;
    let rotated = probe.rotate(&o)?;
    if cfg.imag_lr {
        let taus: Vec<f64> = if cfg.tau_values.is_empty() {
            let crit = imag_lr_critical_tau(cfg.l2_max, k).unwrap_or(cfg.tau_max);
            vec![
                rng.random::<f64>() * crit.min(cfg.tau_max),
                rng.random::<f64>() * cfg.tau_max,
            ]
        } else {
            cfg.tau_values.clone()
        };
        for tau in taus {
            let count = cfg.l2_max + 1;
            let mut radii = sample(&mut rng, count, cfg.radii_per_tau.min(count)).into_vec();
            radii.sort_unstable();
            let needed = radii
                .iter()
                .any(|&l2| imag_lr_bound(tau, l2, k).1 && !probe.covers(window, l2));
            let x = if needed {
                Some(probe.evolve_rotated(&rotated, Scale::Real(tau))?)
            } else {
                None
            };
            for l2 in radii {
                let (b, applicable) = imag_lr_bound(tau, l2, k);
                let measured = match &x {
                    _ if probe.covers(window, l2) => 0.0,
                    Some(x) if applicable => probe.truncation_error(x, window, l2)?,
                    _ => f64::NAN,
                };
                let mut r = BoundCheckRecord::new(
                    BoundKind::ImagLr,
                    n,
                    k,
                    measured,
                    b * o_norm * cfg.bound_scale,
                    applicable,
                );
                r.time = Some(tau);
                r.l = Some(l2);
                records.push(tag(r));
            }
        }
    }

    if cfg.multicomm {
        for m in cfg.m_min..=cfg.m_max {
            let measured = probe.multicommutator_norm(&rotated, m)?;
            let sum = multicomm_bound_sum(m, k, width);
            let mut r = BoundCheckRecord::new(
                BoundKind::MulticommSum,
                n,
                k,
                measured,
                sum * o_norm * cfg.bound_scale,
                true,
            );
            r.m = Some(m);
            records.push(tag(r));
            let closed = multicomm_bound_closed(m, k, width)?.closed;
            let mut r = BoundCheckRecord::new(BoundKind::MulticommClosed, n, k, sum, closed, true);
            r.m = Some(m);
            records.push(tag(r));
        }
    }
    Ok(records)
}

/// Runs the randomized suites, one independent RNG stream per seed.
pub fn certify(cfg: &CertifyConfig) -> Result<CertifyReport> {
    if cfg.k_values.is_empty() || cfg.k_values.contains(&0) {
        return Err(Error::InvalidParam("k_values must be non-empty and positive".into()));
    }
    if cfg.m_max > crate::operator::ADJOINT_POWER_CAP {
        return Err(Error::InvalidParam(format!("m_max = {} too large", cfg.m_max)));
    }
    let per_seed: Vec<Vec<BoundCheckRecord>> = cfg
        .seeds
        .par_iter()
        .map(|&s| {
            certify_seed(cfg, s).map_err(|e| Error::Step {
                index: s as usize,
                source: Box::new(e),
            })
        })
        .collect::<Result<_>>()?;
    Ok(CertifyReport {
        records: per_seed.into_iter().flatten().collect(),
    })
}
