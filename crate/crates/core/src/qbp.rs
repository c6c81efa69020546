//! Term-insertion operators `A` with `e^{-β(H+h)} = e^{-βH} A` (in trace),
//! built three ways: the exact exponential product, quantum belief
//! propagation `A = B†B`, and the imaginary-time Dyson ODE.

use std::f64::consts::PI;
use std::io::Write;

use faer::c64;

use crate::chain::{assemble, partial_hamiltonian, split, window_around, ChainSpec};
use crate::error::{Error, Result};
use crate::operator::{
    embed, expm, herm_eig, op_norm, truncate, DenseOperator, Scale,
    SupportedOperator, MAX_EXPONENT,
};
use crate::quadrature::{gauss_legendre, trapezoid, Rule};
use crate::window::Window;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Quadrature {
    GaussLegendre,
    Trapezoid,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct QbpParams {
    pub t_max: f64,
    pub n_t: usize,
    pub m_trotter: usize,
    pub quadrature: Quadrature,
}

impl QbpParams {
    /// `t_max = 8β` (at least 1), 400 Gauss–Legendre nodes, 64 slices.
    pub fn reference(beta: f64) -> Self {
        Self {
            t_max: (8.0 * beta).max(1.0),
            n_t: 400,
            m_trotter: 64,
            quadrature: Quadrature::GaussLegendre,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.t_max > 0.0 && self.t_max.is_finite()) {
            return Err(Error::InvalidParam(format!("t_max = {} must be > 0", self.t_max)));
        }
        if self.n_t < 8 {
            return Err(Error::InvalidParam(format!("n_t = {} must be >= 8", self.n_t)));
        }
        if self.m_trotter < 4 {
            return Err(Error::InvalidParam(format!(
                "m_trotter = {} must be >= 4",
                self.m_trotter
            )));
        }
        Ok(())
    }

    fn rule(&self) -> Result<Rule> {
        match self.quadrature {
            Quadrature::GaussLegendre => gauss_legendre(self.n_t, 0.0, self.t_max),
            Quadrature::Trapezoid => trapezoid(self.n_t, 0.0, self.t_max),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DysonOrder {
    Midpoint,
    Rk4,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct DysonParams {
    pub n_tau: usize,
    pub order: DysonOrder,
}

impl Default for DysonParams {
    fn default() -> Self {
        Self {
            n_tau: 64,
            order: DysonOrder::Rk4,
        }
    }
}

impl DysonParams {
    pub fn validate(&self) -> Result<()> {
        if self.n_tau < 8 {
            return Err(Error::InvalidParam(format!("n_tau = {} must be >= 8", self.n_tau)));
        }
        Ok(())
    }
}

/// `K_β(t) = Σ_{n≥1} e^{-2πnt/β} = 1/(e^{2πt/β} − 1)`.
pub fn qbp_kernel(t: f64, beta: f64) -> Result<f64> {
    if t <= 0.0 || beta <= 0.0 {
        return Err(Error::Domain(format!("kernel needs t > 0 and beta > 0 (t = {t}, beta = {beta})")));
    }
    Ok(1.0 / (2.0 * PI * t / beta).exp_m1())
}

/// `K_β(t) sin(ω t)`, continued to `t = 0`.
fn kernel_sin(t: f64, omega: f64, beta: f64) -> f64 {
    if t == 0.0 {
        beta * omega / (2.0 * PI)
    } else {
        (omega * t).sin() / (2.0 * PI * t / beta).exp_m1()
    }
}

fn check_frame(h_win: &SupportedOperator, h: &SupportedOperator) -> Result<()> {
    if h_win.window() != h.window() || h_win.local_dim() != h.local_dim() {
        return Err(Error::Support(format!(
            "h on {} must be embedded in the window {}",
            h.window(),
            h_win.window()
        )));
    }
    Ok(())
}

/// `η(τ) = −βh/2 − i ∫_0^{t_max} K_β(t) [h(t,τ) − h(−t,τ)] dt` with
/// `h(t,τ) = e^{iG t} h e^{−iG t}`, `G = H_win + τh`.
pub fn eta(
    tau: f64,
    h_win: &SupportedOperator,
    h: &SupportedOperator,
    beta: f64,
    params: &QbpParams,
) -> Result<SupportedOperator> {
    check_frame(h_win, h)?;
    params.validate()?;
    if !(0.0..=1.0).contains(&tau) {
        return Err(Error::Domain(format!("tau = {tau} outside [0, 1]")));
    }
    let half = h.op().scale_real(-0.5 * beta);
    if beta == 0.0 {
        return Ok(h.with_op(half));
    }
    let g = &h_win.op().clone() + &h.op().scale_real(tau);
    let spec = herm_eig(&g)?;
    let rule = params.rule()?;
    let ht = spec.to_eigenbasis(h.op());
    let ev = &spec.eigenvalues;
    let n = ev.len();
    let mut filtered = DenseOperator::zeros(n);
    for b in 0..n {
        for a in 0..n {
            let v = ht.get(a, b);
            if v == c64::new(0.0, 0.0) {
                continue;
            }
            let omega = ev[a] - ev[b];
            if omega == 0.0 {
                continue;
            }
            let s: f64 = rule.pairs().map(|(t, w)| w * kernel_sin(t, omega, beta)).sum();
            filtered.set(a, b, v * (2.0 * s));
        }
    }
    let integral_part = spec.from_eigenbasis(&filtered);
    let h_norm = op_norm(h.op())?;
    let tail = qbp_kernel(params.t_max, beta)? * 2.0 * h_norm * params.t_max;
    let out = &half + &integral_part;
    let limit = 1e-3 * op_norm(&out)?;
    if tail > limit {
        return Err(Error::CutoffTooSmall { tail, limit });
    }
    Ok(h.with_op(out))
}

/// Reference form of [`eta`]: conjugates `h` explicitly at every node.
pub fn eta_direct(
    tau: f64,
    h_win: &SupportedOperator,
    h: &SupportedOperator,
    beta: f64,
    params: &QbpParams,
) -> Result<SupportedOperator> {
    check_frame(h_win, h)?;
    params.validate()?;
    let g = &h_win.op().clone() + &h.op().scale_real(tau);
    let spec = herm_eig(&g)?;
    let mut acc = h.op().scale_real(-0.5 * beta);
    let minus_i = c64::new(0.0, -1.0);
    for (t, w) in params.rule()?.pairs() {
        if t == 0.0 {
            continue;
        }
        let k = qbp_kernel(t, beta)?;
        let fwd = crate::operator::conjugate(h.op(), &spec, Scale::Imag(t))?;
        let bwd = crate::operator::conjugate(h.op(), &spec, Scale::Imag(-t))?;
        acc += &(&fwd - &bwd).scale(minus_i * (w * k));
    }
    Ok(h.with_op(acc))
}

/// `B = e^{η(τ_m)/m} ⋯ e^{η(τ_1)/m}`, `τ_s = s/m`.
pub fn qbp_b(
    h_win: &SupportedOperator,
    h: &SupportedOperator,
    beta: f64,
    params: &QbpParams,
) -> Result<SupportedOperator> {
    check_frame(h_win, h)?;
    params.validate()?;
    let dim = h.dim();
    if beta == 0.0 {
        return Ok(h.with_op(DenseOperator::identity(dim)));
    }
    let m = params.m_trotter;
    let mut b = DenseOperator::identity(dim);
    for s in 1..=m {
        let e = eta(s as f64 / m as f64, h_win, h, beta, params)?;
        let factor = expm(&e.op().scale_real(1.0 / m as f64))?;
        b = factor.matmul(&b);
    }
    Ok(h.with_op(b))
}

/// `A = B†B`.
pub fn qbp_a(
    h_win: &SupportedOperator,
    h: &SupportedOperator,
    beta: f64,
    params: &QbpParams,
) -> Result<SupportedOperator> {
    let b = qbp_b(h_win, h, beta, params)?;
    Ok(b.with_op(b.op().adjoint().matmul(b.op())))
}

/// `A = e^{βH} e^{−β(H+h)}`.
pub fn exact_a(h_win: &SupportedOperator, h: &SupportedOperator, beta: f64) -> Result<SupportedOperator> {
    check_frame(h_win, h)?;
    if beta == 0.0 {
        return Ok(h.with_op(DenseOperator::identity(h.dim())));
    }
    let s0 = herm_eig(h_win.op())?;
    let s1 = herm_eig(&(h_win.op() + h.op()))?;
    let shift = s0.max();
    let top = beta * (shift - s1.min());
    if top > MAX_EXPONENT {
        return Err(Error::Overflow { exponent: top });
    }
    let left = s0.apply(|l| c64::new((beta * (l - shift)).exp(), 0.0));
    let right = s1.apply(|l| c64::new((-beta * (l - shift)).exp(), 0.0));
    Ok(h.with_op(left.matmul(&right)))
}

/// Integrates `dU/dτ = −e^{τH} h e^{−τH} U`, `U(0) = I`, over `[0, β]`.
pub fn dyson_a(
    h_win: &SupportedOperator,
    h: &SupportedOperator,
    beta: f64,
    params: &DysonParams,
) -> Result<SupportedOperator> {
    check_frame(h_win, h)?;
    params.validate()?;
    let dim = h.dim();
    if beta == 0.0 {
        return Ok(h.with_op(DenseOperator::identity(dim)));
    }
    let spec = herm_eig(h_win.op())?;
    let spread = beta * (spec.max() - spec.min());
    if spread > MAX_EXPONENT {
        return Err(Error::Overflow { exponent: spread });
    }
    let hh = spec.to_eigenbasis(h.op());
    let ev = spec.eigenvalues.clone();
    let gen = |tau: f64| {
        DenseOperator::from_fn(dim, |a, b| hh.get(a, b) * (tau * (ev[a] - ev[b])).exp())
    };
    let rhs = |tau: f64, u: &DenseOperator| gen(tau).matmul(u).scale_real(-1.0);
    let h_norm = op_norm(h.op())?;
    let limit = (2.0 * beta * h_norm + 1.0).exp();
    let step = beta / params.n_tau as f64;
    let mut u = DenseOperator::identity(dim);
    for s in 0..params.n_tau {
        let t0 = s as f64 * step;
        u = match params.order {
            DysonOrder::Midpoint => {
                let k1 = rhs(t0, &u);
                let mid = &u + &k1.scale_real(0.5 * step);
                let k2 = rhs(t0 + 0.5 * step, &mid);
                &u + &k2.scale_real(step)
            }
            DysonOrder::Rk4 => {
                let k1 = rhs(t0, &u);
                let k2 = rhs(t0 + 0.5 * step, &(&u + &k1.scale_real(0.5 * step)));
                let k3 = rhs(t0 + 0.5 * step, &(&u + &k2.scale_real(0.5 * step)));
                let k4 = rhs(t0 + step, &(&u + &k3.scale_real(step)));
                let incr = &(&k1 + &k2.scale_real(2.0)) + &(&k3.scale_real(2.0) + &k4);
                &u + &incr.scale_real(step / 6.0)
            }
        };
        let rough = u.max_abs();
        if !rough.is_finite() || rough > limit {
            return Err(Error::Unstable { norm: rough, limit });
        }
    }
    let u = spec.from_eigenbasis(&u);
    let norm = op_norm(&u)?;
    if norm > limit {
        return Err(Error::Unstable { norm, limit });
    }
    Ok(h.with_op(u))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum AMethod {
    Exact,
    Qbp(QbpParams),
    Dyson(DysonParams),
}

impl AMethod {
    pub fn name(&self) -> &'static str {
        match self {
            AMethod::Exact => "exact",
            AMethod::Qbp(_) => "qbp",
            AMethod::Dyson(_) => "dyson",
        }
    }
}

pub fn build_a(
    method: &AMethod,
    h_win: &SupportedOperator,
    h: &SupportedOperator,
    beta: f64,
) -> Result<SupportedOperator> {
    match method {
        AMethod::Exact => exact_a(h_win, h, beta),
        AMethod::Qbp(p) => qbp_a(h_win, h, beta, p),
        AMethod::Dyson(p) => dyson_a(h_win, h, beta, p),
    }
}

/// `(H_i restricted to terms inside W, h_i)`, both on `W`.
pub fn local_problem(
    spec: &ChainSpec,
    i: usize,
    window: Window,
) -> Result<(SupportedOperator, SupportedOperator)> {
    let term = spec.term(i)?;
    if !window.contains(&term.support()) {
        return Err(Error::Support(format!(
            "window {window} does not contain term {}",
            term.support()
        )));
    }
    let inside = split(partial_hamiltonian(spec, i)?, window).inside;
    let h_win = assemble(&inside, window, spec.d())?;
    let h = embed(&term.to_supported(spec.d()), window)?;
    Ok((h_win, h))
}

#[derive(Clone, Debug, PartialEq)]
pub struct TruncationSample {
    pub l1: usize,
    pub measured: f64,
    pub shape_ref: f64,
    pub method: &'static str,
    pub beta: f64,
}

/// `exp(β − π l / (2 e k³ β))`.
pub fn truncation_shape(beta: f64, l: usize, k: usize) -> f64 {
    if beta == 0.0 {
        return 0.0;
    }
    let e = std::f64::consts::E;
    (beta - PI * l as f64 / (2.0 * e * (k as f64).powi(3) * beta)).exp()
}

/// `‖A_W − A_W^{(L_{l1})}‖` with `A_W` built on `W = L_{l1+pad}`.
pub fn a_truncation_error(
    spec: &ChainSpec,
    i: usize,
    beta: f64,
    l1: usize,
    method: &AMethod,
    pad: usize,
) -> Result<TruncationSample> {
    let w = window_around(spec, i, l1 + pad)?;
    let keep = window_around(spec, i, l1)?;
    let (h_win, h) = local_problem(spec, i, w)?;
    let a = build_a(method, &h_win, &h, beta)?;
    let t = truncate(&a, keep)?;
    let measured = op_norm(a.sub(&t)?.op())?;
    Ok(TruncationSample {
        l1,
        measured,
        shape_ref: truncation_shape(beta, l1, spec.k()),
        method: method.name(),
        beta,
    })
}

pub fn write_truncation_csv(samples: &[TruncationSample], mut w: impl Write) -> Result<()> {
    let mut out = csv::Writer::from_writer(&mut w);
    out.write_record(["l1", "measured", "shape_ref", "method", "beta"])
        .map_err(crate::oracle::csv_err)?;
    for s in samples {
        out.write_record([
            s.l1.to_string(),
            format!("{:.16e}", s.measured),
            format!("{:.16e}", s.shape_ref),
            s.method.to_string(),
            format!("{:.16e}", s.beta),
        ])
        .map_err(crate::oracle::csv_err)?;
    }
    out.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::chain::{build_preset, Preset};
    use crate::operator::expm_scaled;
    use approx::assert_relative_eq;

    fn tfim(n: usize) -> ChainSpec {
        build_preset(&Preset::Tfim { j: 1.0, g: 1.0 }, n, 2, 2, 0).unwrap()
    }

    fn ising(n: usize) -> ChainSpec {
        build_preset(&Preset::ClassicalIsing { j: 1.0, h: 0.3 }, n, 2, 2, 0).unwrap()
    }

    fn four_site(spec: &ChainSpec) -> (SupportedOperator, SupportedOperator) {
        local_problem(spec, 4, Window::new(3, 6).unwrap()).unwrap()
    }

    fn small_params() -> QbpParams {
        QbpParams {
            t_max: 8.0,
            n_t: 120,
            m_trotter: 16,
            quadrature: Quadrature::GaussLegendre,
        }
    }

    #[test]
    fn kernel_values() {
        let beta = 1.7;
        let t = beta * 2f64.ln() / (2.0 * PI);
        assert_relative_eq!(qbp_kernel(t, beta).unwrap(), 1.0, max_relative = 1e-14);
        let far = 3.0 * beta;
        assert!(qbp_kernel(far, beta).unwrap() < (-2.0 * PI * far / beta).exp() * 1.01);
        assert!(qbp_kernel(0.0, beta).is_err());
        assert!(qbp_kernel(-1.0, beta).is_err());
    }

    #[test]
    fn kernel_matches_geometric_partial_sum() {
        let beta = 1.0;
        let t = 0.1 * beta;
        let partial: f64 = (1..=200).map(|n| (-2.0 * PI * n as f64 * t / beta).exp()).sum();
        assert!((partial - qbp_kernel(t, beta).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn eta_commuting_is_half_h() {
        let s = ising(8);
        let (hw, h) = four_site(&s);
        let e = eta(0.5, &hw, &h, 1.0, &small_params()).unwrap();
        assert!((e.op() - &h.op().scale_real(-0.5)).max_abs() < 1e-15);
    }

    #[test]
    fn eta_real_part_and_direct_form() {
        let s = tfim(8);
        let (hw, h) = four_site(&s);
        let p = small_params();
        let e = eta(0.3, &hw, &h, 1.0, &p).unwrap();
        let herm = e.op().hermitian_part();
        assert!((&herm + &h.op().scale_real(0.5)).max_abs() < 1e-12);
        let d = eta_direct(0.3, &hw, &h, 1.0, &p).unwrap();
        assert!((e.op() - d.op()).max_abs() < 1e-11);
    }

    #[test]
    fn eta_flags_short_cutoff() {
        let s = tfim(8);
        let (hw, h) = four_site(&s);
        let p = QbpParams { t_max: 0.05, ..small_params() };
        assert!(matches!(eta(0.5, &hw, &h, 1.0, &p), Err(Error::CutoffTooSmall { .. })));
    }

    #[test]
    fn zero_beta_gives_identity() {
        let s = tfim(8);
        let (hw, h) = four_site(&s);
        let id = DenseOperator::identity(16);
        assert_eq!(qbp_a(&hw, &h, 0.0, &small_params()).unwrap().op(), &id);
        assert!((exact_a(&hw, &h, 0.0).unwrap().op() - &id).max_abs() < 1e-15);
        assert_eq!(dyson_a(&hw, &h, 0.0, &DysonParams::default()).unwrap().op(), &id);
    }

    #[test]
    fn commuting_constructions_agree_with_local_exponential() {
        let s = ising(8);
        let (hw, h) = four_site(&s);
        let hs = herm_eig(h.op()).unwrap();
        let want = expm_scaled(&hs, Scale::Real(-1.0)).unwrap();
        let half = expm_scaled(&hs, Scale::Real(-0.5)).unwrap();
        assert!((exact_a(&hw, &h, 1.0).unwrap().op() - &want).max_abs() < 1e-13);
        assert!((dyson_a(&hw, &h, 1.0, &DysonParams::default()).unwrap().op() - &want).max_abs() < 1e-9);
        let b = qbp_b(&hw, &h, 1.0, &small_params()).unwrap();
        assert!((b.op() - &half).max_abs() < 1e-13);
    }

    #[test]
    fn exact_a_trace_identity() {
        let s = tfim(8);
        let (hw, h) = four_site(&s);
        let a = exact_a(&hw, &h, 1.0).unwrap();
        let s0 = herm_eig(hw.op()).unwrap();
        let g0 = expm_scaled(&s0, Scale::Real(-1.0)).unwrap();
        let s1 = herm_eig(&(hw.op() + h.op())).unwrap();
        let g1 = expm_scaled(&s1, Scale::Real(-1.0)).unwrap();
        assert!((g0.matmul(a.op()).trace() - g1.trace()).norm() < 1e-10);
    }

    #[test]
    fn dyson_zero_h_is_identity() {
        let s = tfim(8);
        let (hw, h) = four_site(&s);
        let a = dyson_a(&hw, &h.scale_real(0.0), 1.0, &DysonParams::default()).unwrap();
        assert!((a.op() - &DenseOperator::identity(16)).max_abs() < 1e-15);
    }

    #[test]
    fn qbp_gibbs_identity_improves_with_slices() {
        let s = tfim(8);
        let (hw, h) = four_site(&s);
        let target = herm_eig(&(hw.op() + h.op())).unwrap();
        let target = expm_scaled(&target, Scale::Real(-1.0)).unwrap();
        let g = expm_scaled(&herm_eig(hw.op()).unwrap(), Scale::Real(-1.0)).unwrap();
        let err = |m: usize| {
            let p = QbpParams { m_trotter: m, ..small_params() };
            let b = qbp_b(&hw, &h, 1.0, &p).unwrap();
            op_norm(&(&b.op().matmul(&g).matmul(&b.op().adjoint()) - &target)).unwrap()
        };
        let (e8, e16) = (err(8), err(16));
        assert!(e16 < 0.6 * e8, "{e8} {e16}");
    }

    #[test]
    fn truncation_error_vanishes_on_full_window_and_commuting() {
        let s = tfim(8);
        let sample = a_truncation_error(&s, 4, 1.0, 6, &AMethod::Exact, 4).unwrap();
        assert_eq!(sample.measured, 0.0);
        let c = ising(8);
        for l1 in 0..3 {
            let r = a_truncation_error(&c, 4, 1.0, l1, &AMethod::Exact, 2).unwrap();
            assert!(r.measured < 1e-13, "{l1}: {}", r.measured);
        }
    }
}
