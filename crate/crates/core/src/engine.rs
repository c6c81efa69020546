//! Sequential free-energy estimation from local window ratios, window-size
//! sweeps and the three-term error budget of the explicit-`A` estimator.

use std::io::Write;
use std::time::{Duration, Instant};

use faer::c64;
use rayon::prelude::*;

use crate::chain::{
    assemble, diagonal_energies, is_clipped, partial_hamiltonian, split, window_around, ChainSpec,
};
use crate::error::{Error, Result};
use crate::operator::{
    conjugate_in_eigenbasis, herm_eig, op_norm, reduce, space_dim, truncate, truncate_sites,
    DenseOperator, Scale, SupportedOperator, MAX_EXPONENT,
};
use crate::oracle::{csv_err, exact_log_partition, linear_fit, log_trace_exp, GibbsState};
use crate::qbp::{build_a, local_problem, AMethod, DysonParams, QbpParams};
use crate::quadrature::unit_square;
use crate::window::Window;

/// Errors below this are treated as exact in sweeps.
pub const SWEEP_FLOOR: f64 = 1e-13;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StepMethod {
    WindowRatio,
    ExplicitQbp,
    ExplicitDyson,
}

impl StepMethod {
    pub fn name(&self) -> &'static str {
        match self {
            StepMethod::WindowRatio => "window_ratio",
            StepMethod::ExplicitQbp => "explicit_qbp",
            StepMethod::ExplicitDyson => "explicit_dyson",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct StepEstimate {
    pub term_index: usize,
    pub window: Window,
    pub log_ratio: f64,
    pub method: StepMethod,
    pub clipped: bool,
    pub wall_time: Duration,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EngineParams {
    /// Radius of the truncation window for explicit `A`.
    pub l1: usize,
    /// Extra sites beyond `l1` on which `A` is built before truncation.
    pub pad: usize,
    pub qbp: QbpParams,
    pub dyson: DysonParams,
    /// Largest non-diagonal Hilbert-space dimension for which an exact
    /// reference is attached automatically.
    pub reference_max_dim: usize,
}

impl EngineParams {
    pub fn new(beta: f64) -> Self {
        Self {
            l1: 2,
            pad: 4,
            qbp: QbpParams::reference(beta),
            dyson: DysonParams::default(),
            reference_max_dim: 1 << 10,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FreeEnergyReport {
    pub beta: f64,
    pub n: usize,
    pub d: usize,
    pub l: usize,
    pub l1: Option<usize>,
    pub method: StepMethod,
    pub steps: Vec<StepEstimate>,
    pub free_energy_density: f64,
    pub exact_reference: Option<f64>,
    pub abs_error: Option<f64>,
    pub total_time: Duration,
}

impl FreeEnergyReport {
    /// `log d + Σ log r_i / n`, summed left to right.
    pub fn density_from_steps(d: usize, n: usize, steps: &[StepEstimate]) -> f64 {
        let mut sum = 0.0;
        for s in steps {
            sum += s.log_ratio;
        }
        (d as f64).ln() + sum / n as f64
    }

    pub fn write_steps_csv(&self, mut w: impl Write, timings: bool) -> Result<()> {
        write_steps_csv(&self.steps, &mut w, timings)
    }
}

pub fn write_steps_csv(steps: &[StepEstimate], mut w: impl Write, timings: bool) -> Result<()> {
    let mut out = csv::Writer::from_writer(&mut w);
    out.write_record(["i", "lo", "hi", "log_ratio", "clipped", "time_ms"])
        .map_err(csv_err)?;
    for s in steps {
        let ms = if timings {
            s.wall_time.as_secs_f64() * 1e3
        } else {
            0.0
        };
        out.write_record([
            s.term_index.to_string(),
            s.window.lo().to_string(),
            s.window.hi().to_string(),
            format!("{:.16e}", s.log_ratio),
            s.clipped.to_string(),
            format!("{ms:.3}"),
        ])
        .map_err(csv_err)?;
    }
    out.flush()?;
    Ok(())
}

fn sanity(spec: &ChainSpec, i: usize, window: Window, log_ratio: f64, beta: f64) -> Result<()> {
    let guard = beta.abs() * (1.0 + 1e-9) + (spec.d() as f64).ln() * window.len() as f64;
    if !log_ratio.is_finite() || log_ratio.abs() > guard {
        return Err(Error::Numeric(format!(
            "step {i}: log ratio {log_ratio} outside sanity bound {guard}"
        )));
    }
    Ok(())
}

/// `log tr e^{−β(H_i^W + h_i)} − log tr e^{−β H_i^W}` with `W = L_l`.
pub fn step_ratio(spec: &ChainSpec, i: usize, l: usize, beta: f64) -> Result<StepEstimate> {
    let started = Instant::now();
    let window = window_around(spec, i, l)?;
    let clipped = is_clipped(spec, i, l)?;
    let log_ratio = if beta == 0.0 {
        0.0
    } else {
        let mut inside = split(partial_hamiltonian(spec, i)?, window).inside;
        let without = log_trace_exp(&inside, window, spec.d(), beta)?;
        inside.push(spec.term(i)?.clone());
        let with = log_trace_exp(&inside, window, spec.d(), beta)?;
        with - without
    };
    sanity(spec, i, window, log_ratio, beta)?;
    Ok(StepEstimate {
        term_index: i,
        window,
        log_ratio,
        method: StepMethod::WindowRatio,
        clipped,
        wall_time: started.elapsed(),
    })
}

fn a_method(method: StepMethod, params: &EngineParams) -> Result<AMethod> {
    match method {
        StepMethod::ExplicitQbp => Ok(AMethod::Qbp(params.qbp)),
        StepMethod::ExplicitDyson => Ok(AMethod::Dyson(params.dyson)),
        StepMethod::WindowRatio => Err(Error::InvalidParam(
            "window_ratio has no explicit A construction".into(),
        )),
    }
}

/// `A^{(L_{l1})}` reduced onto `L_{l1}`, built on `L_{l1+pad}`.
pub fn truncated_a(
    spec: &ChainSpec,
    i: usize,
    beta: f64,
    method: &AMethod,
    l1: usize,
    pad: usize,
) -> Result<SupportedOperator> {
    let build = window_around(spec, i, l1 + pad)?;
    let keep = window_around(spec, i, l1)?;
    let (h_win, h) = local_problem(spec, i, build)?;
    let a = build_a(method, &h_win, &h, beta)?;
    reduce(&a, keep)
}

/// `log tr(ρ_i^{(L_l)} A^{(L_{l1})})`.
pub fn step_ratio_explicit(
    spec: &ChainSpec,
    i: usize,
    l: usize,
    l1: usize,
    beta: f64,
    method: StepMethod,
    params: &EngineParams,
) -> Result<StepEstimate> {
    let started = Instant::now();
    if l1 > l {
        return Err(Error::InvalidParam(format!("l1 = {l1} exceeds l = {l}")));
    }
    let am = a_method(method, params)?;
    let window = window_around(spec, i, l)?;
    let clipped = is_clipped(spec, i, l)?;
    let log_ratio = if beta == 0.0 {
        0.0
    } else {
        let a = truncated_a(spec, i, beta, &am, l1, params.pad)?;
        let inside = split(partial_hamiltonian(spec, i)?, window).inside;
        let state = GibbsState::new(&assemble(&inside, window, spec.d())?, beta)?;
        let v = state.expectation(&a)?;
        if v.re.is_nan() || v.re <= 0.0 {
            return Err(Error::Numeric(format!(
                "step {i}: tr(ρA) = {v} has no positive real part"
            )));
        }
        v.re.ln()
    };
    sanity(spec, i, window, log_ratio, beta)?;
    Ok(StepEstimate {
        term_index: i,
        window,
        log_ratio,
        method,
        clipped,
        wall_time: started.elapsed(),
    })
}

fn reference_allowed(spec: &ChainSpec, max_dim: usize) -> bool {
    let Ok(dim) = space_dim(spec.d(), spec.n()) else {
        return false;
    };
    if dim <= max_dim {
        return true;
    }
    matches!(diagonal_energies(spec.terms(), spec.full_window(), spec.d()), Ok(Some(_)))
}

/// Exact density `n⁻¹ log Z` when affordable.
pub fn exact_density(spec: &ChainSpec, beta: f64, max_dim: usize) -> Result<Option<f64>> {
    if !reference_allowed(spec, max_dim) {
        return Ok(None);
    }
    Ok(Some(exact_log_partition(spec, beta)? / spec.n() as f64))
}

/// Runs one step per term in parallel and sums the log ratios left to right.
pub fn estimate_free_energy(
    spec: &ChainSpec,
    beta: f64,
    l: usize,
    method: StepMethod,
    params: &EngineParams,
) -> Result<FreeEnergyReport> {
    let started = Instant::now();
    let steps: Vec<StepEstimate> = (1..=spec.num_terms())
        .into_par_iter()
        .map(|i| {
            match method {
                StepMethod::WindowRatio => step_ratio(spec, i, l, beta),
                _ => step_ratio_explicit(spec, i, l, params.l1.min(l), beta, method, params),
            }
            .map_err(|e| Error::Step {
                index: i,
                source: Box::new(e),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let density = FreeEnergyReport::density_from_steps(spec.d(), spec.n(), &steps);
    let exact = exact_density(spec, beta, params.reference_max_dim)?;
    Ok(FreeEnergyReport {
        beta,
        n: spec.n(),
        d: spec.d(),
        l,
        l1: (method != StepMethod::WindowRatio).then_some(params.l1.min(l)),
        method,
        steps,
        free_energy_density: density,
        exact_reference: exact,
        abs_error: exact.map(|e| (density - e).abs()),
        total_time: started.elapsed(),
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepRecord {
    pub l: usize,
    pub density: f64,
    pub abs_error: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub enum SweepFit {
    /// `log(abs_error) ≈ intercept + rate · l`.
    Decay { rate: f64, intercept: f64, r2: f64, points: usize },
    /// Every error is at the floor from this `l` on.
    ExactAtFiniteL { l: usize },
    Insufficient { usable: usize },
}

impl SweepFit {
    /// Smallest `l` whose fitted error is at most `eps`.
    pub fn suggest_l(&self, eps: f64) -> Option<usize> {
        match self {
            SweepFit::Decay { rate, intercept, .. } if *rate < 0.0 && eps > 0.0 => {
                let l = ((eps.ln() - intercept) / rate).ceil();
                Some(l.max(0.0) as usize)
            }
            SweepFit::ExactAtFiniteL { l } => Some(*l),
            _ => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepReport {
    pub beta: f64,
    pub exact_density: f64,
    pub records: Vec<SweepRecord>,
    pub fit: SweepFit,
}

pub fn fit_sweep(records: &[SweepRecord]) -> SweepFit {
    let usable: Vec<&SweepRecord> = records.iter().filter(|r| r.abs_error > SWEEP_FLOOR).collect();
    if usable.len() >= 3 {
        let x: Vec<f64> = usable.iter().map(|r| r.l as f64).collect();
        let y: Vec<f64> = usable.iter().map(|r| r.abs_error.ln()).collect();
        let (rate, intercept, r2) = linear_fit(&x, &y);
        return SweepFit::Decay {
            rate,
            intercept,
            r2,
            points: usable.len(),
        };
    }
    let first_exact = records
        .iter()
        .enumerate()
        .find(|(idx, _)| records[*idx..].iter().all(|r| r.abs_error <= SWEEP_FLOOR))
        .map(|(_, r)| r.l);
    match first_exact {
        Some(l) if !records.is_empty() => SweepFit::ExactAtFiniteL { l },
        _ => SweepFit::Insufficient {
            usable: usable.len(),
        },
    }
}

pub fn sweep_window(
    spec: &ChainSpec,
    beta: f64,
    l_values: &[usize],
    method: StepMethod,
    params: &EngineParams,
) -> Result<SweepReport> {
    let exact = exact_density(spec, beta, usize::MAX)?
        .ok_or_else(|| Error::InsufficientData("exact reference not computable".into()))?;
    let mut records = Vec::with_capacity(l_values.len());
    for &l in l_values {
        let r = estimate_free_energy(spec, beta, l, method, params)?;
        records.push(SweepRecord {
            l,
            density: r.free_energy_density,
            abs_error: (r.free_energy_density - exact).abs(),
        });
    }
    let fit = fit_sweep(&records);
    Ok(SweepReport {
        beta,
        exact_density: exact,
        records,
        fit,
    })
}

pub fn write_sweep_csv(records: &[SweepRecord], mut w: impl Write) -> Result<()> {
    let mut out = csv::Writer::from_writer(&mut w);
    out.write_record(["l", "density", "abs_error"]).map_err(csv_err)?;
    for r in records {
        out.write_record([
            r.l.to_string(),
            format!("{:.16e}", r.density),
            format!("{:.16e}", r.abs_error),
        ])
        .map_err(csv_err)?;
    }
    out.flush()?;
    Ok(())
}

/// Relative slack on the budget inequality.
pub const BUDGET_SLACK: f64 = 0.05;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BudgetParams {
    pub method: AMethod,
    pub ns: usize,
    pub nk: usize,
    /// Also evaluate T2, T3 on the doubled grid.
    pub refine: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ErrorBudget {
    pub i: usize,
    pub l: usize,
    pub l1: usize,
    pub l2: usize,
    pub beta: f64,
    pub t1: f64,
    pub t2: f64,
    pub t3: f64,
    pub lhs: f64,
    pub refinement_delta: Option<f64>,
}

impl ErrorBudget {
    /// `T1 + 2β (T2 + T3)`.
    pub fn rhs(&self) -> f64 {
        self.t1 + 2.0 * self.beta * (self.t2 + self.t3)
    }

    pub fn holds(&self, slack: f64) -> bool {
        self.lhs <= self.rhs() * (1.0 + slack)
    }
}

struct BudgetFrame {
    h_i: DenseOperator,
    h_boundary: SupportedOperator,
    boundary_keep: crate::window::SiteSet,
    a_trunc: SupportedOperator,
    a_trunc_norm: f64,
}

fn budget_integrals(frame: &BudgetFrame, beta: f64, ns: usize, nk: usize) -> Result<(f64, f64)> {
    let (rs, rk) = unit_square(ns, nk)?;
    let mut t2 = 0.0;
    let mut t3 = 0.0;
    for (s, ws) in rs.pairs() {
        let hs = &frame.h_i - &frame.h_boundary.op().scale_real(s);
        let spec = herm_eig(&hs)?;
        let window = frame.h_boundary.window();
        let state = GibbsState::from_spectrum(spec.clone(), window, frame.h_boundary.local_dim(), beta);
        let hb_eig = spec.to_eigenbasis(frame.h_boundary.op());
        for (kappa, wk) in rk.pairs() {
            let spread = kappa * beta * (spec.max() - spec.min());
            if spread > MAX_EXPONENT {
                return Err(Error::Overflow { exponent: spread });
            }
            let mut x = hb_eig.clone();
            conjugate_in_eigenbasis(&mut x, &spec, Scale::Real(kappa * beta));
            let x = frame.h_boundary.with_op(spec.from_eigenbasis(&x));
            let xt = truncate_sites(&x, &frame.boundary_keep)?;
            let tail = op_norm(x.sub(&xt)?.op())?;
            t2 += ws * wk * frame.a_trunc_norm * tail;
            let cor: c64 = state.correlation(&xt, &frame.a_trunc)?;
            t3 += ws * wk * 0.5 * cor.norm();
        }
    }
    Ok((t2, t3))
}

/// Numerically evaluates the three terms bounding
/// `|tr(ρ_i A_i) − tr(ρ_i^{(L_l)} A_i^{(L_{l1})})|`.
pub fn error_budget(
    spec: &ChainSpec,
    i: usize,
    l: usize,
    l1: usize,
    l2: usize,
    beta: f64,
    params: &BudgetParams,
) -> Result<ErrorBudget> {
    if l < l1 + l2 {
        return Err(Error::InvalidParam(format!(
            "budget needs l >= l1 + l2 (l = {l}, l1 = {l1}, l2 = {l2})"
        )));
    }
    let d = spec.d();
    let full = spec.full_window();
    let big_l = window_around(spec, i, l)?;
    let l1_win = window_around(spec, i, l1)?;
    let partial = partial_hamiltonian(spec, i)?;
    let (h_i_full, h_full) = local_problem(spec, i, full)?;
    let a = build_a(&params.method, &h_i_full, &h_full, beta)?;
    let a_trunc = truncate(&a, l1_win)?;
    let t1 = op_norm(a.sub(&a_trunc)?.op())?;

    let sp = split(partial, big_l);
    let rho_i = GibbsState::new(&h_i_full, beta)?;
    let exact_side = rho_i.expectation(&a)?;
    let local_state = GibbsState::new(&assemble(&sp.inside, big_l, d)?, beta)?;
    let a_local = reduce(&a_trunc, l1_win)?;
    let approx_side = local_state.expectation(&a_local)?;
    let lhs = (exact_side - approx_side).norm();

    if sp.boundary.is_empty() || beta == 0.0 {
        return Ok(ErrorBudget {
            i,
            l,
            l1,
            l2,
            beta,
            t1,
            t2: 0.0,
            t3: 0.0,
            lhs,
            refinement_delta: params.refine.then_some(0.0),
        });
    }
    let frame = BudgetFrame {
        h_i: h_i_full.op().clone(),
        h_boundary: assemble(&sp.boundary, full, d)?,
        boundary_keep: sp.boundary_support().extend(l2, spec.n()),
        a_trunc_norm: op_norm(a_trunc.op())?,
        a_trunc,
    };
    let (t2, t3) = budget_integrals(&frame, beta, params.ns, params.nk)?;
    let refinement_delta = if params.refine {
        let (r2, r3) = budget_integrals(&frame, beta, 2 * params.ns, 2 * params.nk)?;
        Some(((r2 + r3) - (t2 + t3)).abs())
    } else {
        None
    };
    Ok(ErrorBudget {
        i,
        l,
        l1,
        l2,
        beta,
        t1,
        t2,
        t3,
        lhs,
        refinement_delta,
    })
}

pub fn write_budget_csv(budgets: &[ErrorBudget], mut w: impl Write) -> Result<()> {
    let mut out = csv::Writer::from_writer(&mut w);
    out.write_record(["i", "l", "l1", "l2", "T1", "T2", "T3", "lhs"])
        .map_err(csv_err)?;
    for b in budgets {
        out.write_record([
            b.i.to_string(),
            b.l.to_string(),
            b.l1.to_string(),
            b.l2.to_string(),
            format!("{:.16e}", b.t1),
            format!("{:.16e}", b.t2),
            format!("{:.16e}", b.t3),
            format!("{:.16e}", b.lhs),
        ])
        .map_err(csv_err)?;
    }
    out.flush()?;
    Ok(())
}
