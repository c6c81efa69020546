use faer::c64;
use proptest::prelude::*;

use gibbs1d::bounds::{lambert_w, multicomm_bound_sum, multicomm_measured, trunc_identity_residual};
use gibbs1d::chain::{
    assemble, build_preset, partial_hamiltonian, split, ChainSpec, LocalTerm, Preset,
};
use gibbs1d::cli::RunConfig;
use gibbs1d::engine::{estimate_free_energy, step_ratio, EngineParams, StepMethod};
use gibbs1d::operator::{
    adjoint_power, conjugate, embed, expm_scaled, herm_eig, op_norm, pauli_z, truncate,
    DenseOperator, Scale, SupportedOperator,
};
use gibbs1d::oracle::{
    correlation_in, exact_log_partition, full_state, transfer_matrix_log_partition,
};
use gibbs1d::qbp::{
    a_truncation_error, dyson_a, eta, exact_a, local_problem, qbp_a, AMethod, DysonOrder,
    DysonParams, QbpParams, Quadrature,
};
use gibbs1d::window::Window;

fn hermitian(q: usize, entries: &[(f64, f64)]) -> DenseOperator {
    let dim = 1usize << q;
    let g = DenseOperator::from_fn(dim, |i, j| {
        let (re, im) = entries[(i * dim + j) % entries.len()];
        c64::new(re + 0.01 * i as f64, im - 0.02 * j as f64)
    });
    g.hermitian_part()
}

fn random_op(max_q: usize) -> impl Strategy<Value = (usize, DenseOperator)> {
    (1..=max_q).prop_flat_map(|q| {
        prop::collection::vec((-1.0..1.0f64, -1.0..1.0f64), 1 << (2 * q))
            .prop_map(move |e| (q, hermitian(q, &e)))
    })
}

fn random_chain() -> impl Strategy<Value = ChainSpec> {
    (4usize..=7, 2usize..=3, any::<u64>())
        .prop_filter("n >= k", |(n, k, _)| n >= k)
        .prop_map(|(n, k, seed)| build_preset(&Preset::RandomKlocal, n, 2, k, seed).unwrap())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn truncation_is_a_contraction((q, op) in random_op(6), lo in 0usize..6, len in 1usize..6) {
        let lo = 1 + lo % q;
        let hi = (lo + len - 1).min(q);
        let o = SupportedOperator::new(op, Window::new(1, q).unwrap(), 2).unwrap();
        let t = truncate(&o, Window::new(lo, hi).unwrap()).unwrap();
        prop_assert!(op_norm(t.op()).unwrap() <= op_norm(o.op()).unwrap() + 1e-10);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn truncation_preserves_trace_and_is_idempotent(
        (q, op) in random_op(5), lo in 0usize..5, len in 1usize..5,
    ) {
        let lo = 1 + lo % q;
        let hi = (lo + len - 1).min(q);
        let keep = Window::new(lo, hi).unwrap();
        let o = SupportedOperator::new(op, Window::new(1, q).unwrap(), 2).unwrap();
        let t = truncate(&o, keep).unwrap();
        let (a, b) = (o.op().trace(), t.op().trace());
        prop_assert!((a - b).norm() <= 1e-12 * a.norm().max(1.0));
        let tt = truncate(&t, keep).unwrap();
        prop_assert!((tt.op() - t.op()).max_abs() <= 1e-12);
    }

    #[test]
    fn spectral_exponentials_are_inverse((q, op) in random_op(4), a in -5.0..5.0f64) {
        let spec = herm_eig(&op).unwrap();
        let lmax = spec.min().abs().max(spec.max().abs()).max(1e-12);
        let a = a / lmax;
        let p = expm_scaled(&spec, Scale::Real(a)).unwrap().matmul(&expm_scaled(&spec, Scale::Real(-a)).unwrap());
        prop_assert!((&p - &DenseOperator::identity(1 << q)).max_abs() <= 1e-10 * p.max_abs().max(1.0));
    }

    #[test]
    fn unitary_conjugation_preserves_norm((q, op) in random_op(4), (_, h) in random_op(4), t in -5.0..5.0f64) {
        let hq = h.dim().trailing_zeros() as usize;
        prop_assume!(hq == q);
        let spec = herm_eig(&h).unwrap();
        let c = conjugate(&op, &spec, Scale::Imag(t)).unwrap();
        prop_assert!((op_norm(&c).unwrap() - op_norm(&op).unwrap()).abs() <= 1e-10);
    }

    #[test]
    fn assemble_of_split_parts_is_the_full_hamiltonian(spec in random_chain(), lo in 1usize..8, len in 1usize..8) {
        let n = spec.n();
        let lo = 1 + (lo - 1) % n;
        let window = Window::new(lo, (lo + len - 1).min(n)).unwrap();
        let s = split(spec.terms(), window);
        let mut parts = s.inside.clone();
        parts.extend(s.boundary.iter().cloned());
        parts.extend(s.outside.iter().cloned());
        prop_assert_eq!(parts.len(), spec.num_terms());
        parts.sort_by_key(|t| (t.start(), t.width()));
        let full = spec.full_window();
        let a = assemble(&parts, full, 2).unwrap();
        let b = assemble(spec.terms(), full, 2).unwrap();
        prop_assert_eq!(a.op(), b.op());
        let hb = assemble(&s.boundary, full, 2).unwrap();
        let bound: f64 = s.boundary.iter().map(|t| t.norm_bound()).sum();
        prop_assert!(op_norm(hb.op()).unwrap() <= bound + 1e-12);
        prop_assert!(bound <= 2.0 * (spec.k() as f64 - 1.0) + 1e-12);
    }

    #[test]
    fn partial_hamiltonians_grow_by_one_term(spec in random_chain()) {
        for i in 1..spec.num_terms() {
            let a = partial_hamiltonian(&spec, i).unwrap();
            let b = partial_hamiltonian(&spec, i + 1).unwrap();
            prop_assert_eq!(b.len(), a.len() + 1);
            prop_assert_eq!(&b[..a.len()], a);
            prop_assert_eq!(&b[a.len()], spec.term(i).unwrap());
        }
    }

    #[test]
    fn log_partition_is_convex_in_beta(spec in random_chain(), beta in 0.05..2.0f64) {
        let h = 1e-2;
        let f = |b: f64| exact_log_partition(&spec, b).unwrap();
        let second = (f(beta + h) - 2.0 * f(beta) + f(beta - h)) / (h * h);
        prop_assert!(second >= -1e-8, "{}", second);
    }

    #[test]
    fn transfer_matrix_matches_brute_force(
        n in 2usize..=12, j in -1.0..1.0f64, field in -1.0..1.0f64, beta in 0.0..2.0f64,
    ) {
        let spec = build_preset(&Preset::ClassicalIsing { j, h: field }, n, 2, 2, 0).unwrap();
        let brute = exact_log_partition(&spec, beta).unwrap();
        let tm = transfer_matrix_log_partition(&spec, beta).unwrap();
        prop_assert!((brute - tm).abs() <= 1e-10 * brute.abs().max(1.0));
    }

    #[test]
    fn commuting_correlations_are_symmetric(
        field in -1.0..1.0f64, beta in 0.1..2.0f64, a in 1usize..=6, b in 1usize..=6,
    ) {
        prop_assume!(a != b);
        let spec = build_preset(&Preset::ClassicalIsing { j: 1.0, h: field }, 6, 2, 2, 0).unwrap();
        let state = full_state(&spec, beta).unwrap();
        let za = SupportedOperator::new(pauli_z(), Window::site(a).unwrap(), 2).unwrap();
        let zb = SupportedOperator::new(pauli_z(), Window::site(b).unwrap(), 2).unwrap();
        let tags = || ("a".to_string(), "b".to_string());
        let x = correlation_in(&state, beta, &za, &zb, tags()).unwrap().value;
        let y = correlation_in(&state, beta, &zb, &za, tags()).unwrap().value;
        prop_assert!((x - y).abs() <= 1e-12);
    }

    #[test]
    fn commuting_terms_annihilate_under_adjoint_powers(m in 1usize..5, field in -1.0..1.0f64, site in 1usize..=5) {
        let spec = build_preset(&Preset::ClassicalIsing { j: 1.0, h: field }, 5, 2, 2, 0).unwrap();
        let terms: Vec<SupportedOperator> = spec.terms().iter().map(|t| t.to_supported(2)).collect();
        let z = SupportedOperator::new(pauli_z(), Window::site(site).unwrap(), 2).unwrap();
        prop_assert_eq!(adjoint_power(&terms, &z, m).unwrap().op().max_abs(), 0.0);
    }

    #[test]
    fn lambert_w_inverts_x_exp_x(e in -6.0..6.0f64) {
        let x = 10f64.powf(e);
        let w = lambert_w(x).unwrap();
        prop_assert!((w * w.exp() - x).abs() <= 1e-12 * x.max(1.0));
    }

    #[test]
    fn multicommutators_respect_the_counting_bound(spec in random_chain(), m in 2usize..=4, w in 1usize..=3) {
        let k = spec.k();
        let w = w.min(k);
        let start = (spec.n() - w) / 2 + 1;
        let o = SupportedOperator::new(
            hermitian(w, &[(0.3, 0.1), (-0.7, 0.4), (0.2, -0.9)]),
            Window::new(start, start + w - 1).unwrap(),
            2,
        )
        .unwrap();
        let measured = multicomm_measured(&spec, &o, m).unwrap();
        let bound = multicomm_bound_sum(m, k, w) * op_norm(o.op()).unwrap();
        prop_assert!(measured <= bound + 1e-9);
    }

    #[test]
    fn config_round_trips(
        n in 2usize..20, beta in 0.0..5.0f64, seed in any::<u64>(), l in 0usize..10,
        list in prop::collection::vec(0usize..12, 1..5), eps in prop::option::of(1e-12..1.0f64),
    ) {
        let mut c = RunConfig::default();
        c.n = n;
        c.beta = beta;
        c.seed = seed;
        c.l = l;
        c.l_list = list;
        c.eps = eps;
        let text = c.to_canonical();
        let back = RunConfig::parse(&text).unwrap();
        prop_assert_eq!(&back, &c);
        prop_assert_eq!(back.to_canonical(), text);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(10))]

    #[test]
    fn eta_real_part_is_minus_half_beta_h(seed in any::<u64>(), beta in 0.1..1.0f64) {
        let spec = build_preset(&Preset::RandomKlocal, 6, 2, 2, seed).unwrap();
        let (hw, h) = local_problem(&spec, 3, Window::new(2, 5).unwrap()).unwrap();
        let p = QbpParams { n_t: 100, ..QbpParams::reference(beta) };
        for tau in [0.0, 0.5, 1.0] {
            let e = eta(tau, &hw, &h, beta, &p).unwrap();
            let target = h.op().scale_real(-0.5 * beta);
            prop_assert!((&e.op().hermitian_part() - &target).max_abs() <= 1e-10);
        }
    }

    #[test]
    fn qbp_a_norm_is_at_most_exp_beta(seed in any::<u64>(), beta in 0.1..1.0f64) {
        let spec = build_preset(&Preset::RandomKlocal, 6, 2, 2, seed).unwrap();
        let (hw, h) = local_problem(&spec, 3, Window::new(2, 5).unwrap()).unwrap();
        let p = QbpParams { n_t: 100, m_trotter: 16, ..QbpParams::reference(beta) };
        let a = qbp_a(&hw, &h, beta, &p).unwrap();
        prop_assert!(op_norm(a.op()).unwrap() <= beta.exp() * 1.001);
    }

    #[test]
    fn refinement_does_not_increase_a_error(seed in any::<u64>(), beta in 0.1..1.0f64) {
        let spec = build_preset(&Preset::RandomKlocal, 6, 2, 2, seed).unwrap();
        let (hw, h) = local_problem(&spec, 3, Window::new(2, 5).unwrap()).unwrap();
        let exact = exact_a(&hw, &h, beta).unwrap();
        let err = |a: SupportedOperator| op_norm(a.sub(&exact).unwrap().op()).unwrap();
        let mut prev_d = f64::INFINITY;
        let mut prev_q = f64::INFINITY;
        for level in 0..3 {
            let dp = DysonParams { n_tau: 8 << level, order: DysonOrder::Rk4 };
            let d = err(dyson_a(&hw, &h, beta, &dp).unwrap());
            prop_assert!(d <= 1.1 * prev_d + 1e-13, "dyson {} after {}", d, prev_d);
            prev_d = d;
            let qp = QbpParams {
                t_max: QbpParams::reference(beta).t_max,
                n_t: 25 << level,
                m_trotter: 4 << level,
                quadrature: Quadrature::GaussLegendre,
            };
            let q = err(qbp_a(&hw, &h, beta, &qp).unwrap());
            prop_assert!(q <= 1.1 * prev_q + 1e-13, "qbp {} after {}", q, prev_q);
            prev_q = q;
        }
    }

    #[test]
    fn a_truncation_error_decreases_with_l1(g in 0.3..1.5f64, beta in 0.2..1.0f64) {
        let spec = build_preset(&Preset::Tfim { j: 1.0, g }, 9, 2, 2, 0).unwrap();
        let mut prev = f64::INFINITY;
        for l1 in 0..=3 {
            let s = a_truncation_error(&spec, 5, beta, l1, &AMethod::Exact, 1).unwrap();
            prop_assert!(s.measured <= prev + 1e-12);
            prev = s.measured;
        }
    }

    #[test]
    fn telescoping_is_exact_for_spanning_windows(spec in random_chain(), beta in 0.0..2.0f64) {
        let params = EngineParams::new(beta);
        let r = estimate_free_energy(&spec, beta, spec.n(), StepMethod::WindowRatio, &params).unwrap();
        let exact = exact_log_partition(&spec, beta).unwrap();
        let total: f64 = r.steps.iter().map(|s| s.log_ratio).sum::<f64>() + spec.n() as f64 * 2f64.ln();
        prop_assert!((total - exact).abs() <= 1e-9);
    }

    #[test]
    fn trunc_identity_converges_under_grid_doubling(g in 0.3..1.5f64, beta in 0.2..1.0f64) {
        let spec = build_preset(&Preset::Tfim { j: 1.0, g }, 6, 2, 2, 0).unwrap();
        let z = SupportedOperator::new(pauli_z(), Window::site(3).unwrap(), 2).unwrap();
        let r = trunc_identity_residual(&spec, &z, 1, beta, (4, 4)).unwrap();
        prop_assert!(r.refined <= r.residual / 4.0 || r.refined < 1e-10, "{:?}", r);
    }
}

#[test]
fn window_ratios_converge_nearly_monotonically() {
    for (beta, g) in [(0.5, 1.0), (1.0, 1.0), (1.0, 0.5)] {
        let spec = build_preset(&Preset::Tfim { j: 1.0, g }, 9, 2, 2, 0).unwrap();
        let l_max = 8;
        let terms = spec.num_terms();
        let gap = |l: usize| -> f64 {
            (1..=terms)
                .map(|i| {
                    let a = step_ratio(&spec, i, l, beta).unwrap().log_ratio;
                    let b = step_ratio(&spec, i, l_max, beta).unwrap().log_ratio;
                    (a - b).abs()
                })
                .fold(0.0, f64::max)
        };
        for l in 0..l_max - 2 {
            assert!(gap(l + 2) <= gap(l) + 1e-12, "beta {beta} g {g} l {l}");
        }
    }
}

#[test]
fn estimates_are_bit_identical_across_runs() {
    let spec = build_preset(&Preset::RandomKlocal, 7, 2, 3, 11).unwrap();
    let params = EngineParams::new(1.0);
    let a = estimate_free_energy(&spec, 1.0, 2, StepMethod::WindowRatio, &params).unwrap();
    let b = estimate_free_energy(&spec, 1.0, 2, StepMethod::WindowRatio, &params).unwrap();
    assert_eq!(a.free_energy_density.to_bits(), b.free_energy_density.to_bits());
    for (x, y) in a.steps.iter().zip(&b.steps) {
        assert_eq!(x.log_ratio.to_bits(), y.log_ratio.to_bits());
        assert_eq!((x.window, x.clipped), (y.window, y.clipped));
    }
}

#[test]
fn explicit_steps_converge_to_window_ratios() {
    use gibbs1d::engine::step_ratio_explicit;
    for (seed, i) in [(1u64, 2usize), (2, 3), (3, 4), (4, 3)] {
        let spec = build_preset(&Preset::RandomKlocal, 5, 2, 2, seed).unwrap();
        let beta = 0.8;
        let l = 4;
        let target = step_ratio(&spec, i, l, beta).unwrap().log_ratio;
        let run = |m: usize| {
            let mut params = EngineParams::new(beta);
            params.pad = 0;
            params.qbp = QbpParams { n_t: 400, m_trotter: m, ..QbpParams::reference(beta) };
            let s = step_ratio_explicit(&spec, i, l, l, beta, StepMethod::ExplicitQbp, &params).unwrap();
            (s.log_ratio - target).abs()
        };
        let errs: Vec<f64> = [8, 16, 32].iter().map(|&m| run(m)).collect();
        for w in errs.windows(2) {
            let ratio = w[1] / w[0];
            assert!((0.4..=0.6).contains(&ratio), "seed {seed}: errors {errs:?}");
        }
        let dyson = |n_tau: usize| {
            let mut params = EngineParams::new(beta);
            params.pad = 0;
            params.dyson = DysonParams { n_tau, order: DysonOrder::Midpoint };
            let s = step_ratio_explicit(&spec, i, l, l, beta, StepMethod::ExplicitDyson, &params).unwrap();
            (s.log_ratio - target).abs()
        };
        let (d1, d2) = (dyson(8), dyson(16));
        assert!(d2 <= 0.6 * d1 || d2 < 1e-12, "seed {seed}: dyson {d1} -> {d2}");
    }
}

#[test]
fn truncation_of_a_local_term_embeds_consistently() {
    let spec = build_preset(&Preset::Tfim { j: 1.0, g: 0.7 }, 5, 2, 2, 0).unwrap();
    let t: &LocalTerm = spec.term(2).unwrap();
    let h = t.to_supported(2);
    let lifted = embed(&h, spec.full_window()).unwrap();
    let back = truncate(&lifted, t.support()).unwrap();
    assert!((back.op() - embed(&h, spec.full_window()).unwrap().op()).max_abs() < 1e-14);
}
