//! The verification suites behind `verify` and `quantum-check`.
//!
//! Every check is isolated: a failure inside one produces a failed entry
//! with the error message, and the rest still run. All randomness derives
//! from the user seed through named stream offsets, so a report is a pure
//! function of (input, seed).

use std::collections::HashSet;

use dilatron_core::dilation::{
    alpha, psi_apply, theta_shift, Coupling, Dilation, Mark, MarkedConfiguration, Provenance,
};
use dilatron_core::linalg::{self, Complex64, CVec};
use dilatron_core::markov::{decompose, expm_rate, recompose, uniformize, RateMatrix};
use dilatron_core::quantum::{
    check_extension, flow_coefficient_residual, generator_residual, is_permutation_matrix,
    kraus_from_unitary, lindblad_from_atoms, lindblad_from_kraus, lindblad_from_unitary_weights,
    noise_amplitudes, permutation_unitary, rn_density,
};
use dilatron_core::simulate::{
    conditional_counts, empirical_semigroup, path_rng, simulate_path_with, verify_flow_sde,
};
use dilatron_core::stats::{chi_square_gof, chi_square_two_sample, proportion_se};
use dilatron_core::tol;
use rand::Rng;

use crate::report::{CheckEntry, SemigroupRun};

/// Largest state count for which the permutation unitary S (dimension
/// n^(n+2)) is worth materializing: n = 3 gives 243, n = 4 would give 4096.
const MAX_UNITARY_STATES: usize = 3;

pub struct VerifyOpts {
    pub seed: u64,
    pub paths: u64,
    pub times: Vec<f64>,
    pub alpha: f64,
    pub tol_alg: f64,
    pub tol_exp: f64,
    pub corrupt: bool,
}

type CheckResult = Result<CheckEntry, Box<dyn std::error::Error>>;

fn run_check(name: &str, body: impl FnOnce() -> CheckResult) -> CheckEntry {
    body().unwrap_or_else(|err| CheckEntry::failed(name, err))
}

/// A dense universal coupling with one duplicated target: a deliberately
/// broken table for the negative-control path of `verify`.
fn corrupted_universal(n: usize) -> Result<Coupling, Box<dyn std::error::Error>> {
    let clean = Coupling::universal_dense(n)?;
    let space = *clean.space();
    let gsize = space.size();
    let total = n * gsize;
    let mut forward = vec![0usize; total];
    let mut prescribed = vec![false; total];
    for ((i, m), (ti, tm), prov) in clean.iter_pairs().expect("dense table") {
        let from = i * gsize + space.index(m);
        forward[from] = ti * gsize + space.index(tm);
        prescribed[from] = prov == Provenance::Prescribed;
    }
    forward[total - 1] = forward[0];
    Ok(Coupling::from_forward_table_unchecked(n, forward, prescribed))
}

fn dyadic_units(rng: &mut impl Rng, max_units: u64) -> f64 {
    rng.gen_range(1..=max_units) as f64 / 1024.0
}

/// m distinct dyadic times in (0, hi_units/1024], ascending, with marks
/// drawn uniformly from the support of q.
fn random_config(
    rng: &mut impl Rng,
    support: &[Mark],
    m: usize,
    hi_units: u64,
    lo: f64,
    hi: f64,
) -> MarkedConfiguration {
    let mut units: Vec<u64> = Vec::with_capacity(m);
    while units.len() < m {
        let u = rng.gen_range(1..=hi_units);
        if !units.contains(&u) {
            units.push(u);
        }
    }
    units.sort_unstable();
    let points = units
        .into_iter()
        .map(|u| (u as f64 / 1024.0, support[rng.gen_range(0..support.len())]))
        .collect();
    MarkedConfiguration::new(points, lo, hi).expect("constructed inside the window")
}

fn check_decomposition_round_trip(r: &RateMatrix, tol_alg: f64) -> CheckEntry {
    run_check("decomposition_round_trip", || {
        let (_, p) = uniformize(r);
        let d = decompose(&p)?;
        let back = recompose(&d)?;
        let residual = linalg::max_abs_diff_r(back.as_array(), p.as_array());
        let weight_gap = (d.atoms().iter().map(|a| a.weight).sum::<f64>() - 1.0).abs();
        Ok(CheckEntry::exact("decomposition_round_trip", residual.max(weight_gap), tol_alg)
            .with_detail(format!("{} atoms", d.atoms().len())))
    })
}

fn check_bijection(coupling: &Coupling) -> CheckEntry {
    run_check("coupling_bijection", || {
        coupling.verify_bijection()?;
        Ok(CheckEntry::flag("coupling_bijection", true))
    })
}

fn check_cocycle(d: &Dilation, seed: u64) -> CheckEntry {
    run_check("cocycle_identity", || {
        let coupling = d.coupling();
        let support: Vec<Mark> = d.law().support().iter().map(|&(m, _)| m).collect();
        let mut rng = path_rng(seed, 1_000_001);
        let mut mismatches = 0u64;
        let instances = 200;
        for _ in 0..instances {
            let t = dyadic_units(&mut rng, 1024);
            let s = dyadic_units(&mut rng, 1024);
            let m = rng.gen_range(0..=3);
            let config = random_config(&mut rng, &support, m, 3072, -1.0, 4.0);
            let state = rng.gen_range(0..d.n());

            let (x_lhs, g_lhs) = psi_apply(coupling, t + s, state, &config)?;
            let (x1, g1) = psi_apply(coupling, t, state, &config)?;
            let (x2, g2) = psi_apply(coupling, s, x1, &theta_shift(t, &g1))?;
            let rhs = theta_shift(-t, &g2);
            if x_lhs != x2 || g_lhs != rhs {
                mismatches += 1;
            }
        }
        Ok(CheckEntry::exact("cocycle_identity", mismatches as f64, 0.0)
            .with_detail(format!("{instances} random instances, exact equality")))
    })
}

fn check_group(d: &Dilation, seed: u64) -> CheckEntry {
    run_check("group_identity", || {
        let coupling = d.coupling();
        let support: Vec<Mark> = d.law().support().iter().map(|&(m, _)| m).collect();
        let mut rng = path_rng(seed, 1_000_002);
        let mut mismatches = 0u64;
        let instances = 100;
        for _ in 0..instances {
            let sign_t = if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
            let sign_s = if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
            let t = sign_t * dyadic_units(&mut rng, 2048);
            let s = sign_s * dyadic_units(&mut rng, 2048);
            let m = rng.gen_range(0..=3);
            let config = random_config(&mut rng, &support, m, 2048, -8.0, 8.0);
            let state = rng.gen_range(0..d.n());

            // alpha_{-t} inverts alpha_t.
            let (x1, g1) = alpha(coupling, t, state, &config)?;
            let (x0, g0) = alpha(coupling, -t, x1, &g1)?;
            if x0 != state || g0 != config {
                mismatches += 1;
            }
            // alpha_s . alpha_t = alpha_{s+t}.
            let (x2, g2) = alpha(coupling, s, x1, &g1)?;
            let (x3, g3) = alpha(coupling, s + t, state, &config)?;
            if x2 != x3 || g2 != g3 {
                mismatches += 1;
            }
        }
        Ok(CheckEntry::exact("group_identity", mismatches as f64, 0.0)
            .with_detail(format!("{instances} random instances, exact equality")))
    })
}

fn check_sector_permutation(d: &Dilation) -> CheckEntry {
    run_check("sector_permutation", || {
        let coupling = d.coupling();
        let space = *coupling.space();
        let n = d.n();
        let (pool, scope): (Vec<Mark>, &str) = if coupling.is_dense() {
            (space.iter().collect(), "full mark alphabet")
        } else {
            (d.law().support().iter().map(|&(m, _)| m).collect(), "support-restricted")
        };
        let mut collisions = 0u64;
        let mut checked = 0u64;
        for m in 1..=2usize {
            let tuples = (pool.len() as u64).pow(m as u32) * n as u64;
            if tuples > 2_000_000 {
                continue;
            }
            // Fixed dyadic arrival times k/4; the action happens on (0, 1].
            let times: Vec<f64> = (1..=m).map(|k| k as f64 / 4.0).collect();
            let mut seen: HashSet<(usize, Vec<Mark>)> = HashSet::new();
            let mut index = vec![0usize; m];
            loop {
                let marks: Vec<Mark> = index.iter().map(|&k| pool[k]).collect();
                let points = times.iter().copied().zip(marks.iter().copied()).collect();
                let config = MarkedConfiguration::new(points, 0.0, 1.0)?;
                for state in 0..n {
                    let (x, g) = psi_apply(coupling, 1.0, state, &config)?;
                    let key = (x, g.points().iter().map(|&(_, mark)| mark).collect());
                    if !seen.insert(key) {
                        collisions += 1;
                    }
                    checked += 1;
                }
                // Advance the odometer over pool^m.
                let mut pos = 0;
                loop {
                    if pos == m {
                        break;
                    }
                    index[pos] += 1;
                    if index[pos] < pool.len() {
                        break;
                    }
                    index[pos] = 0;
                    pos += 1;
                }
                if pos == m {
                    break;
                }
            }
        }
        Ok(CheckEntry::exact("sector_permutation", collisions as f64, 0.0)
            .with_detail(format!("{checked} sector points, {scope}")))
    })
}

/// One Monte Carlo transition-frequency comparison; shared by `simulate`
/// and `verify`. Passes when every frequency sits within 3 standard
/// errors of the exact row and the goodness-of-fit p-value clears alpha.
pub fn semigroup_run(
    r: &RateMatrix,
    d: &Dilation,
    k: usize,
    t: f64,
    paths: u64,
    seed: u64,
    alpha: f64,
) -> Result<SemigroupRun, Box<dyn std::error::Error>> {
    let empirical = empirical_semigroup(d, k, t, paths, seed)?;
    let exact = expm_rate(r, t)?;
    let exact_row: Vec<f64> = (0..r.n()).map(|j| exact.as_array()[[k, j]]).collect();
    let freqs = empirical.frequencies();
    let mut max_abs_dev = 0.0f64;
    let mut within = true;
    for j in 0..r.n() {
        let dev = (freqs[j] - exact_row[j]).abs();
        max_abs_dev = max_abs_dev.max(dev);
        if dev > tol::STAT_SIGMA * proportion_se(exact_row[j], paths) {
            within = false;
        }
    }
    let gof = chi_square_gof(empirical.counts(), &exact_row)?;
    let pass = within && gof.p_value > alpha;
    Ok(SemigroupRun {
        k: k + 1,
        t,
        paths,
        empirical: freqs,
        exact: exact_row,
        max_abs_dev,
        chi2: gof.statistic,
        p_value: gof.p_value,
        verdict: if pass { "pass" } else { "fail" },
    })
}

fn check_markov_semigroup(
    r: &RateMatrix,
    d: &Dilation,
    o: &VerifyOpts,
    checks: &mut Vec<CheckEntry>,
) {
    for (idx, &t) in o.times.iter().enumerate() {
        let name = format!("markov_semigroup[t={t}]");
        checks.push(run_check(&name, || {
            let run =
                semigroup_run(r, d, 0, t, o.paths, o.seed.wrapping_add(10 + idx as u64), o.alpha)?;
            let pass = run.verdict == "pass";
            Ok(CheckEntry::statistical(&name, run.chi2, run.p_value, o.alpha, pass)
                .with_detail(format!("max_abs_dev = {:.3e}", run.max_abs_dev)))
        }));
    }
}

fn check_markov_conditional(r: &RateMatrix, d: &Dilation, o: &VerifyOpts) -> CheckEntry {
    run_check("markov_conditional", || {
        let s = o.times.first().copied().unwrap_or(0.5);
        let t = 1.0;
        let table = conditional_counts(d, 0, t, s, o.paths, o.seed.wrapping_add(50))?;
        let exact = expm_rate(r, s)?;
        let mut worst_stat = 0.0f64;
        let mut min_p = 1.0f64;
        for (i, row) in table.iter().enumerate() {
            if row.iter().sum::<u64>() == 0 {
                continue;
            }
            let probs: Vec<f64> = (0..r.n()).map(|j| exact.as_array()[[i, j]]).collect();
            let gof = chi_square_gof(row, &probs)?;
            worst_stat = worst_stat.max(gof.statistic);
            min_p = min_p.min(gof.p_value);
        }
        Ok(CheckEntry::statistical("markov_conditional", worst_stat, min_p, o.alpha, true)
            .with_detail(format!("X(t+s) | X(t) rows vs exp(Rs), t = {t}, s = {s}")))
    })
}

fn check_markov_homogeneity(d: &Dilation, o: &VerifyOpts) -> CheckEntry {
    run_check("markov_homogeneity", || {
        let s = o.times.first().copied().unwrap_or(0.5);
        let early = conditional_counts(d, 0, 0.0, s, o.paths, o.seed.wrapping_add(60))?;
        let late = conditional_counts(d, 0, 1.0, s, o.paths, o.seed.wrapping_add(61))?;
        // At t = 0 the chain sits at its start, so only that row is
        // populated; compare its conditional law across the two origins.
        let test = chi_square_two_sample(&early[0], &late[0])?;
        Ok(CheckEntry::statistical(
            "markov_homogeneity",
            test.statistic,
            test.p_value,
            o.alpha,
            true,
        )
        .with_detail(format!("law of X(t+s) | X(t) = start, t in {{0, 1}}, s = {s}")))
    })
}

fn check_flow_sde(d: &Dilation, o: &VerifyOpts) -> CheckEntry {
    run_check("flow_sde", || {
        let n = d.n();
        let trajectories = o.paths.min(2000);
        let mut failures = 0u64;
        for p in 0..trajectories {
            let mut rng = path_rng(o.seed.wrapping_add(70), p);
            let traj = simulate_path_with(d, (p % n as u64) as usize, 1.0, &mut rng)?;
            for j in 0..n {
                let mut f = vec![0.0; n];
                f[j] = 1.0;
                if !verify_flow_sde(&traj, d.coupling(), &f)? {
                    failures += 1;
                }
            }
        }
        Ok(CheckEntry::exact("flow_sde", failures as f64, 0.0).with_detail(format!(
            "{trajectories} trajectories x {n} indicator functions, exact increments"
        )))
    })
}

fn check_generator_restriction(r: &RateMatrix, tol_alg: f64) -> CheckEntry {
    run_check("generator_restriction", || {
        let (lambda, p) = uniformize(r);
        let l = lindblad_from_atoms(&decompose(&p)?, lambda);
        let residual = generator_residual(&l, r)?;
        Ok(CheckEntry::exact("generator_restriction", residual, tol_alg)
            .with_detail("L(m_f) = m_Rf over canonical basis functions"))
    })
}

fn check_semigroup_extension(r: &RateMatrix, times: &[f64], tol_exp: f64) -> CheckEntry {
    run_check("semigroup_extension", || {
        let (lambda, p) = uniformize(r);
        let l = lindblad_from_atoms(&decompose(&p)?, lambda);
        let report = check_extension(&l, r, times)?;
        Ok(CheckEntry::exact(
            "semigroup_extension",
            report.max_residual.max(report.max_off_diagonal),
            tol_exp,
        )
        .with_detail(format!(
            "exp(Lt) on multiplication operators vs exp(Rt); off-diagonal leak {:.3e}",
            report.max_off_diagonal
        )))
    })
}

fn check_semigroup_cp(r: &RateMatrix, times: &[f64]) -> CheckEntry {
    run_check("semigroup_unital_cp", || {
        let (lambda, p) = uniformize(r);
        let l = lindblad_from_atoms(&decompose(&p)?, lambda);
        let mut worst = 0.0f64;
        for &t in times {
            let e = l.exp(t)?;
            worst = worst.max(e.identity_defect(true) / tol::IDENTITY_PRESERVATION);
            worst = worst.max((-e.min_choi_eigenvalue()).max(0.0) / tol::PSD_EIG_FLOOR);
        }
        Ok(CheckEntry::exact("semigroup_unital_cp", worst, 1.0)
            .with_detail("identity preservation and Choi positivity, scaled to each floor"))
    })
}

/// The S-route checks, available when n is small enough to materialize
/// the permutation unitary.
fn unitary_route_checks(
    r: &RateMatrix,
    d: &Dilation,
    seed: u64,
    tol_alg: f64,
    checks: &mut Vec<CheckEntry>,
) {
    let n = r.n();
    checks.push(run_check("unitary_permutation", || {
        let s = permutation_unitary(d.coupling())?;
        Ok(CheckEntry::flag("unitary_permutation", is_permutation_matrix(&s))
            .with_detail(format!("S is {dim} x {dim}, entries exactly 0/1", dim = s.nrows())))
    }));

    checks.push(run_check("kraus_completeness", || {
        let s = permutation_unitary(d.coupling())?;
        let nu = noise_amplitudes(d.law());
        let family = kraus_from_unitary(&s, n, &nu)?;
        let mut gram = linalg::CMat::zeros((n, n));
        for k in &family {
            gram += &linalg::dagger(k).dot(k);
        }
        let want = linalg::eye_c(n).mapv(|z| z * Complex64::new(d.law().lambda(), 0.0));
        Ok(CheckEntry::exact(
            "kraus_completeness",
            linalg::max_abs_diff_c(&gram, &want),
            tol_alg,
        )
        .with_detail("sum of R*R over marks equals lambda I"))
    }));

    checks.push(run_check("generator_triangle", || {
        let s = permutation_unitary(d.coupling())?;
        let from_blocks = lindblad_from_unitary_weights(&s, d.law())?;
        let nu = noise_amplitudes(d.law());
        let kraus = kraus_from_unitary(&s, n, &nu)?;
        let zero_h = linalg::CMat::zeros((n, n));
        let from_kraus = lindblad_from_kraus(&zero_h, &kraus)?;
        let (lambda, p) = uniformize(r);
        let from_atoms = lindblad_from_atoms(&decompose(&p)?, lambda);
        let residual = linalg::max_abs_diff_c(from_blocks.matrix(), from_kraus.matrix())
            .max(linalg::max_abs_diff_c(from_blocks.matrix(), from_atoms.matrix()));
        Ok(CheckEntry::exact("generator_triangle", residual, tol_alg)
            .with_detail("block-sum, Kraus, and map-mixture constructions agree"))
    }));

    checks.push(run_check("completion_invariance", || {
        let s1 = permutation_unitary(d.coupling())?;
        let s2 = permutation_unitary(&Coupling::universal_dense_reversed(n)?)?;
        let l1 = lindblad_from_unitary_weights(&s1, d.law())?;
        let l2 = lindblad_from_unitary_weights(&s2, d.law())?;
        Ok(CheckEntry::exact(
            "completion_invariance",
            linalg::max_abs_diff_c(l1.matrix(), l2.matrix()),
            tol::COMPLETION_INVARIANCE,
        )
        .with_detail("generator unchanged under a different coupling completion"))
    }));

    checks.push(run_check("flow_coefficients", || {
        let s = permutation_unitary(d.coupling())?;
        let mut rng = path_rng(seed, 1_000_003);
        let mut worst = 0.0f64;
        let samples = 20;
        for _ in 0..samples {
            let f = CVec::from_iter(
                (0..n).map(|_| Complex64::new(rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0))),
            );
            worst = worst.max(flow_coefficient_residual(&s, d.coupling(), &f)?);
        }
        Ok(CheckEntry::exact("flow_coefficients", worst, tol_alg)
            .with_detail(format!("S*(m_f x 1)S block identity, {samples} random f")))
    }));
}

fn check_density_reweighting(d: &Dilation, seed: u64, tol_alg: f64) -> CheckEntry {
    run_check("density_reweighting", || {
        let law = d.law();
        let gsize = law.space().size() as f64;
        let support = law.support();
        let mut rng = path_rng(seed, 1_000_004);
        let mut worst = 0.0f64;
        let functions = 5;
        for _ in 0..functions {
            for m in 0..=2usize {
                // Sum over support^m: uniform-reference expectation of
                // density * h vs the law's expectation of h.
                let tuples = support.len().pow(m as u32);
                let mut lhs = 0.0;
                let mut rhs = 0.0;
                let mut index = vec![0usize; m];
                for _ in 0..tuples {
                    let h: f64 = rng.gen_range(-1.0..1.0);
                    let marks: Vec<Mark> = index.iter().map(|&k| support[k].0).collect();
                    let weight: f64 = index.iter().map(|&k| support[k].1).product();
                    let points: Vec<(f64, Mark)> = marks
                        .iter()
                        .enumerate()
                        .map(|(pos, &mark)| ((pos + 1) as f64 / 4.0, mark))
                        .collect();
                    let config = MarkedConfiguration::new(points, 0.0, 1.0)?;
                    lhs += rn_density(&config, law) / gsize.powi(m as i32) * h;
                    rhs += weight * h;
                    let mut pos = 0;
                    while pos < m {
                        index[pos] += 1;
                        if index[pos] < support.len() {
                            break;
                        }
                        index[pos] = 0;
                        pos += 1;
                    }
                }
                worst = worst.max((lhs - rhs).abs());
            }
        }
        Ok(CheckEntry::exact("density_reweighting", worst, tol_alg)
            .with_detail("sum over mark tuples (m <= 2) of density/|G|^m vs law weights"))
    })
}

pub fn verify_suite(r: &RateMatrix, o: &VerifyOpts) -> Vec<CheckEntry> {
    let mut checks = Vec::new();
    let n = r.n();

    checks.push(check_decomposition_round_trip(r, o.tol_alg));

    // Build the dilation once; inject the corrupted coupling if asked.
    let clean = match Dilation::build_universal(r) {
        Ok(clean) => clean,
        Err(err) => {
            checks.push(CheckEntry::failed("dilation_build", err));
            return checks;
        }
    };
    let dilation = if o.corrupt {
        let injected = corrupted_universal(n)
            .and_then(|bad| Dilation::new(bad, clean.law().clone()).map_err(Into::into));
        match injected {
            Ok(d) => d,
            Err(err) => {
                checks.push(CheckEntry::failed("coupling_bijection", err));
                return checks;
            }
        }
    } else {
        clean
    };

    checks.push(check_bijection(dilation.coupling()));
    checks.push(check_cocycle(&dilation, o.seed));
    checks.push(check_group(&dilation, o.seed));
    checks.push(check_sector_permutation(&dilation));
    check_markov_semigroup(r, &dilation, o, &mut checks);
    checks.push(check_markov_conditional(r, &dilation, o));
    checks.push(check_markov_homogeneity(&dilation, o));
    checks.push(check_flow_sde(&dilation, o));
    checks.push(check_generator_restriction(r, o.tol_alg));
    checks.push(check_semigroup_extension(r, &o.times, o.tol_exp));
    checks.push(check_semigroup_cp(r, &o.times));
    if n <= MAX_UNITARY_STATES {
        unitary_route_checks(r, &dilation, o.seed, o.tol_alg, &mut checks);
    }
    checks.push(check_density_reweighting(&dilation, o.seed, o.tol_alg));
    checks
}

pub fn quantum_suite(r: &RateMatrix, times: &[f64], seed: u64, tol_alg: f64, tol_exp: f64) -> Vec<CheckEntry> {
    let mut checks = Vec::new();
    checks.push(check_generator_restriction(r, tol_alg));
    checks.push(check_semigroup_extension(r, times, tol_exp));
    checks.push(check_semigroup_cp(r, times));
    if r.n() <= MAX_UNITARY_STATES {
        match Dilation::build_universal_dense(r) {
            Ok(d) => {
                unitary_route_checks(r, &d, seed, tol_alg, &mut checks);
                checks.push(check_density_reweighting(&d, seed, tol_alg));
            }
            Err(err) => checks.push(CheckEntry::failed("dilation_build", err)),
        }
    } else {
        match Dilation::build_universal(r) {
            Ok(d) => checks.push(check_density_reweighting(&d, seed, tol_alg)),
            Err(err) => checks.push(CheckEntry::failed("dilation_build", err)),
        }
    }
    checks
}

