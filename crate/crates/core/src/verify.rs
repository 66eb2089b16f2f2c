//! Seeded property suites. Each property runs over a fixed number of
//! random instances and reports the worst residual against its tolerance.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::channel::{self, Channel, Isometry};
use crate::distortion::{Distortion, DistortionKind};
use crate::ensemble::Ensemble;
use crate::epsolver::{self, EpOpts};
use crate::error::{QrdError, Result};
use crate::fixtures;
use crate::kidecomp::{self, KIBlock, KIDecomposition, KIOptions};
use crate::linalg::{self, cr, CMatrix};
use crate::optim;
use crate::qcore::{self, DensityOp, DimLayout, PureState};
use crate::rateregion;
use crate::rdsolver::{self, ReaEvaluator, SolverOpts};

/// Instances per property unless the property says otherwise.
pub const INSTANCES: usize = 200;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Suite {
    Entropy,
    Channels,
    Ki,
    Rdea,
    Ep,
    Region,
    All,
}

impl FromStr for Suite {
    type Err = QrdError;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "entropy" => Suite::Entropy,
            "channels" => Suite::Channels,
            "ki" => Suite::Ki,
            "rdea" => Suite::Rdea,
            "ep" => Suite::Ep,
            "region" => Suite::Region,
            "all" => Suite::All,
            _ => {
                return Err(QrdError::InvalidArgument(format!(
                    "unknown suite '{s}' (entropy, channels, ki, rdea, ep, region, all)"
                )))
            }
        })
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct PropertyResult {
    pub suite: String,
    pub name: String,
    pub instances: usize,
    pub failures: usize,
    pub max_residual: f64,
    pub tol: f64,
    pub first_failure: Option<String>,
}

impl PropertyResult {
    pub fn passed(&self) -> bool {
        self.failures == 0
    }
}

impl fmt::Display for PropertyResult {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} {}/{} instances={} failures={} max_residual={:.3e} tol={:.0e}",
            if self.passed() { "PASS" } else { "FAIL" },
            self.suite,
            self.name,
            self.instances,
            self.failures,
            self.max_residual,
            self.tol
        )?;
        if let Some(msg) = &self.first_failure {
            write!(f, " first_failure=\"{msg}\"")?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct Report {
    pub seed: u64,
    pub results: Vec<PropertyResult>,
}

impl Report {
    pub fn passed(&self) -> bool {
        self.results.iter().all(PropertyResult::passed)
    }
}

impl fmt::Display for Report {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "# seed={}", self.seed)?;
        for r in &self.results {
            writeln!(f, "{r}")?;
        }
        Ok(())
    }
}

pub fn run_suite(suite: Suite, seed: u64) -> Report {
    let mut results = Vec::new();
    let wants = |s: Suite| suite == Suite::All || suite == s;
    if wants(Suite::Entropy) {
        results.extend(entropy_suite(seed));
    }
    if wants(Suite::Channels) {
        results.extend(channel_suite(seed));
    }
    if wants(Suite::Ki) {
        results.extend(ki_suite(seed));
    }
    if wants(Suite::Rdea) {
        results.extend(rdea_suite(seed));
    }
    if wants(Suite::Ep) {
        results.extend(ep_suite(seed));
    }
    if wants(Suite::Region) {
        results.extend(region_suite(seed));
    }
    Report { seed, results }
}

/// FNV-1a, to give each property its own stream.
fn name_hash(s: &str) -> u64 {
    s.bytes().fold(0xcbf29ce484222325, |h, b| (h ^ b as u64).wrapping_mul(0x100000001b3))
}

/// Runs `check` on `n` instances; `check` returns the residual, which
/// passes when it is at most `tol`. Errors count as failures.
fn property(
    suite: &str,
    name: &str,
    n: usize,
    tol: f64,
    seed: u64,
    mut check: impl FnMut(&mut ChaCha8Rng) -> Result<f64>,
) -> PropertyResult {
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_mul(0x9E3779B97F4A7C15) ^ name_hash(name));
    let mut failures = 0;
    let mut max_residual: f64 = 0.0;
    let mut first_failure = None;
    for i in 0..n {
        match check(&mut rng) {
            Ok(r) => {
                max_residual = max_residual.max(r);
                if !(r <= tol) {
                    failures += 1;
                    first_failure.get_or_insert_with(|| format!("instance {i}: residual {r:.3e}"));
                }
            }
            Err(e) => {
                failures += 1;
                max_residual = f64::INFINITY;
                first_failure.get_or_insert_with(|| format!("instance {i}: {e}"));
            }
        }
    }
    PropertyResult {
        suite: suite.into(),
        name: name.into(),
        instances: n,
        failures,
        max_residual,
        tol,
        first_failure,
    }
}

fn layout(parts: &[(&str, usize)]) -> Result<DimLayout> {
    DimLayout::new(parts.iter().map(|&(l, d)| (l.to_string(), d)))
}

/// Exactly CPTP channel from a Haar isometry with a random environment.
pub fn random_channel(din: usize, dout: usize, rng: &mut ChaCha8Rng) -> Channel {
    let env = rng.random_range(din.div_ceil(dout)..=din * dout);
    Channel::from_isometry(&Isometry {
        matrix: linalg::random_isometry(dout * env, din, rng),
        dim_in: din,
        dim_out: dout,
        dim_env: env,
    })
}

/// Qubit ensemble of `n` random states of random rank.
pub fn random_qubit_ensemble(n: usize, rng: &mut ChaCha8Rng) -> Result<Ensemble> {
    let mut probs: Vec<f64> = (0..n).map(|_| rng.random_range(0.1..1.0)).collect();
    let total: f64 = probs.iter().sum();
    probs.iter_mut().for_each(|p| *p /= total);
    let states: Vec<CMatrix> = (0..n)
        .map(|_| {
            let rank = rng.random_range(1..=2);
            linalg::random_density(2, rank, rng)
        })
        .collect();
    Ensemble::from_mixed(&probs, &states)
}

fn entropy_suite(seed: u64) -> Vec<PropertyResult> {
    const S: &str = "entropy";
    vec![
        property(S, "subadditivity", INSTANCES, 1e-8, seed, |rng| {
            let (da, db) = (rng.random_range(2..=3), rng.random_range(2..=3));
            let rank = rng.random_range(1..=da * db);
            let rho = DensityOp::new(linalg::random_density(da * db, rank, rng), layout(&[("A", da), ("B", db)])?)?;
            let excess = qcore::vn_entropy(&rho) - qcore::entropy_of(&rho, &["A"])? - qcore::entropy_of(&rho, &["B"])?;
            Ok(excess.max(0.0))
        }),
        property(S, "fannes", INSTANCES, 1e-10, seed, |rng| {
            let d = rng.random_range(2..=4);
            let l = layout(&[("A", d)])?;
            let rho = linalg::random_density(d, rng.random_range(1..=d), rng);
            let other = linalg::random_density(d, d, rng);
            let mut t: f64 = rng.random_range(0.0..1.0);
            loop {
                let sigma = &rho * cr(1.0 - t) + &other * cr(t);
                let (a, b) = (DensityOp::new(rho.clone(), l.clone())?, DensityOp::new(sigma, l.clone())?);
                let eps = qcore::trace_distance(&a, &b)?;
                if eps <= 1.0 - 1.0 / d as f64 {
                    let gap = (qcore::vn_entropy(&a) - qcore::vn_entropy(&b)).abs();
                    return Ok((gap - qcore::fannes_bound(eps, d)?).max(0.0));
                }
                t *= 0.5;
            }
        }),
        property(S, "data_processing", INSTANCES, 1e-8, seed, |rng| {
            let (da, dr) = (2, rng.random_range(2..=3));
            let rank = rng.random_range(1..=da * dr);
            let rho = DensityOp::new(linalg::random_density(da * dr, rank, rng), layout(&[("A", da), ("R", dr)])?)?;
            let before = qcore::mutual_information(&rho, &["A"], &["R"])?;
            let na = random_channel(da, rng.random_range(2..=3), rng);
            let nr = random_channel(dr, 2, rng);
            let out = na.apply(&rho, &["A"], "B")?;
            let out = nr.apply(&out, &["R"], "Rp")?;
            let after = qcore::mutual_information(&out, &["B"], &["Rp"])?;
            Ok((after - before).max(0.0))
        }),
        property(S, "superadditivity", INSTANCES, 1e-8, seed, |rng| {
            let l1 = layout(&[("A1", 2), ("R1", 2)])?;
            let l2 = layout(&[("A2", 2), ("R2", 2)])?;
            let p1 = PureState::new(linalg::random_pure(4, rng), l1)?;
            let p2 = PureState::new(linalg::random_pure(4, rng), l2)?;
            let joint = DensityOp::from_pure(&p1.tensor(&p2)?);
            let n = random_channel(4, 4, rng);
            let out = n.apply(&joint, &["A1", "A2"], "B")?;
            let out = out.with_layout(layout(&[("B1", 2), ("B2", 2), ("R1", 2), ("R2", 2)])?)?;
            let whole = qcore::mutual_information(&out, &["B1", "B2"], &["R1", "R2"])?;
            let parts = qcore::mutual_information_of(&out, &["B1"], &["R1"])? + qcore::mutual_information_of(&out, &["B2"], &["R2"])?;
            Ok((parts - whole).max(0.0))
        }),
    ]
}

fn channel_suite(seed: u64) -> Vec<PropertyResult> {
    const S: &str = "channels";
    vec![
        property(S, "choi_kraus_stinespring_round_trip", INSTANCES, 1e-8, seed, |rng| {
            let (din, dout) = (rng.random_range(2..=3), rng.random_range(2..=3));
            let ch = Channel::new(optim::random_choi(din, dout, rng), din, dout)?;
            let from_kraus = Channel::from_kraus(&ch.kraus());
            let from_iso = Channel::from_isometry(&ch.stinespring());
            let rho = linalg::random_density(din, din, rng);
            let via_kraus = ch.kraus().iter().fold(CMatrix::zeros(dout, dout), |acc, k| acc + k * &rho * k.adjoint());
            Ok((from_kraus.choi() - ch.choi())
                .norm()
                .max((from_iso.choi() - ch.choi()).norm())
                .max((via_kraus - ch.apply_matrix(&rho)).norm()))
        }),
        property(S, "projection_idempotence", INSTANCES, 1e-10, seed, |rng| {
            let (din, dout) = (rng.random_range(2..=3), rng.random_range(2..=3));
            let m = linalg::random_hermitian(din * dout, rng);
            let p1 = channel::project_cptp(&m, din, dout)?;
            let p2 = channel::project_cptp(p1.choi(), din, dout)?;
            Ok((p2.choi() - p1.choi()).norm())
        }),
        property(S, "apply_preserves_states", INSTANCES, 1e-10, seed, |rng| {
            let (din, dout, dr) = (rng.random_range(2..=3), rng.random_range(2..=3), 2);
            let ch = random_channel(din, dout, rng);
            let rho = DensityOp::new(linalg::random_density(din * dr, 3, rng), layout(&[("A", din), ("R", dr)])?)?;
            let out = ch.apply(&rho, &["A"], "B")?;
            let eig = linalg::eigvalsh(out.matrix());
            let neg = (-eig.last().copied().unwrap_or(0.0)).max(0.0);
            Ok(neg.max((linalg::trace(out.matrix()).re - 1.0).abs()))
        }),
    ]
}

/// Block data of a random ensemble with prescribed structure.
struct Planted {
    ensemble: Ensemble,
    dims: Vec<(usize, usize)>,
    blind_rate: f64,
}

/// `ρ_x = U (⊕_c p_{c|x} ω_c ⊗ ρ_{cx}) U†` with generic block data, so the
/// planted blocks are the decomposition.
fn planted_ensemble(rng: &mut ChaCha8Rng) -> Result<Planted> {
    let nblocks = rng.random_range(1..=2);
    let nx = 3;
    let dims: Vec<(usize, usize)> = (0..nblocks).map(|_| (rng.random_range(1..=2), rng.random_range(1..=2))).collect();
    let da: usize = dims.iter().map(|(q, n)| q * n).sum();
    let u = linalg::haar_unitary(da, rng);
    let omegas: Vec<CMatrix> = dims.iter().map(|&(_, n)| linalg::random_density(n, n, rng)).collect();
    let mut probs: Vec<f64> = (0..nx).map(|_| rng.random_range(0.2..1.0)).collect();
    let total: f64 = probs.iter().sum();
    probs.iter_mut().for_each(|p| *p /= total);
    let mut states = Vec::new();
    let qmax = dims.iter().map(|d| d.0).max().unwrap_or(1);
    let mut cq = CMatrix::zeros(nblocks * qmax, nblocks * qmax);
    for &px in &probs {
        let mut cond: Vec<f64> = (0..nblocks).map(|_| rng.random_range(0.1..1.0)).collect();
        let s: f64 = cond.iter().sum();
        cond.iter_mut().for_each(|p| *p /= s);
        let mut m = CMatrix::zeros(da, da);
        let mut off = 0;
        for (c, &(q, n)) in dims.iter().enumerate() {
            let sigma = if q == 1 { linalg::identity(1) } else { linalg::random_density(q, rng.random_range(1..=2), rng) };
            let blk = linalg::kron(&omegas[c], &sigma) * cr(cond[c]);
            m.view_mut((off, off), (q * n, q * n)).copy_from(&blk);
            let scaled = &sigma * cr(px * cond[c]);
            let mut view = cq.view_mut((c * qmax, c * qmax), (q, q));
            view += scaled;
            off += q * n;
        }
        states.push(&u * m * u.adjoint());
    }
    let blind_rate = qcore::entropy_of_spectrum(&linalg::eigvalsh(&cq));
    Ok(Planted {
        ensemble: Ensemble::from_mixed(&probs, &states)?,
        dims,
        blind_rate,
    })
}

/// One block holding the whole space: violates irreducibility whenever the
/// true structure is non-trivial.
fn merged(e: &Ensemble) -> KIDecomposition {
    KIDecomposition {
        dim_a: e.dim_a(),
        blocks: vec![KIBlock {
            dim_q: e.dim_a(),
            dim_n: 1,
            omega: linalg::identity(1),
            probs: vec![1.0; e.len()],
            states: e.items().iter().map(|it| it.rho.clone()).collect(),
            basis: linalg::identity(e.dim_a()),
        }],
        residual: 0.0,
    }
}

/// Splits the redundant factor of block `c` along the eigenbasis of `ω_c`
/// into `dim_n` blocks: reconstruction still holds, but the pieces are
/// intertwined.
fn split_redundant(d: &KIDecomposition, c: usize) -> KIDecomposition {
    let b = &d.blocks[c];
    let (w, v) = linalg::eigh(&b.omega);
    let mut blocks: Vec<KIBlock> = d.blocks.iter().enumerate().filter(|&(i, _)| i != c).map(|(_, b)| b.clone()).collect();
    for (k, &wk) in w.iter().enumerate() {
        let mut basis = CMatrix::zeros(b.basis.nrows(), b.dim_q);
        for q in 0..b.dim_q {
            for n in 0..b.dim_n {
                basis.column_mut(q).axpy(v[(n, k)], &b.basis.column(n * b.dim_q + q), cr(1.0));
            }
        }
        blocks.push(KIBlock {
            dim_q: b.dim_q,
            dim_n: 1,
            omega: linalg::identity(1),
            probs: b.probs.iter().map(|p| p * wk).collect(),
            states: b.states.clone(),
            basis,
        });
    }
    KIDecomposition {
        dim_a: d.dim_a,
        blocks,
        residual: d.residual,
    }
}

fn ki_suite(seed: u64) -> Vec<PropertyResult> {
    const S: &str = "ki";
    let opts = |s: u64| KIOptions { tol: 1e-9, seed: s };
    let mut out = vec![
        property(S, "planted_structure", INSTANCES, 1e-7, seed, |rng| {
            let p = planted_ensemble(rng)?;
            let d = kidecomp::ki_decompose(&p.ensemble, opts(rng.random()))?;
            let report = kidecomp::verify_ki(&d, &p.ensemble);
            let mut got: Vec<(usize, usize)> = d.blocks.iter().map(|b| (b.dim_q, b.dim_n)).collect();
            let mut want = p.dims.clone();
            got.sort();
            want.sort();
            if got != want || !report.passed {
                return Ok(f64::INFINITY);
            }
            Ok((kidecomp::blind_rate_of(&d, &p.ensemble.probs()) - p.blind_rate).abs())
        }),
        property(S, "merged_blocks_rejected", INSTANCES, 0.0, seed, |rng| {
            let p = planted_ensemble(rng)?;
            let trivial = p.dims.len() == 1 && p.dims[0].1 == 1;
            let report = kidecomp::verify_ki(&merged(&p.ensemble), &p.ensemble);
            let wrong = if trivial { !report.passed } else { report.passed };
            Ok(if wrong { 1.0 } else { 0.0 })
        }),
        property(S, "split_redundancy_rejected", INSTANCES, 0.0, seed, |rng| {
            let p = planted_ensemble(rng)?;
            let d = kidecomp::ki_decompose(&p.ensemble, opts(rng.random()))?;
            let Some(c) = d.blocks.iter().position(|b| b.dim_n > 1) else {
                return Ok(0.0);
            };
            let report = kidecomp::verify_ki(&split_redundant(&d, c), &p.ensemble);
            let ok = report.reconstruction_residual < 1e-7 && !report.intertwiners.is_empty() && !report.passed;
            Ok(if ok { 0.0 } else { 1.0 })
        }),
        property(S, "preserving_channel_fixes_states", INSTANCES, 1e-8, seed, |rng| {
            let p = planted_ensemble(rng)?;
            let d = kidecomp::ki_decompose(&p.ensemble, opts(rng.random()))?;
            let lam = kidecomp::preserving_channel(&d, rng.random());
            Ok(p.ensemble
                .items()
                .iter()
                .map(|it| (lam.apply_matrix(&it.rho) - &it.rho).norm())
                .fold(0.0, f64::max))
        }),
    ];
    let names = fixtures::BASE_NAMES;
    let mut it = names.iter();
    out.push(property(S, "fixtures", names.len(), 1e-9, seed, |_| {
        let e = fixtures::by_name(it.next().expect("one call per fixture")).expect("fixture");
        let d = kidecomp::ki_decompose(&e, KIOptions::default())?;
        if !kidecomp::verify_ki(&d, &e).passed {
            return Ok(f64::INFINITY);
        }
        let visible = kidecomp::blind_rate(&e.visible())?;
        let redundant = kidecomp::blind_rate(&e.with_redundant_factor(&fixtures::omega())?)?;
        let base = kidecomp::blind_rate_of(&d, &e.probs());
        Ok((visible - base).abs().max((redundant - base).abs()))
    }));
    out
}

fn quick_solver() -> SolverOpts {
    SolverOpts {
        restarts: 2,
        ..SolverOpts::default()
    }
}

fn rdea_suite(seed: u64) -> Vec<PropertyResult> {
    const S: &str = "rdea";
    let fidelity = |e: &Ensemble| Distortion::for_ensemble(e, DistortionKind::Fidelity, e.dim_a());
    vec![
        property(S, "gradient_matches_finite_differences", INSTANCES, 1e-4, seed, |rng| {
            let e = random_qubit_ensemble(rng.random_range(2..=3), rng)?;
            let dist = fidelity(&e)?;
            let eval = ReaEvaluator::new(&e, &dist);
            let mut j = optim::random_choi(2, 2, rng);
            // Interior point: full-rank Choi.
            j = &j * cr(0.9) + linalg::identity(4) * cr(0.05);
            let h = linalg::random_hermitian(4, rng);
            let h = &h / cr(h.norm());
            let step = 1e-5;
            let mut worst: f64 = 0.0;
            for f in [&|m: &CMatrix| eval.objective(m), &|m: &CMatrix| eval.constraint(m)] as [&dyn Fn(&CMatrix) -> (f64, CMatrix); 2] {
                let (_, g) = f(&j);
                let analytic = linalg::inner(&g, &h);
                let fd = (f(&(&j + &h * cr(step))).0 - f(&(&j - &h * cr(step))).0) / (2.0 * step);
                worst = worst.max((fd - analytic).abs() / analytic.abs().max(1e-3));
            }
            Ok(worst)
        }),
        property(S, "objective_paths_agree", INSTANCES, 1e-9, seed, |rng| {
            let e = random_qubit_ensemble(rng.random_range(2..=3), rng)?;
            let dist = fidelity(&e)?;
            let eval = ReaEvaluator::new(&e, &dist);
            let n = random_channel(2, 2, rng);
            Ok((eval.objective(n.choi()).0 - rdsolver::rea_objective(&e, &n)?).abs())
        }),
        property(S, "objective_convex_in_channel", INSTANCES, 1e-8, seed, |rng| {
            let e = random_qubit_ensemble(2, rng)?;
            let (n1, n2) = (random_channel(2, 2, rng), random_channel(2, 2, rng));
            let t: f64 = rng.random_range(0.0..1.0);
            let mixed = rdsolver::rea_objective(&e, &n1.mix(t, &n2)?)?;
            let chord = t * rdsolver::rea_objective(&e, &n1)? + (1.0 - t) * rdsolver::rea_objective(&e, &n2)?;
            Ok((mixed - chord).max(0.0))
        }),
        property(S, "monotone_and_feasible", 40, 1e-3, seed, |rng| {
            let e = random_qubit_ensemble(2, rng)?;
            let dist = fidelity(&e)?;
            let lo = rdsolver::rea_point(&e, 0.05, &dist, &quick_solver())?;
            let hi = rdsolver::rea_point(&e, 0.2, &dist, &quick_solver())?;
            let feas = (lo.distortion - 0.05 - 1e-6).max(hi.distortion - 0.2 - 1e-6).max(0.0);
            Ok((hi.rate - lo.rate).max(0.0).max(feas * 1e3))
        }),
        property(S, "redundant_part_invariance", 8, 0.02, seed, |rng| {
            let e = random_qubit_ensemble(2, rng)?;
            let omega = linalg::random_density(2, 2, rng);
            let big = e.with_redundant_factor(&omega)?;
            let d = 0.1;
            let small = rdsolver::rea_point(&e, d, &fidelity(&e)?, &quick_solver())?;
            let large = rdsolver::rea_point(&big, d, &fidelity(&big)?, &quick_solver())?;
            Ok((small.rate - large.rate).abs())
        }),
    ]
}

fn ep_suite(seed: u64) -> Vec<PropertyResult> {
    const S: &str = "ep";
    let quick = EpOpts {
        solver: SolverOpts {
            restarts: 3,
            max_iters: 1500,
            ..SolverOpts::default()
        },
        env_dim: None,
    };
    let two_qubits = |rng: &mut ChaCha8Rng| -> Result<DensityOp> {
        let rank = rng.random_range(1..=4);
        DensityOp::new(linalg::random_density(4, rank, rng), layout(&[("A", 2), ("R", 2)])?)
    };
    vec![
        property(S, "lower_below_upper", 60, 1e-9, seed, |rng| {
            let rho = two_qubits(rng)?;
            let est = epsolver::ep(&rho, &["A"], &["R"], &quick)?;
            Ok((est.lower - est.upper).max(0.0))
        }),
        property(S, "local_channel_monotone", 30, 0.02, seed, |rng| {
            let rho = two_qubits(rng)?;
            let before = epsolver::ep(&rho, &["A"], &["R"], &quick)?;
            let after_state = random_channel(2, 2, rng).apply(&rho, &["A"], "A")?;
            let after = epsolver::ep(&after_state, &["A"], &["R"], &quick)?;
            Ok((after.upper - before.upper).max(0.0))
        }),
        property(S, "assisted_below_unassisted", 6, 0.02, seed, |rng| {
            let e = random_qubit_ensemble(2, rng)?;
            let dist = Distortion::for_ensemble(&e, DistortionKind::Fidelity, 2)?;
            let rea = rdsolver::rea_point(&e, 0.1, &dist, &quick_solver())?;
            let ua = epsolver::unassisted_point(&e, 0.1, &dist, 1, &quick)?;
            Ok((rea.rate - ua.rate).max(0.0))
        }),
    ]
}

fn region_suite(seed: u64) -> Vec<PropertyResult> {
    const S: &str = "region";
    vec![
        property(S, "trace_map_gives_assisted_objective", INSTANCES, 1e-9, seed, |rng| {
            let e = random_qubit_ensemble(2, rng)?;
            let n = random_channel(2, 2, rng);
            let de = n.stinespring().dim_env;
            let p = rateregion::region_corner(&e, &n, &rateregion::keep_factors(&[de], &[false]), 0.0, "trace")?;
            Ok((p.r_min - rdsolver::rea_objective(&e, &n)?).abs())
        }),
        property(S, "corner_sanity", INSTANCES, 1e-9, seed, |rng| {
            let e = random_qubit_ensemble(2, rng)?;
            let n = random_channel(2, 2, rng);
            let de = n.stinespring().dim_env;
            let lam = random_channel(de, rng.random_range(1..=de), rng);
            let p = rateregion::region_corner(&e, &n, &lam, 0.0, "random")?;
            let bar = e.average_aj();
            let sb = qcore::entropy_of_matrix(&n.apply_matrix(&bar))?;
            let seb = qcore::entropy_of_matrix(&n.complementary().then(&lam)?.apply_matrix(&bar))?;
            Ok((-p.r_min).max(-p.sum_min).max(sb - seb - p.sum_min).max(0.0))
        }),
        property(S, "pareto_front_monotone", 3, 0.0, seed, |rng| {
            let e = random_qubit_ensemble(2, rng)?;
            let dist = Distortion::for_ensemble(&e, DistortionKind::Fidelity, 2)?;
            let opts = rateregion::RegionOpts {
                random_lambdas: 10,
                seed: rng.random(),
                solver: quick_solver(),
                unassisted: None,
            };
            let curve = rateregion::region_curve(&e, 0.1, &dist, &opts)?;
            let bad = curve.points.windows(2).filter(|w| w[0].r_min > w[1].r_min || w[0].sum_min < w[1].sum_min).count();
            Ok(bad as f64)
        }),
    ]
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn suite_names_parse() {
        for s in ["entropy", "channels", "ki", "rdea", "ep", "region", "all"] {
            assert!(s.parse::<Suite>().is_ok());
        }
        assert!("bogus".parse::<Suite>().is_err());
    }

    #[test]
    fn property_counts_failures_and_errors() {
        let mut k = 0;
        let r = property("t", "p", 4, 0.5, 1, |_| {
            k += 1;
            match k {
                1 => Ok(0.1),
                2 => Ok(0.9),
                3 => Err(QrdError::InvalidArgument("x".into())),
                _ => Ok(0.0),
            }
        });
        assert_eq!(r.failures, 2);
        assert!(r.first_failure.unwrap().contains("instance 1"));
    }

    #[test]
    fn planted_split_is_detected() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..20 {
            let p = planted_ensemble(&mut rng).unwrap();
            let d = kidecomp::ki_decompose(&p.ensemble, KIOptions::default()).unwrap();
            if let Some(c) = d.blocks.iter().position(|b| b.dim_n > 1) {
                let r = kidecomp::verify_ki(&split_redundant(&d, c), &p.ensemble);
                assert!(r.reconstruction_residual < 1e-7, "{r:?}");
                assert!(!r.intertwiners.is_empty());
            }
        }
    }
}
