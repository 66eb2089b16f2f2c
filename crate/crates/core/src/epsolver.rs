//! Entanglement of purification and the unassisted rate-distortion bounds
//! `g_k(D)` for blind and visible sources.
//!
//! For the unassisted problem the encoder `N: AJ → B` and the purifying
//! channel `Λ` on its environment are optimized jointly as one channel
//! `M: AJ → B ⊗ F` with `Tr_F ∘ M = N`. Every such `M` factors through the
//! Stinespring environment of `N`, so `min_M S(M(ρ̄))` equals
//! `min_N E_p(B : XX'R)`.

use serde::Serialize;

use crate::channel::Channel;
use crate::distortion::Distortion;
use crate::ensemble::{Ensemble, LABEL_A, LABEL_J, LABEL_R, LABEL_X, LABEL_XP};
use crate::error::{QrdError, Result};
use crate::kidecomp;
use crate::linalg::{self, cr, CMatrix};
use crate::optim::{self, ChannelMap, EvalFn, Problem};
use crate::qcore::{self, DensityOp, DimLayout};
use crate::rdsolver::{self, RDPoint, SolverOpts};

/// Unassisted problems are never solved below this distortion level.
pub const UNASSISTED_MIN_D: f64 = 1e-3;
/// Largest Choi dimension `dimIn · dimB · dimF` of a joint channel.
pub const MAX_CHOI_DIM: usize = 64;
pub const DEFAULT_EP_RESTARTS: usize = 20;
pub const DEFAULT_BLIND_TOL: f64 = 0.05;

#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct EpOpts {
    pub solver: SolverOpts,
    /// Output dimension of the purifying channel; `None` keeps the
    /// environment dimension (subject to [`MAX_CHOI_DIM`]).
    pub env_dim: Option<usize>,
}

impl Default for EpOpts {
    fn default() -> Self {
        Self {
            solver: SolverOpts {
                restarts: DEFAULT_EP_RESTARTS,
                ..SolverOpts::default()
            },
            env_dim: None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct EpEstimate {
    /// Best value found; an estimate, not a certified optimum.
    pub upper: f64,
    /// `max(½ I(A:R), 0)`.
    pub lower: f64,
    /// Purifying channel attaining `upper`.
    pub channel: Channel,
    pub restarts_used: usize,
    pub restart_spread: f64,
}

/// `E_p(A:R)` estimate of the reduced state of `rho` on `part_a ∪ part_r`.
pub fn ep(rho: &DensityOp, part_a: &[&str], part_r: &[&str], opts: &EpOpts) -> Result<EpEstimate> {
    opts.solver.validate()?;
    if part_a.is_empty() || part_r.is_empty() {
        return Err(QrdError::InvalidArgument("empty side of bipartition".into()));
    }
    let order: Vec<&str> = part_a.iter().chain(part_r).copied().collect();
    let ar = qcore::reduce_ordered(rho, &order)?;
    let da = ar.layout().dim_of_all(part_a)?;
    let dr = ar.layout().dim_of_all(part_r)?;
    let flat = ar.with_layout(DimLayout::new([("a", da), ("r", dr)])?)?;
    let sa = qcore::entropy_of(&flat, &["a"])?;
    let sr = qcore::entropy_of(&flat, &["r"])?;
    let lower = (0.5 * (sa + sr - qcore::vn_entropy(&flat))).max(0.0);

    // Purifier P of ρ^{AR}; the purifying channel acts on P with A kept.
    let (vals, vecs) = linalg::eigh(flat.matrix());
    let dp = vals.iter().filter(|&&l| l > qcore::EIG_CLIP).count().max(1);
    let mut sigma = CMatrix::zeros(dp * da, dp * da);
    for k in 0..dp {
        for kp in 0..dp {
            let w = (vals[k].max(0.0) * vals[kp].max(0.0)).sqrt();
            for a in 0..da {
                for ap in 0..da {
                    let s: num_complex::Complex64 = (0..dr)
                        .map(|r| vecs[(a * dr + r, k)] * vecs[(ap * dr + r, kp)].conj())
                        .sum();
                    sigma[(k * da + a, kp * da + ap)] = s * cr(w);
                }
            }
        }
    }
    let tr = linalg::trace(&sigma).re;
    sigma /= cr(tr);
    let dout = opts.env_dim.unwrap_or(dp).max(1);
    let map = ChannelMap::new(&sigma, dp, da, dout, dout);
    let objective = |j: &CMatrix| {
        let (s, g) = optim::entropy_and_grad(&map.apply(j));
        (s, map.adjoint(&g))
    };
    let mut ket0 = CMatrix::zeros(dout, dout);
    ket0[(0, 0)] = cr(1.0);
    let mut starts = vec![rdsolver::replacer_choi(&ket0, dp)];
    if dout >= dp {
        starts.push(rdsolver::embedding_choi(dp, 1, dout, 1));
    }
    let problem = Problem {
        din: dp,
        dout,
        objective: &objective,
        constraint: None,
        bound: 0.0,
        safe: None,
        starts,
        convex: false,
    };
    let out = optim::minimize(&problem, &opts.solver);
    let spread = out.spread();
    let restarts_used = out.values.len();
    Ok(EpEstimate {
        upper: out.best.objective.max(0.0),
        lower,
        channel: rdsolver::to_channel(out.best.choi, dp, dout),
        restarts_used,
        restart_spread: spread,
    })
}

/// Which side the output `B` is measured against.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum EpTarget {
    /// `E_p(B : X)`.
    X,
    /// `E_p(B : XX'R)`.
    Xxr,
}

impl std::str::FromStr for EpTarget {
    type Err = QrdError;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "x" => Ok(Self::X),
            "xxr" => Ok(Self::Xxr),
            _ => Err(QrdError::Parse(format!("unknown target `{s}` (expected x or xxr)"))),
        }
    }
}

/// `E_p` of the encoder output `(N ⊗ id)(ψ)` against `target`.
pub fn ep_of_channel(e: &Ensemble, n: &Channel, target: EpTarget, opts: &EpOpts) -> Result<EpEstimate> {
    let psi = DensityOp::from_pure(&e.purified_source().psi);
    let tau = n.apply(&psi, &[LABEL_A, LABEL_J], "B")?;
    match target {
        EpTarget::X => ep(&tau, &["B"], &[LABEL_X], opts),
        EpTarget::Xxr => ep(&tau, &["B"], &[LABEL_X, LABEL_XP, LABEL_R], opts),
    }
}

/// Row-major index of `digits` (each `< base`) in `base^k`.
fn reindex(mut a: usize, from: usize, to: usize, k: usize) -> usize {
    let mut out = 0;
    let mut scale = 1;
    for _ in 0..k {
        out += (a % from) * scale;
        a /= from;
        scale *= to;
    }
    out
}

/// Per-copy embedding `A^k ↪ B^k`, `J` discarded, `|0⟩_F` emitted.
fn embedding_choi_k(da: usize, dj: usize, db: usize, k: usize, df: usize) -> CMatrix {
    let (dak, djk, dbk) = (da.pow(k as u32), dj.pow(k as u32), db.pow(k as u32));
    let din = dak * djk;
    let dout = dbk * df;
    let mut m = CMatrix::zeros(din * dout, din * dout);
    for j in 0..djk {
        for a in 0..dak {
            for ap in 0..dak {
                let r = (a * djk + j) * dout + reindex(a, da, db, k) * df;
                let c = (ap * djk + j) * dout + reindex(ap, da, db, k) * df;
                m[(r, c)] = cr(1.0);
            }
        }
    }
    m
}

/// `ρ` on `A^k` embedded copy-wise into `B^k`.
fn embed_k(rho: &CMatrix, da: usize, db: usize, k: usize) -> CMatrix {
    let n = db.pow(k as u32);
    let mut m = CMatrix::zeros(n, n);
    for a in 0..rho.nrows() {
        for ap in 0..rho.ncols() {
            m[(reindex(a, da, db, k), reindex(ap, da, db, k))] = rho[(a, ap)];
        }
    }
    m
}

/// Distortion of an output on `B^k ⊗ X^k` (`X^k` lexicographic), averaged
/// over copies for `k = 2`.
fn copy_constraint<'a>(map: &'a ChannelMap, dist: &'a Distortion, k: usize) -> impl Fn(&CMatrix) -> (f64, CMatrix) + Sync + 'a {
    let (db, nx) = (dist.dim_b(), dist.dim_x());
    move |j: &CMatrix| {
        let t = map.apply(j);
        if k == 1 {
            return (dist.delta_matrix(&t), map.adjoint(&dist.gradient_matrix(&t)));
        }
        let dims = [db, db, nx, nx];
        let mut v = 0.0;
        let mut g = CMatrix::zeros(t.nrows(), t.ncols());
        for i in 0..2 {
            let keep = [i, 2 + i];
            let m = linalg::ptrace_keep(&t, &dims, &keep);
            v += 0.5 * dist.delta_matrix(&m);
            g += linalg::ptrace_keep_adjoint(&dist.gradient_matrix(&m), &dims, &keep) * cr(0.5);
        }
        (v, map.adjoint(&g))
    }
}

fn check_k(k: usize) -> Result<()> {
    if k == 1 || k == 2 {
        Ok(())
    } else {
        Err(QrdError::InvalidArgument(format!("k = {k} is not supported (use 1 or 2)")))
    }
}

fn check_base(e: &Ensemble, dist: &Distortion) -> Result<()> {
    if e.copies() != 1 {
        return Err(QrdError::InvalidArgument("pass the single-copy ensemble together with k".into()));
    }
    if dist.dim_x() != e.len() || dist.dim_b() < e.dim_a() {
        return Err(QrdError::DimensionMismatch(format!(
            "distortion on B={} X={} does not fit an ensemble with dimA={} and {} letters",
            dist.dim_b(),
            dist.dim_x(),
            e.dim_a(),
            e.len()
        )));
    }
    Ok(())
}

fn f_dim(din: usize, dout_b: usize, env_dim: Option<usize>) -> usize {
    let natural = env_dim.unwrap_or(din * dout_b).max(1);
    natural.min((MAX_CHOI_DIM / (din * dout_b)).max(1))
}

struct Joint {
    din: usize,
    dbk: usize,
    df: usize,
    avg: CMatrix,
    cq: CMatrix,
    safe: CMatrix,
    starts: Vec<CMatrix>,
}

/// Joint minimization of `S(M(avg))` subject to the copy-averaged
/// distortion of `Tr_F M(cq)`.
fn solve_joint(j: Joint, nx_k: usize, d: f64, dist: &Distortion, k: usize, opts: &SolverOpts) -> optim::Outcome {
    let dout = j.dbk * j.df;
    let obj_map = ChannelMap::new(&j.avg, j.din, 1, dout, dout);
    let dist_map = ChannelMap::new(&j.cq, j.din, nx_k, dout, j.dbk);
    let objective = |m: &CMatrix| {
        let (s, g) = optim::entropy_and_grad(&obj_map.apply(m));
        (s, obj_map.adjoint(&g))
    };
    let constraint = copy_constraint(&dist_map, dist, k);
    let obj_ref: &EvalFn = &objective;
    let cons_ref: &EvalFn = &constraint;
    let problem = Problem {
        din: j.din,
        dout,
        objective: obj_ref,
        constraint: Some(cons_ref),
        bound: d,
        safe: Some(j.safe),
        starts: j.starts,
        convex: false,
    };
    optim::minimize(&problem, opts)
}

fn pure_replacer(din: usize, dout: usize) -> CMatrix {
    let mut ket0 = CMatrix::zeros(dout, dout);
    ket0[(0, 0)] = cr(1.0);
    rdsolver::replacer_choi(&ket0, din)
}

/// Choi of `M₁ ⊗ M₁` with factors reordered from `(A₁J₁)(A₂J₂) → (B₁F₁)(B₂F₂)`
/// to `(A₁A₂J₁J₂) → (B₁B₂F₁F₂)`.
fn doubled(m1: &CMatrix, da: usize, dj: usize, db: usize, df: usize) -> CMatrix {
    let one = Channel::new_unchecked(m1.clone(), da * dj, db * df);
    let two = one.tensor(&one);
    let dims = [da, dj, da, dj, db, df, db, df];
    linalg::permute_factors(two.choi(), &dims, &[0, 2, 1, 3, 4, 6, 5, 7])
}

fn point_from(out: optim::Outcome, d: f64, k: usize, din: usize, dbk: usize, df: usize, lower: impl Fn(&Channel) -> Result<f64>) -> Result<(RDPoint, Channel)> {
    let spread = out.spread() / k as f64;
    let best = out.best;
    let m = rdsolver::to_channel(best.choi, din, dbk * df);
    let n = m.trace_output_tail(dbk)?;
    let lo = lower(&n)? / k as f64;
    let point = RDPoint {
        d,
        rate: (best.objective / k as f64).max(0.0),
        feasibility_residual: m.feasibility_residual().max(best.constraint - d).max(0.0),
        channel: n,
        converged: best.converged,
        iters: best.iters,
        objective_history: best.history.iter().map(|v| v / k as f64).collect(),
        distortion: best.constraint,
        fallback: best.fallback,
        lower: Some(lo.max(0.0)),
        restart_spread: Some(spread),
    };
    Ok((point, m))
}

/// Upper bound `g_k(D) = (1/k) min E_p(B^k : X^k X'^k R^k)` on the
/// unassisted rate. `D` below [`UNASSISTED_MIN_D`] is raised to it; the
/// returned point carries the level actually used. `lower` is
/// `½ I(B : XX'R)` at the returned encoder.
pub fn unassisted_point(e: &Ensemble, d: f64, dist: &Distortion, k: usize, opts: &EpOpts) -> Result<RDPoint> {
    unassisted_encoder(e, d, dist, k, opts).map(|(p, _)| p)
}

/// [`unassisted_point`] together with the optimal joint map
/// `A^k J^k → B^k ⊗ F`, whose `B^k` marginal is the returned channel.
pub fn unassisted_encoder(e: &Ensemble, d: f64, dist: &Distortion, k: usize, opts: &EpOpts) -> Result<(RDPoint, Channel)> {
    rdsolver::check_d(d)?;
    check_k(k)?;
    check_base(e, dist)?;
    opts.solver.validate()?;
    let d = d.max(UNASSISTED_MIN_D);
    let ek = e.tensor_power(k)?;
    let (da, dj, db) = (e.dim_a(), e.dim_j(), dist.dim_b());
    let din = ek.dim_a() * ek.dim_j();
    let dbk = db.pow(k as u32);
    let df = f_dim(din, dbk, opts.env_dim);
    let mut starts = vec![embedding_choi_k(da, dj, db, k, df), pure_replacer(din, dbk * df)];
    if k == 2 && df == 4 {
        let warm = EpOpts { env_dim: Some(2), solver: opts.solver.clone() };
        let p1 = unassisted_joint(e, d, dist, &warm)?;
        starts.insert(0, doubled(&p1, da, dj, db, 2));
    }
    let joint = Joint {
        din,
        dbk,
        df,
        avg: ek.average_aj(),
        cq: ek.cq_state().matrix().clone(),
        safe: embedding_choi_k(da, dj, db, k, df),
        starts,
    };
    let out = solve_joint(joint, ek.len(), d, dist, k, &opts.solver);
    point_from(out, d, k, din, dbk, df, |n| rdsolver::rea_objective(&ek, n))
}

/// Best single-copy joint channel Choi for the given options.
fn unassisted_joint(e: &Ensemble, d: f64, dist: &Distortion, opts: &EpOpts) -> Result<CMatrix> {
    let din = e.dim_a() * e.dim_j();
    let db = dist.dim_b();
    let df = f_dim(din, db, opts.env_dim);
    let joint = Joint {
        din,
        dbk: db,
        df,
        avg: e.average_aj(),
        cq: e.cq_state().matrix().clone(),
        safe: embedding_choi_k(e.dim_a(), e.dim_j(), db, 1, df),
        starts: vec![embedding_choi_k(e.dim_a(), e.dim_j(), db, 1, df), pure_replacer(din, db * df)],
    };
    Ok(solve_joint(joint, e.len(), d, dist, 1, &opts.solver).best.choi)
}

/// Visible-source bound `(1/k) min E_p(B^k : X^k)`, computed over per-letter
/// extensions `σ_x` on `B ⊗ F`: the encoder sees `x` and may prepare any
/// output, so the channel acts on the label register alone. `lower` is
/// `½ I(B : X)` at the returned encoder.
pub fn visible_point(e: &Ensemble, d: f64, dist: &Distortion, k: usize, opts: &EpOpts) -> Result<RDPoint> {
    rdsolver::check_d(d)?;
    check_k(k)?;
    check_base(e, dist)?;
    opts.solver.validate()?;
    let d = d.max(UNASSISTED_MIN_D);
    let ek = e.tensor_power(k)?;
    let (da, db) = (e.dim_a(), dist.dim_b());
    let nx = ek.len();
    let dbk = db.pow(k as u32);
    let df = f_dim(nx, dbk, opts.env_dim.or(Some(dbk)));
    let dout = dbk * df;
    let probs = ek.probs();
    let avg = CMatrix::from_fn(nx, nx, |a, b| if a == b { cr(probs[a]) } else { cr(0.0) });
    let cq = CMatrix::from_fn(nx * nx, nx * nx, |r, c| {
        if r == c && r / nx == r % nx {
            cr(probs[r / nx])
        } else {
            cr(0.0)
        }
    });
    let mut safe = CMatrix::zeros(nx * dout, nx * dout);
    for (x, it) in ek.items().iter().enumerate() {
        let s = embed_k(&it.rho, da, db, k);
        for b in 0..dbk {
            for bp in 0..dbk {
                safe[(x * dout + b * df, x * dout + bp * df)] = s[(b, bp)];
            }
        }
    }
    let joint = Joint {
        din: nx,
        dbk,
        df,
        avg,
        cq,
        safe: safe.clone(),
        starts: vec![safe, pure_replacer(nx, dout)],
    };
    let out = solve_joint(joint, nx, d, dist, k, &opts.solver);
    let lower = |n: &Channel| -> Result<f64> {
        let mut m = CMatrix::zeros(dbk * nx, dbk * nx);
        for x in 0..nx {
            let b = n.block(x, x);
            for o in 0..dbk {
                for op in 0..dbk {
                    m[(o * nx + x, op * nx + x)] = b[(o, op)] * cr(probs[x]);
                }
            }
        }
        let tau = DensityOp::new(linalg::hermitize(&m), DimLayout::new([("B", dbk), (LABEL_X, nx)])?)?;
        Ok(0.5 * qcore::mutual_information(&tau, &["B"], &[LABEL_X])?)
    };
    point_from(out, d, k, nx, dbk, df, lower).map(|(p, _)| p)
}

#[derive(Debug, Clone)]
pub struct BlindLimitReport {
    pub blind_rate: f64,
    pub unassisted: RDPoint,
    pub difference: f64,
    pub tol: f64,
    pub passed: bool,
}

/// Compare `g₁(D_small)` with the blind compression rate `S(CQ)`.
pub fn blind_limit_check(e: &Ensemble, d_small: f64, tol: f64, opts: &EpOpts) -> Result<BlindLimitReport> {
    if !e.is_blind() {
        return Err(QrdError::InvalidArgument("blind limit needs an ensemble without side information".into()));
    }
    let dist = Distortion::for_ensemble(e, crate::distortion::DistortionKind::Fidelity, e.dim_a())?;
    let blind_rate = kidecomp::blind_rate(e)?;
    let unassisted = unassisted_point(e, d_small, &dist, 1, opts)?;
    let difference = (unassisted.rate - blind_rate).abs();
    Ok(BlindLimitReport {
        blind_rate,
        difference,
        tol,
        passed: difference <= tol,
        unassisted,
    })
}
