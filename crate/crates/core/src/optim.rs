//! Projected-gradient engine over Choi matrices shared by the solvers.
//!
//! The variable is the Choi matrix `J` of a channel `In → Out`. Objectives
//! and constraints are functions of `J` returning value and gradient with
//! respect to `Re Tr(A†B)`. Feasibility of `J` is maintained by a
//! retraction onto the CPTP set.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::channel;
use crate::linalg::{self, cr, CMatrix, LN2};
use crate::rdsolver::SolverOpts;

/// Value and gradient of a smooth function of the Choi matrix.
pub(crate) type EvalFn<'a> = dyn Fn(&CMatrix) -> (f64, CMatrix) + Sync + 'a;

const ARMIJO: f64 = 1e-4;
const MAX_BACKTRACK: usize = 30;
const MAX_OUTER: usize = 40;
/// Relative constraint slack accepted before repair.
const FEAS_REL: f64 = 1e-3;
/// Constraint slack accepted as feasible, well inside the certificate tolerance.
const FEAS_ABS: f64 = 1e-7;
const ENTROPY_FLOOR: f64 = 1e-13;
const RESTORE_ITERS: usize = 300;
const KRAUS_NOISE: f64 = 1e-3;
const MU_INIT: f64 = 100.0;
const MU_GROWTH: f64 = 5.0;

/// `J ↦ Σ_ij Tr_Drop(N_ij) ⊗ ρ_ij` for a fixed `ρ` on `In ⊗ Rest`, where
/// `Out = Keep ⊗ Drop`. Evaluated as one matrix product on realigned
/// operands.
#[derive(Debug, Clone)]
pub(crate) struct ChannelMap {
    din: usize,
    dout: usize,
    dkeep: usize,
    dr: usize,
    rho_t: CMatrix,
    rho_t_adj: CMatrix,
}

impl ChannelMap {
    pub fn new(rho: &CMatrix, din: usize, dr: usize, dout: usize, dkeep: usize) -> Self {
        assert_eq!(rho.nrows(), din * dr);
        assert_eq!(dout % dkeep, 0);
        let rho_t = CMatrix::from_fn(din * din, dr * dr, |ij, rr| {
            let (i, j) = (ij / din, ij % din);
            let (r, rp) = (rr / dr, rr % dr);
            rho[(i * dr + r, j * dr + rp)]
        });
        let rho_t_adj = rho_t.adjoint();
        Self {
            din,
            dout,
            dkeep,
            dr,
            rho_t,
            rho_t_adj,
        }
    }

    #[cfg(test)]
    pub fn out_dim(&self) -> usize {
        self.dkeep * self.dr
    }

    fn realign_choi(&self, j: &CMatrix) -> CMatrix {
        let (din, dout, dk) = (self.din, self.dout, self.dkeep);
        let drop = dout / dk;
        CMatrix::from_fn(dk * dk, din * din, |oo, ij| {
            let (o, op) = (oo / dk, oo % dk);
            let (i, jj) = (ij / din, ij % din);
            let mut acc = cr(0.0);
            for f in 0..drop {
                acc += j[(i * dout + o * drop + f, jj * dout + op * drop + f)];
            }
            acc
        })
    }

    pub fn apply(&self, j: &CMatrix) -> CMatrix {
        let t = self.realign_choi(j) * &self.rho_t;
        let (dk, dr) = (self.dkeep, self.dr);
        let n = dk * dr;
        CMatrix::from_fn(n, n, |a, b| {
            let (o, r) = (a / dr, a % dr);
            let (op, rp) = (b / dr, b % dr);
            t[(o * dk + op, r * dr + rp)]
        })
    }

    pub fn adjoint(&self, g: &CMatrix) -> CMatrix {
        let (din, dout, dk, dr) = (self.din, self.dout, self.dkeep, self.dr);
        let drop = dout / dk;
        let gt = CMatrix::from_fn(dk * dk, dr * dr, |oo, rr| {
            let (o, op) = (oo / dk, oo % dk);
            let (r, rp) = (rr / dr, rr % dr);
            g[(o * dr + r, op * dr + rp)]
        });
        let gam = gt * &self.rho_t_adj;
        let n = din * dout;
        let mut out = CMatrix::zeros(n, n);
        for i in 0..din {
            for jj in 0..din {
                for o in 0..dk {
                    for op in 0..dk {
                        let v = gam[(o * dk + op, i * din + jj)];
                        for f in 0..drop {
                            out[(i * dout + o * drop + f, jj * dout + op * drop + f)] = v;
                        }
                    }
                }
            }
        }
        linalg::hermitize(&out)
    }
}

/// `S(σ)` in bits and its gradient `−(log₂ σ + I/ln 2)`.
pub(crate) fn entropy_and_grad(m: &CMatrix) -> (f64, CMatrix) {
    let (vals, vecs) = linalg::eigh(&linalg::hermitize(m));
    let s = crate::qcore::entropy_of_spectrum(&vals);
    let g = linalg::from_eig(&vals, &vecs, |l| -(l.max(ENTROPY_FLOOR).log2() + 1.0 / LN2));
    (s, g)
}

/// Entropy of the marginal on `keep` of an operator with factor dims
/// `dims`, with the gradient lifted back to the full space.
pub(crate) fn marginal_entropy_and_grad(m: &CMatrix, dims: &[usize], keep: &[usize]) -> (f64, CMatrix) {
    if keep.len() == dims.len() {
        return entropy_and_grad(m);
    }
    let red = linalg::ptrace_keep(m, dims, keep);
    let (s, g) = entropy_and_grad(&red);
    (s, linalg::ptrace_keep_adjoint(&g, dims, keep))
}

/// Retraction onto the CPTP set: PSD clip followed by a congruence polish.
/// Fixes every CPTP point.
pub(crate) fn retract(m: &CMatrix, din: usize, dout: usize) -> CMatrix {
    let clipped = linalg::herm_fn(&linalg::hermitize(m), |l| l.max(0.0));
    match channel::congruence_polish(&clipped, din, dout) {
        Some(p) => p,
        None => channel::project_cptp(&clipped, din, dout)
            .map(|c| c.choi().clone())
            .unwrap_or_else(|_| {
                linalg::kron(&linalg::identity(din), &(linalg::identity(dout) / cr(dout as f64)))
            }),
    }
}

/// Wishart-style random channel: random PSD Choi then retraction.
pub(crate) fn random_choi(din: usize, dout: usize, rng: &mut ChaCha8Rng) -> CMatrix {
    let n = din * dout;
    let rank = rng.random_range(1..=n);
    let g = linalg::ginibre(n, rank, rng);
    let w = &g * g.adjoint();
    let t = linalg::ptrace_keep(&w, &[din, dout], &[0]);
    let scale = linalg::trace(&t).re / din as f64;
    retract(&(w / cr(scale)), din, dout)
}

pub(crate) struct Problem<'a> {
    pub din: usize,
    pub dout: usize,
    pub objective: &'a EvalFn<'a>,
    pub constraint: Option<&'a EvalFn<'a>>,
    pub bound: f64,
    /// A channel with constraint value 0, used to repair slight
    /// infeasibility by mixing.
    pub safe: Option<CMatrix>,
    pub starts: Vec<CMatrix>,
    /// Objective and constraint are convex, so mixtures of sweep points are
    /// valid upper bounds.
    pub convex: bool,
}

#[derive(Debug, Clone)]
pub(crate) struct RunResult {
    pub choi: CMatrix,
    pub objective: f64,
    pub constraint: f64,
    pub converged: bool,
    pub iters: usize,
    pub history: Vec<f64>,
    pub fallback: bool,
}

#[derive(Debug, Clone)]
pub(crate) struct Outcome {
    pub best: RunResult,
    pub values: Vec<f64>,
}

impl Outcome {
    pub fn spread(&self) -> f64 {
        let finite: Vec<f64> = self.values.iter().copied().filter(|v| v.is_finite()).collect();
        if finite.is_empty() {
            return 0.0;
        }
        let lo = finite.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = finite.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        hi - lo
    }
}

/// Deterministic per-start seed.
fn start_seed(seed: u64, k: usize) -> u64 {
    seed ^ (k as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

/// Best run over the problem's deterministic starts followed by random
/// starts, `max(restarts, 1)` runs in total.
pub(crate) fn minimize(p: &Problem<'_>, opts: &SolverOpts) -> Outcome {
    let total = opts.restarts.max(1);
    let results: Vec<RunResult> = (0..total)
        .into_par_iter()
        .map(|k| {
            let mut rng = ChaCha8Rng::seed_from_u64(start_seed(opts.seed, k));
            let j0 = if k < p.starts.len() {
                p.starts[k].clone()
            } else {
                random_choi(p.din, p.dout, &mut rng)
            };
            run(p, opts, &j0)
        })
        .collect();
    let feasible = |r: &RunResult| r.constraint <= p.bound + 1e-6;
    let mut best_idx = 0;
    for (k, r) in results.iter().enumerate() {
        let b = &results[best_idx];
        let better = match (feasible(r), feasible(b)) {
            (true, false) => true,
            (false, true) => false,
            _ => r.objective < b.objective - 1e-12,
        };
        if better {
            best_idx = k;
        }
    }
    let values = results
        .iter()
        .map(|r| if feasible(r) { r.objective } else { f64::NAN })
        .collect();
    Outcome {
        best: results[best_idx].clone(),
        values,
    }
}

/// One start: projected gradient when unconstrained, augmented Lagrangian
/// otherwise, followed by feasibility repair.
pub(crate) fn run(p: &Problem<'_>, opts: &SolverOpts, j0: &CMatrix) -> RunResult {
    let start = retract(j0, p.din, p.dout);
    let mut j = start.clone();
    let Some(cons) = p.constraint else {
        let r = descend(&j, p.din, p.dout, opts, opts.max_iters, f64::NEG_INFINITY, KRAUS_NOISE, &|m: &CMatrix| (p.objective)(m));
        let (f, _) = (p.objective)(&r.choi);
        let (f0, _) = (p.objective)(&start);
        let (choi, f) = if f0 < f { (start, f0) } else { (r.choi, f) };
        return RunResult {
            choi,
            objective: f,
            constraint: 0.0,
            converged: r.converged,
            iters: r.iters,
            history: r.history,
            fallback: false,
        };
    };
    let bound = p.bound;
    let accept = bound + FEAS_ABS;
    let mut best_feasible: Option<(f64, CMatrix)> = None;
    let mut record = |x: &CMatrix| {
        let (g, _) = cons(x);
        if g <= accept {
            let (f, _) = (p.objective)(x);
            if best_feasible.as_ref().is_none_or(|(bf, _)| f < *bf) {
                best_feasible = Some((f, x.clone()));
            }
        }
    };
    record(&start);
    let mut lambda = 0.0;
    let mut mu = MU_INIT;
    let mut prev_viol = f64::INFINITY;
    let mut stalls = 0;
    let mut prev_f = f64::INFINITY;
    let feas_tol = FEAS_REL * bound + FEAS_ABS;
    let mut iters = 0;
    let mut history = Vec::new();
    let mut converged = false;
    let per_round = (opts.max_iters / 20).max(50);
    for _ in 0..MAX_OUTER {
        if iters >= opts.max_iters {
            break;
        }
        let (lam, m) = (lambda, mu);
        let merit = move |x: &CMatrix| {
            let (f, gf) = (p.objective)(x);
            let (g, gg) = cons(x);
            let shifted = (lam + m * (g - bound)).max(0.0);
            let val = f + (shifted * shifted - lam * lam) / (2.0 * m);
            (val, gf + gg * cr(shifted))
        };
        let budget = per_round.min(opts.max_iters - iters);
        let r = descend(&j, p.din, p.dout, opts, budget, f64::NEG_INFINITY, KRAUS_NOISE, &merit);
        iters += r.iters;
        j = r.choi;
        let (f, _) = (p.objective)(&j);
        history.push(f);
        record(&j);
        let (g, _) = cons(&j);
        let viol = (g - bound).max(0.0);
        let new_lambda = (lambda + mu * (g - bound)).max(0.0);
        let stable = (new_lambda - lambda).abs() <= 1e-3 * (1.0 + lambda)
            || (f - prev_f).abs() <= 1e-7 * f.abs().max(1.0);
        prev_f = f;
        lambda = new_lambda;
        let stalled = r.history.len() == 1;
        if viol <= feas_tol && r.converged && (stable || stalled) {
            converged = true;
            break;
        }
        stalls = if stalled { stalls + 1 } else { 0 };
        if stalls >= 3 {
            break;
        }
        if viol > feas_tol && viol > 0.25 * prev_viol {
            mu = (mu * MU_GROWTH).min(1e10);
        }
        prev_viol = viol;
    }
    let (g, _) = cons(&j);
    let mut fallback = false;
    if g - bound > 1e-4 && p.convex && !opts.lagrange_sweep.is_empty() {
        if let Some(sw) = lambda_sweep(p, opts, &j) {
            j = sw;
            fallback = true;
        }
    }
    let mut j = repair(p, opts, j);
    record(&j);
    if let Some((_, b)) = best_feasible {
        j = b;
    }
    let (f, _) = (p.objective)(&j);
    let (g, _) = cons(&j);
    RunResult {
        choi: j,
        objective: f,
        constraint: g,
        converged,
        iters,
        history,
        fallback,
    }
}

/// Restore feasibility by descending on the constraint, then mixing toward
/// the restored point or the safe channel.
fn repair(p: &Problem<'_>, opts: &SolverOpts, j: CMatrix) -> CMatrix {
    let Some(cons) = p.constraint else { return j };
    let accept = p.bound + FEAS_ABS;
    if cons(&j).0 <= accept {
        return j;
    }
    let r = descend(&j, p.din, p.dout, opts, RESTORE_ITERS, p.bound, 0.0, cons).choi;
    if cons(&r).0 <= accept {
        return mix_until_feasible(cons, accept, &j, &r);
    }
    match &p.safe {
        Some(safe) => mix_until_feasible(cons, accept, &j, safe),
        None => r,
    }
}

/// Largest weight on `j` such that mixing with the feasible `anchor` keeps
/// the constraint within `bound`.
fn mix_until_feasible(cons: &EvalFn<'_>, bound: f64, j: &CMatrix, anchor: &CMatrix) -> CMatrix {
    let mix = |t: f64| j * cr(t) + anchor * cr(1.0 - t);
    let (mut lo, mut hi) = (0.0, 1.0);
    for _ in 0..50 {
        let mid = 0.5 * (lo + hi);
        if cons(&mix(mid)).0 <= bound {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    mix(lo)
}

/// Lower-envelope fallback: minimize `f + λ g` over the sweep and mix the
/// best bracketing pair.
fn lambda_sweep(p: &Problem<'_>, opts: &SolverOpts, j0: &CMatrix) -> Option<CMatrix> {
    let cons = p.constraint?;
    let mut pts: Vec<(f64, f64, CMatrix)> = Vec::new();
    let mut j = j0.clone();
    for &lam in &opts.lagrange_sweep {
        let merit = |x: &CMatrix| {
            let (f, gf) = (p.objective)(x);
            let (g, gg) = cons(x);
            (f + lam * g, gf + gg * cr(lam))
        };
        let r = descend(&j, p.din, p.dout, opts, opts.max_iters / 4 + 1, f64::NEG_INFINITY, KRAUS_NOISE, &merit);
        j = r.choi;
        pts.push(((p.objective)(&j).0, cons(&j).0, j.clone()));
    }
    if let Some(safe) = &p.safe {
        pts.push(((p.objective)(safe).0, cons(safe).0, safe.clone()));
    }
    let mut best: Option<(f64, CMatrix)> = None;
    let mut consider = |m: CMatrix| {
        let (g, _) = cons(&m);
        if g <= p.bound + 1e-9 {
            let (f, _) = (p.objective)(&m);
            if best.as_ref().is_none_or(|(bf, _)| f < *bf) {
                best = Some((f, m));
            }
        }
    };
    for (_, g, m) in &pts {
        if *g <= p.bound {
            consider(m.clone());
        }
    }
    for (_, ga, a) in &pts {
        for (_, gb, b) in &pts {
            if *ga <= p.bound && *gb > p.bound {
                let t = (p.bound - gb) / (ga - gb);
                consider(a * cr(t) + b * cr(1.0 - t));
            }
        }
    }
    best.map(|(_, m)| m)
}

pub(crate) struct Descent {
    pub choi: CMatrix,
    pub converged: bool,
    pub iters: usize,
    pub history: Vec<f64>,
}

/// `J = W W†` with `W` of shape `(din·dout) × r`; the Stinespring matrix is
/// `V[(o·r + k), i] = W[(i·dout + o), k]` and `V†V = I` is trace
/// preservation.
fn w_to_v(w: &CMatrix, din: usize, dout: usize) -> CMatrix {
    let r = w.ncols();
    CMatrix::from_fn(dout * r, din, |ok, i| w[(i * dout + ok / r, ok % r)])
}

fn v_to_w(v: &CMatrix, din: usize, dout: usize) -> CMatrix {
    let r = v.nrows() / dout;
    CMatrix::from_fn(din * dout, r, |io, k| v[((io % dout) * r + k, io / dout)])
}

/// `Y (Y†Y)^{-1/2}`.
fn polar(y: &CMatrix) -> CMatrix {
    let g = linalg::hermitize(&(y.adjoint() * y));
    let (vals, vecs) = linalg::eigh(&g);
    y * linalg::from_eig(&vals, &vecs, |l| if l > 1e-300 { 1.0 / l.sqrt() } else { 0.0 })
}

/// Full-rank Stinespring factor of a Choi matrix. Kraus directions outside
/// the range get a tiny random seed so that they receive gradient.
fn stinespring_of(j: &CMatrix, din: usize, dout: usize, noise_scale: f64) -> CMatrix {
    let n = din * dout;
    let (vals, vecs) = linalg::eigh(&linalg::hermitize(j));
    let mut rng = ChaCha8Rng::seed_from_u64(n as u64);
    let noise = linalg::ginibre(n, n, &mut rng) * cr(noise_scale / (n as f64).sqrt());
    let mut w = vecs;
    for (k, &l) in vals.iter().enumerate() {
        if l > 1e-14 {
            w.column_mut(k).scale_mut(l.sqrt());
        } else {
            w.set_column(k, &noise.column(k));
        }
    }
    polar(&w_to_v(&w, din, dout))
}

/// Riemannian gradient descent on the Stinespring isometry (Stiefel
/// manifold, polar retraction) with Armijo backtracking and
/// Barzilai–Borwein steps. Every iterate is exactly CPTP.
pub(crate) fn descend(
    j0: &CMatrix,
    din: usize,
    dout: usize,
    opts: &SolverOpts,
    max_iters: usize,
    target: f64,
    noise: f64,
    f: &(dyn Fn(&CMatrix) -> (f64, CMatrix) + Sync),
) -> Descent {
    let choi = |v: &CMatrix| {
        let w = v_to_w(v, din, dout);
        linalg::hermitize(&(&w * w.adjoint()))
    };
    let riemannian = |v: &CMatrix, g: &CMatrix| {
        let w = v_to_w(v, din, dout);
        let e = w_to_v(&(g * &w * cr(2.0)), din, dout);
        let s = v.adjoint() * &e;
        &e - v * linalg::hermitize(&s)
    };
    let mut v = stinespring_of(j0, din, dout, noise);
    let mut j = choi(&v);
    let (mut val, g) = f(&j);
    let mut xi = riemannian(&v, &g);
    let mut step = opts.step_init / xi.norm().max(1.0);
    let mut history = vec![val];
    let mut converged = false;
    let mut iters = 0;
    while iters < max_iters {
        iters += 1;
        let slope = xi.norm_squared();
        if slope.sqrt() < opts.tol_grad {
            converged = true;
            break;
        }
        let mut accepted = None;
        let mut s = step;
        for _ in 0..MAX_BACKTRACK {
            let cand = polar(&(&v - &xi * cr(s)));
            let cj = choi(&cand);
            let (cv, cg) = f(&cj);
            if cv <= val - ARMIJO * s * slope {
                accepted = Some((cand, cj, cv, cg, s));
                break;
            }
            s *= 0.5;
        }
        let Some((cand, cj, cv, cg, s)) = accepted else {
            converged = true;
            break;
        };
        let cxi = riemannian(&cand, &cg);
        let dx = &cand - &v;
        let dg = &cxi - &xi;
        let curv = linalg::inner(&dx, &dg);
        step = if curv > 1e-16 {
            (dx.norm_squared() / curv).clamp(1e-10, 1e4)
        } else {
            (s * 2.0).min(1e4)
        };
        v = cand;
        j = cj;
        val = cv;
        xi = cxi;
        history.push(val);
        if val <= target {
            converged = true;
            break;
        }
        if target == f64::NEG_INFINITY && history.len() > 10 {
            let old = history[history.len() - 11];
            if (old - val).abs() <= opts.tol_obj * old.abs().max(1.0) {
                converged = true;
                break;
            }
        }
    }
    Descent {
        choi: j,
        converged,
        iters,
        history,
    }
}
