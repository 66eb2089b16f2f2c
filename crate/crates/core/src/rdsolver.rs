//! Entanglement-assisted rate-distortion function `½ min I(B : XX'R)` over
//! channels `N: AJ → B` with `Δ ≤ D`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::channel::{self, Channel};
use crate::distortion::Distortion;
use crate::ensemble::{Ensemble, LABEL_A, LABEL_J, LABEL_R, LABEL_X, LABEL_XP};
use crate::error::{QrdError, Result};
use crate::linalg::{self, cr, CMatrix, CVector};
use crate::optim::{self, ChannelMap, Problem};
use crate::qcore;

/// Smallest constraint level used for `D = 0`.
pub const ZERO_DISTORTION: f64 = 1e-9;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SolverOpts {
    pub max_iters: usize,
    pub tol_obj: f64,
    pub tol_grad: f64,
    pub restarts: usize,
    pub seed: u64,
    pub step_init: f64,
    pub lagrange_sweep: Vec<f64>,
}

impl Default for SolverOpts {
    fn default() -> Self {
        Self {
            max_iters: 3000,
            tol_obj: 1e-8,
            tol_grad: 1e-6,
            restarts: 4,
            seed: 0,
            step_init: 1.0,
            lagrange_sweep: vec![0.0, 0.1, 0.3, 1.0, 3.0, 10.0, 30.0, 100.0],
        }
    }
}

impl SolverOpts {
    pub fn validate(&self) -> Result<()> {
        if !(self.tol_obj > 0.0 && self.tol_grad > 0.0 && self.step_init > 0.0) {
            return Err(QrdError::InvalidArgument(
                "tolerances and initial step must be positive".into(),
            ));
        }
        if self.lagrange_sweep.iter().any(|&l| !(l >= 0.0)) {
            return Err(QrdError::InvalidArgument("sweep multipliers must be ≥ 0".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct RDPoint {
    pub d: f64,
    pub rate: f64,
    /// Certificate channel.
    pub channel: Channel,
    pub converged: bool,
    pub iters: usize,
    pub objective_history: Vec<f64>,
    /// `Δ` of the certificate output.
    pub distortion: f64,
    /// `max(CPTP residual, Δ − D)`.
    pub feasibility_residual: f64,
    /// The multiplier sweep replaced the augmented Lagrangian result.
    pub fallback: bool,
    /// Certified lower bound, when the solver provides one.
    pub lower: Option<f64>,
    /// Spread of objective values across feasible restarts.
    pub restart_spread: Option<f64>,
}

pub(crate) fn check_d(d: f64) -> Result<()> {
    if !(d >= 0.0) || !d.is_finite() {
        return Err(QrdError::InvalidArgument(format!("distortion level {d} must be ≥ 0")));
    }
    Ok(())
}

/// Canonical purification `Σ √λ_k |v_k⟩|k⟩` of `rho`, returned as a
/// projector on `In ⊗ Ref` together with the reference dimension.
pub(crate) fn purification_matrix(rho: &CMatrix) -> (CMatrix, usize) {
    let (vals, vecs) = linalg::eigh(&linalg::hermitize(rho));
    let r = vals.iter().filter(|&&l| l > qcore::EIG_CLIP).count().max(1);
    let d = rho.nrows();
    let mut v = CVector::zeros(d * r);
    for k in 0..r {
        let s = vals[k].max(0.0).sqrt();
        for i in 0..d {
            v[i * r + k] = vecs[(i, k)] * cr(s);
        }
    }
    let n = v.norm();
    v /= cr(n);
    (linalg::outer(&v), r)
}

/// Choi of `AJ → B ⊗ F`: embed `A` into `B`, discard `J`, emit `|0⟩_F`.
pub(crate) fn embedding_choi(da: usize, dj: usize, db: usize, df: usize) -> CMatrix {
    let din = da * dj;
    let dout = db * df;
    let mut m = CMatrix::zeros(din * dout, din * dout);
    for j in 0..dj {
        for a in 0..da {
            for ap in 0..da {
                let r = (a * dj + j) * dout + a * df;
                let c = (ap * dj + j) * dout + ap * df;
                m[(r, c)] = cr(1.0);
            }
        }
    }
    m
}

/// Choi of the constant channel onto `sigma`.
pub(crate) fn replacer_choi(sigma: &CMatrix, din: usize) -> CMatrix {
    linalg::kron(&linalg::identity(din), sigma)
}

/// `V σ V†` for the leading-coordinate embedding into dimension `d`.
pub(crate) fn embed(sigma: &CMatrix, d: usize) -> CMatrix {
    let mut m = CMatrix::zeros(d, d);
    m.view_mut((0, 0), (sigma.nrows(), sigma.ncols())).copy_from(sigma);
    m
}

fn check_dims(e: &Ensemble, dist: &Distortion) -> Result<()> {
    if dist.dim_x() != e.len() {
        return Err(QrdError::DimensionMismatch(format!(
            "distortion has {} letters, ensemble has {}",
            dist.dim_x(),
            e.len()
        )));
    }
    if dist.dim_b() < e.dim_a() {
        return Err(QrdError::DimensionMismatch(format!(
            "output dimension {} is smaller than the source dimension {}",
            dist.dim_b(),
            e.dim_a()
        )));
    }
    Ok(())
}

/// `Channel` from an optimizer iterate, projecting if round-off left it
/// just outside the CPTP tolerances.
pub(crate) fn to_channel(j: CMatrix, din: usize, dout: usize) -> Channel {
    match Channel::new(j.clone(), din, dout) {
        Ok(c) => c,
        Err(_) => channel::project_cptp(&j, din, dout)
            .unwrap_or_else(|_| Channel::new_unchecked(j, din, dout)),
    }
}

/// `½ I(B : XX'R)` of `(N ⊗ id)(ψ)` evaluated on the labelled purified
/// source.
pub fn rea_objective(e: &Ensemble, n: &Channel) -> Result<f64> {
    if n.dim_in() != e.dim_a() * e.dim_j() {
        return Err(QrdError::DimensionMismatch(format!(
            "channel input {} does not match dimA·dimJ = {}",
            n.dim_in(),
            e.dim_a() * e.dim_j()
        )));
    }
    let psi = qcore::DensityOp::from_pure(&e.purified_source().psi);
    let tau = n.apply(&psi, &[LABEL_A, LABEL_J], "B")?;
    Ok(0.5 * qcore::mutual_information(&tau, &["B"], &[LABEL_X, LABEL_XP, LABEL_R])?)
}

/// Output `Σ_x p_x N(ρ_x ⊗ |j_x⟩⟨j_x|) ⊗ |x⟩⟨x|` on `B ⊗ X`.
pub fn output_cq(e: &Ensemble, n: &Channel) -> Result<qcore::DensityOp> {
    let tau = n.apply(&e.cq_state(), &[LABEL_A, LABEL_J], "B")?;
    tau.with_layout(crate::distortion::bx_layout(n.dim_out(), e.len()))
}

/// Objective `½ I(B : XX'R)` and constraint `Δ` as functions of the Choi
/// matrix, each with its gradient.
pub(crate) struct ReaEvaluator<'a> {
    obj_map: ChannelMap,
    dist_map: ChannelMap,
    s_bar: f64,
    db: usize,
    r: usize,
    dist: &'a Distortion,
}

impl<'a> ReaEvaluator<'a> {
    pub(crate) fn new(e: &Ensemble, dist: &'a Distortion) -> Self {
        let din = e.dim_a() * e.dim_j();
        let db = dist.dim_b();
        let bar = e.average_aj();
        let (phi, r) = purification_matrix(&bar);
        Self {
            obj_map: ChannelMap::new(&phi, din, r, db, db),
            dist_map: ChannelMap::new(e.cq_state().matrix(), din, e.len(), db, db),
            s_bar: qcore::entropy_of_spectrum(&linalg::eigvalsh(&bar)),
            db,
            r,
            dist,
        }
    }

    pub(crate) fn objective(&self, j: &CMatrix) -> (f64, CMatrix) {
        let t = self.obj_map.apply(j);
        let (sb, gb) = optim::marginal_entropy_and_grad(&t, &[self.db, self.r], &[0]);
        let (st, gt) = optim::entropy_and_grad(&t);
        (0.5 * (sb + self.s_bar - st), self.obj_map.adjoint(&((gb - gt) * cr(0.5))))
    }

    pub(crate) fn constraint(&self, j: &CMatrix) -> (f64, CMatrix) {
        let t = self.dist_map.apply(j);
        (self.dist.delta_matrix(&t), self.dist_map.adjoint(&self.dist.gradient_matrix(&t)))
    }
}

/// Minimum of `½ I(B : XX'R)` over channels with `Δ ≤ D`.
pub fn rea_point(e: &Ensemble, d: f64, dist: &Distortion, opts: &SolverOpts) -> Result<RDPoint> {
    check_d(d)?;
    opts.validate()?;
    check_dims(e, dist)?;
    let (da, dj) = (e.dim_a(), e.dim_j());
    let din = da * dj;
    let db = dist.dim_b();
    let eval = ReaEvaluator::new(e, dist);
    let objective = |j: &CMatrix| eval.objective(j);
    let constraint = |j: &CMatrix| eval.constraint(j);
    let safe = embedding_choi(da, dj, db, 1);
    let bary = replacer_choi(&embed(&e.average_a(), db), din);
    let bound = d.max(ZERO_DISTORTION);
    let problem = Problem {
        din,
        dout: db,
        objective: &objective,
        constraint: Some(&constraint),
        bound,
        safe: Some(safe.clone()),
        starts: vec![safe, bary],
        convex: true,
    };
    let out = optim::minimize(&problem, opts);
    let spread = out.spread();
    let best = out.best;
    let ch = to_channel(best.choi, din, db);
    let distortion = eval.constraint(ch.choi()).0;
    Ok(RDPoint {
        d,
        rate: best.objective.max(0.0),
        feasibility_residual: ch.feasibility_residual().max(distortion - bound).max(0.0),
        channel: ch,
        converged: best.converged,
        iters: best.iters,
        objective_history: best.history,
        distortion,
        fallback: best.fallback,
        lower: None,
        restart_spread: Some(spread),
    })
}

/// Rate-distortion curve with its shape diagnostics.
#[derive(Debug, Clone)]
pub struct RDCurve {
    pub points: Vec<RDPoint>,
    /// Rates as returned by the solver, before cleanup.
    pub raw_rates: Vec<f64>,
    /// Largest `rate(D₂) − rate(D₁)` with `D₁ < D₂`, before cleanup.
    pub monotonicity_violation: f64,
    /// Largest excess over a chord between neighbours, before cleanup.
    pub convexity_violation: f64,
    /// Indices whose certificate was replaced during cleanup.
    pub adjusted: Vec<usize>,
}

impl RDCurve {
    pub fn rates(&self) -> Vec<f64> {
        self.points.iter().map(|p| p.rate).collect()
    }

    pub fn grid(&self) -> Vec<f64> {
        self.points.iter().map(|p| p.d).collect()
    }
}

/// `(monotonicity, convexity)` violations of a curve sampled on `ds`.
pub fn shape_violations(ds: &[f64], rates: &[f64]) -> (f64, f64) {
    let mut mono: f64 = 0.0;
    for i in 0..rates.len() {
        for j in i + 1..rates.len() {
            if ds[j] > ds[i] {
                mono = mono.max(rates[j] - rates[i]);
            }
        }
    }
    let mut conv: f64 = 0.0;
    for i in 0..rates.len() {
        for k in i + 2..rates.len() {
            for j in i + 1..k {
                let w = ds[k] - ds[i];
                if w <= 0.0 {
                    continue;
                }
                let t = (ds[k] - ds[j]) / w;
                conv = conv.max(rates[j] - (t * rates[i] + (1.0 - t) * rates[k]));
            }
        }
    }
    (mono.max(0.0), conv.max(0.0))
}

/// Solve every grid point, then replace any point lying above the
/// monotone convex envelope by a mixture of neighbouring certificates,
/// which is feasible and no worse than the chord.
pub fn rea_curve(e: &Ensemble, grid: &[f64], dist: &Distortion, opts: &SolverOpts) -> Result<RDCurve> {
    if grid.windows(2).any(|w| w[1] < w[0]) {
        return Err(QrdError::InvalidArgument("distortion grid must be sorted".into()));
    }
    let mut points = grid
        .par_iter()
        .map(|&d| rea_point(e, d, dist, opts))
        .collect::<Result<Vec<RDPoint>>>()?;
    let raw_rates: Vec<f64> = points.iter().map(|p| p.rate).collect();
    let (mono, conv) = shape_violations(grid, &raw_rates);
    let mut adjusted = Vec::new();
    let din = e.dim_a() * e.dim_j();
    let db = dist.dim_b();
    let dist_map = ChannelMap::new(e.cq_state().matrix(), din, e.len(), db, db);
    for _ in 0..points.len() {
        let mut changed = false;
        for j in 1..points.len() {
            let mut best: Option<(f64, Channel)> = None;
            let mut consider = |ch: Channel, pts: &Vec<RDPoint>| {
                if let Ok(v) = rea_objective(e, &ch) {
                    if v < pts[j].rate - 1e-9 && best.as_ref().is_none_or(|(b, _)| v < *b) {
                        best = Some((v, ch));
                    }
                }
            };
            for i in 0..j {
                if points[i].rate < points[j].rate - 1e-9 {
                    consider(points[i].channel.clone(), &points);
                }
                for k in j + 1..points.len() {
                    let w = grid[k] - grid[i];
                    if w <= 0.0 {
                        continue;
                    }
                    let t = (grid[k] - grid[j]) / w;
                    let chord = t * points[i].rate + (1.0 - t) * points[k].rate;
                    if chord < points[j].rate - 1e-9 {
                        if let Ok(ch) = points[i].channel.mix(t, &points[k].channel) {
                            consider(ch, &points);
                        }
                    }
                }
            }
            if let Some((v, ch)) = best {
                let dj = dist.delta_matrix(&dist_map.apply(ch.choi()));
                if dj <= points[j].d.max(ZERO_DISTORTION) + 1e-9 {
                    let p = &mut points[j];
                    p.rate = v.max(0.0);
                    p.distortion = dj;
                    p.feasibility_residual = ch.feasibility_residual().max(dj - p.d.max(ZERO_DISTORTION)).max(0.0);
                    p.channel = ch;
                    if !adjusted.contains(&j) {
                        adjusted.push(j);
                    }
                    changed = true;
                }
            }
        }
        if !changed {
            break;
        }
    }
    adjusted.sort_unstable();
    Ok(RDCurve {
        points,
        raw_rates,
        monotonicity_violation: mono,
        convexity_violation: conv,
        adjusted,
    })
}

#[derive(Debug, Clone, Copy)]
pub struct GridSpec {
    pub samples: usize,
    pub refine: usize,
    pub refine_steps: usize,
    pub seed: u64,
}

impl Default for GridSpec {
    fn default() -> Self {
        Self {
            samples: 100_000,
            refine: 100,
            refine_steps: 150,
            seed: 0,
        }
    }
}

/// Evaluates `½ I` and `Δ` on Kraus operators directly, without Choi
/// matrices.
struct KrausEvaluator<'a> {
    e: &'a Ensemble,
    dist: &'a Distortion,
    phi: CVector,
    r: usize,
    s_bar: f64,
    din: usize,
    db: usize,
    env: usize,
}

impl KrausEvaluator<'_> {
    fn kraus(&self, v: &CMatrix) -> Vec<CMatrix> {
        (0..self.env)
            .map(|k| CMatrix::from_fn(self.db, self.din, |o, i| v[(o * self.env + k, i)]))
            .collect()
    }

    /// `(½ I(B : Ref), Δ)` for the Stinespring matrix `v`.
    fn eval(&self, v: &CMatrix) -> (f64, f64) {
        let (db, r, nx) = (self.db, self.r, self.e.len());
        let kraus = self.kraus(v);
        let mut tau = CMatrix::zeros(db * r, db * r);
        for k in &kraus {
            let w = CVector::from_fn(db * r, |idx, _| {
                let (o, q) = (idx / r, idx % r);
                (0..self.din).map(|i| k[(o, i)] * self.phi[i * r + q]).sum()
            });
            tau += &w * w.adjoint();
        }
        let sb = qcore::entropy_of_spectrum(&linalg::eigvalsh(&linalg::ptrace_keep(&tau, &[db, r], &[0])));
        let st = qcore::entropy_of_spectrum(&linalg::eigvalsh(&tau));
        let mut out = CMatrix::zeros(db * nx, db * nx);
        for (x, it) in self.e.items().iter().enumerate() {
            let rho = self.e.item_state_aj(x);
            let mut b = CMatrix::zeros(db, db);
            for k in &kraus {
                b += k * &rho * k.adjoint();
            }
            for o in 0..db {
                for op in 0..db {
                    out[(o * nx + x, op * nx + x)] = b[(o, op)] * cr(it.p);
                }
            }
        }
        (0.5 * (sb + self.s_bar - st), self.dist.delta_matrix(&out))
    }
}

/// Stinespring matrices of the identity, of dephasings in the eigenbases of
/// the barycenter and of each item, and of the barycenter replacer.
fn oracle_anchors(e: &Ensemble, din: usize, db: usize, env: usize) -> Vec<CMatrix> {
    let rows = db * env;
    let mut out = Vec::new();
    let mut id = CMatrix::zeros(rows, din);
    for i in 0..din {
        id[(i * env, i)] = cr(1.0);
    }
    out.push(id);
    let mut bases = vec![linalg::eigh(&e.average_aj()).1];
    bases.extend((0..e.len()).map(|x| linalg::eigh(&e.item_state_aj(x)).1));
    for u in bases {
        let mut v = CMatrix::zeros(rows, din);
        for k in 0..din {
            for o in 0..din {
                for i in 0..din {
                    v[(o * env + k, i)] = u[(o, k)] * u[(i, k)].conj();
                }
            }
        }
        out.push(v);
    }
    let (vals, vecs) = linalg::eigh(&embed(&e.average_a(), db));
    let mut v = CMatrix::zeros(rows, din);
    for m in 0..db {
        for i in 0..din {
            for o in 0..db {
                v[(o * env + m * din + i, i)] = vecs[(o, m)] * cr(vals[m].max(0.0).sqrt());
            }
        }
    }
    out.push(v);
    out
}

/// Penalty weights for the Lagrangian sweep of the oracle.
const ORACLE_LAMBDAS: [f64; 9] = [0.1, 0.3, 1.0, 3.0, 10.0, 30.0, 100.0, 300.0, 1000.0];

/// Smallest value at `x` of the lower convex hull of `(g, f)` points,
/// restricted to `g ≤ x`. `None` when no point has `g ≤ x`.
fn hull_value(points: &mut [(f64, f64)], x: f64) -> Option<f64> {
    points.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));
    let mut hull: Vec<(f64, f64)> = Vec::new();
    for &p in points.iter() {
        while hull.len() >= 2 {
            let (a, b) = (hull[hull.len() - 2], hull[hull.len() - 1]);
            if (b.0 - a.0) * (p.1 - a.1) - (b.1 - a.1) * (p.0 - a.0) <= 0.0 {
                hull.pop();
            } else {
                break;
            }
        }
        hull.push(p);
    }
    let mut best = hull.iter().filter(|p| p.0 <= x).map(|p| p.1).reduce(f64::min)?;
    for w in hull.windows(2) {
        if w[0].0 <= x && x < w[1].0 {
            let t = (x - w[0].0) / (w[1].0 - w[0].0);
            best = best.min(w[0].1 + t * (w[1].1 - w[0].1));
        }
    }
    Some(best)
}

/// Randomized-net oracle for `rea_point` on qubit-sized problems.
/// Samples Stinespring isometries (Haar, and perturbations of fixed anchor
/// channels at random scales), refines the best feasible ones and the best
/// ones under each penalty `f + λ Δ` by local search, and returns the lower
/// convex hull of every evaluated `(Δ, f)` pair at `D`. Mixing channels
/// mixes `Δ` linearly and the objective at most linearly, so the hull value
/// is achievable.
pub fn brute_force_rea(e: &Ensemble, d: f64, dist: &Distortion, grid: &GridSpec) -> Result<f64> {
    check_d(d)?;
    check_dims(e, dist)?;
    let din = e.dim_a() * e.dim_j();
    let db = dist.dim_b();
    if din > 2 || db > 2 {
        return Err(QrdError::CapExceeded(format!(
            "brute force needs dimA·dimJ ≤ 2 and dimB ≤ 2, got {din} and {db}"
        )));
    }
    let bound = d.max(ZERO_DISTORTION);
    let bar = e.average_aj();
    let (vals, vecs) = linalg::eigh(&bar);
    let r = vals.iter().filter(|&&l| l > qcore::EIG_CLIP).count().max(1);
    let mut phi = CVector::zeros(din * r);
    for k in 0..r {
        for i in 0..din {
            phi[i * r + k] = vecs[(i, k)] * cr(vals[k].max(0.0).sqrt());
        }
    }
    let n = phi.norm();
    phi /= cr(n);
    let ev = KrausEvaluator {
        e,
        dist,
        phi,
        r,
        s_bar: qcore::entropy_of_spectrum(&vals),
        din,
        db,
        env: din * db,
    };
    let rows = db * ev.env;
    let anchors = oracle_anchors(e, din, db, ev.env);
    const CHUNK: usize = 1000;
    let chunks = grid.samples.div_ceil(CHUNK);
    struct Sampled {
        points: Vec<(f64, f64)>,
        feasible: Vec<(f64, CMatrix)>,
        penalized: Vec<(f64, CMatrix)>,
    }
    let score = |f: f64, g: f64, lam: f64| f + lam * g;
    let mut parts: Vec<Sampled> = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut rng = ChaCha8Rng::seed_from_u64(grid.seed ^ (c as u64).wrapping_mul(0xA24B_AED4_963E_E407));
            let count = CHUNK.min(grid.samples - c * CHUNK);
            let mut points = Vec::with_capacity(count);
            let mut feasible = Vec::new();
            let mut penalized: Vec<(f64, CMatrix)> = Vec::new();
            for s in 0..count {
                let v = if s % 2 == 0 {
                    linalg::random_isometry(rows, din, &mut rng)
                } else {
                    let anchor = &anchors[rng.random_range(0..anchors.len())];
                    let scale = 10f64.powf(rng.random_range(-3.0..0.5));
                    linalg::polar_isometry(&(anchor + linalg::ginibre(rows, din, &mut rng) * cr(scale)))
                };
                let (f, g) = ev.eval(&v);
                points.push((g, f));
                for (li, &lam) in ORACLE_LAMBDAS.iter().enumerate() {
                    let sc = score(f, g, lam);
                    match penalized.get_mut(li) {
                        Some(slot) if sc < slot.0 => *slot = (sc, v.clone()),
                        Some(_) => {}
                        None => penalized.push((sc, v.clone())),
                    }
                }
                if g <= bound {
                    feasible.push((f, v));
                }
            }
            feasible.sort_by(|a, b| a.0.total_cmp(&b.0));
            feasible.truncate(grid.refine);
            Sampled {
                points,
                feasible,
                penalized,
            }
        })
        .collect();
    let mut points: Vec<(f64, f64)> = parts.iter_mut().flat_map(|p| std::mem::take(&mut p.points)).collect();
    let mut pool: Vec<(f64, CMatrix)> = parts.iter_mut().flat_map(|p| std::mem::take(&mut p.feasible)).collect();
    for a in &anchors {
        let (f, g) = ev.eval(a);
        points.push((g, f));
        if g <= bound {
            pool.push((f, a.clone()));
        }
    }
    pool.sort_by(|a, b| a.0.total_cmp(&b.0));
    pool.truncate(grid.refine.max(1));
    // (start, λ); λ = None keeps the search inside the feasible set.
    let mut starts: Vec<(CMatrix, Option<f64>)> = pool.into_iter().map(|(_, v)| (v, None)).collect();
    for (li, &lam) in ORACLE_LAMBDAS.iter().enumerate() {
        if let Some(best) = parts.iter().filter_map(|p| p.penalized.get(li)).min_by(|a, b| a.0.total_cmp(&b.0)) {
            starts.push((best.1.clone(), Some(lam)));
        }
    }
    let refined: Vec<Vec<(f64, f64)>> = starts
        .par_iter()
        .enumerate()
        .map(|(idx, (v0, lam))| {
            let mut rng = ChaCha8Rng::seed_from_u64(grid.seed.wrapping_add(0x5151 + idx as u64));
            let mut v = v0.clone();
            let (mut f, mut g) = ev.eval(&v);
            let steps = if lam.is_some() { 4 * grid.refine_steps } else { grid.refine_steps };
            let mut seen = vec![(g, f)];
            let mut step = 0.1;
            for _ in 0..steps {
                let cand = linalg::polar_isometry(&(&v + linalg::ginibre(rows, din, &mut rng) * cr(step)));
                let (fc, gc) = ev.eval(&cand);
                seen.push((gc, fc));
                let better = match lam {
                    None => gc <= bound && fc < f,
                    Some(l) => score(fc, gc, *l) < score(f, g, *l),
                };
                if better {
                    (f, g, v) = (fc, gc, cand);
                    step = (step * 1.3).min(1.0);
                } else {
                    step = (step * 0.8).max(1e-4);
                }
            }
            seen
        })
        .collect();
    points.extend(refined.into_iter().flatten());
    hull_value(&mut points, bound)
        .map(|v| v.max(0.0))
        .ok_or_else(|| QrdError::InvalidArgument(format!("no sampled channel meets D = {d}")))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::distortion::DistortionKind;
    use crate::qcore::{ket, ket_plus};

    fn classical_pair() -> Ensemble {
        Ensemble::from_pure(&[0.5, 0.5], &[ket(2, 0), ket(2, 1)]).unwrap()
    }

    fn fid(e: &Ensemble) -> Distortion {
        Distortion::for_ensemble(e, DistortionKind::Fidelity, e.dim_a()).unwrap()
    }

    #[test]
    fn objective_paths_agree() {
        let e = Ensemble::from_pure(&[0.3, 0.7], &[ket(2, 0), ket_plus()]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let bar = e.average_aj();
        let (phi, r) = purification_matrix(&bar);
        let map = ChannelMap::new(&phi, 2, r, 2, 2);
        let s_bar = qcore::entropy_of_spectrum(&linalg::eigvalsh(&bar));
        for _ in 0..5 {
            let j = optim::random_choi(2, 2, &mut rng);
            let t = map.apply(&j);
            let sb = qcore::entropy_of_spectrum(&linalg::eigvalsh(&linalg::ptrace_keep(&t, &[2, r], &[0])));
            let st = qcore::entropy_of_spectrum(&linalg::eigvalsh(&t));
            let fast = 0.5 * (sb + s_bar - st);
            let slow = rea_objective(&e, &Channel::new(j, 2, 2).unwrap()).unwrap();
            assert!((fast - slow).abs() < 1e-9, "{fast} vs {slow}");
        }
    }

    #[test]
    fn single_state_rate_is_zero() {
        let e = Ensemble::from_pure(&[1.0], &[ket_plus()]).unwrap();
        let p = rea_point(&e, 0.0, &fid(&e), &SolverOpts::default()).unwrap();
        assert!(p.rate < 1e-4, "{}", p.rate);
        assert!(p.distortion <= 1e-6 + ZERO_DISTORTION);
    }

    #[test]
    fn classical_pair_values() {
        let e = classical_pair();
        let p0 = rea_point(&e, 0.0, &fid(&e), &SolverOpts::default()).unwrap();
        assert!((p0.rate - 0.5).abs() <= 0.02, "{}", p0.rate);
        let p1 = rea_point(&e, 0.55, &fid(&e), &SolverOpts::default()).unwrap();
        assert!(p1.rate <= 1e-3, "{}", p1.rate);
        for p in [&p0, &p1] {
            let out = output_cq(&e, &p.channel).unwrap();
            assert!(fid(&e).delta(&out).unwrap() <= p.d.max(ZERO_DISTORTION) + 1e-6);
        }
    }

    #[test]
    fn negative_distortion_rejected() {
        let e = classical_pair();
        assert!(rea_point(&e, -0.1, &fid(&e), &SolverOpts::default()).is_err());
    }

    #[test]
    fn brute_force_classical_pair() {
        let e = classical_pair();
        let grid = GridSpec { samples: 20_000, ..GridSpec::default() };
        let v = brute_force_rea(&e, 0.0, &fid(&e), &grid).unwrap();
        assert!((v - 0.5).abs() <= 0.03, "{v}");
        let single = Ensemble::from_pure(&[1.0], &[ket(2, 0)]).unwrap();
        assert!(brute_force_rea(&single, 0.0, &fid(&single), &grid).unwrap() < 0.03);
    }

    #[test]
    fn hull_interpolates_between_feasible_and_infeasible_points() {
        let mut pts = vec![(0.0, 1.0), (0.4, 0.0), (0.2, 0.9), (0.1, 2.0)];
        assert!((hull_value(&mut pts, 0.2).unwrap() - 0.5).abs() < 1e-12);
        assert_eq!(hull_value(&mut pts, 1.0), Some(0.0));
        assert_eq!(hull_value(&mut pts, -0.1), None);
    }

    #[test]
    fn shape_violation_detection() {
        let ds = [0.0, 0.1, 0.2, 0.3];
        assert_eq!(shape_violations(&ds, &[1.0, 0.6, 0.3, 0.1]), (0.0, 0.0));
        let (m, c) = shape_violations(&ds, &[1.0, 0.9, 0.2, 0.25]);
        assert!((m - 0.05).abs() < 1e-12);
        assert!(c > 0.3);
    }
}
