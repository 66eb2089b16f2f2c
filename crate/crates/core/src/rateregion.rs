//! Achievable qubit/entanglement rate pairs `(R, R + E)` from an encoder
//! `N` and a map `Λ` on its Stinespring environment.
//!
//! With `V: AJ → B ⊗ E` the Stinespring isometry of `N` and
//! `τ = (id_B ⊗ Λ)(V ψ V†)` on `B E_B X X' R`, a corner is
//! `R_min = ½ I(B E_B : X X' R)` and `sum_min = S(B E_B)`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::channel::{self, Channel, Isometry};
use crate::distortion::Distortion;
use crate::ensemble::{Ensemble, LABEL_A, LABEL_J, LABEL_R, LABEL_X, LABEL_XP};
use crate::epsolver::{self, EpOpts};
use crate::error::{QrdError, Result};
use crate::linalg::{self, cr, CMatrix};
use crate::qcore::{self, DensityOp};
use crate::rdsolver::{self, SolverOpts};

const JOINT_LABEL: &str = "BE";

#[derive(Debug, Clone)]
pub struct RegionPoint {
    pub d: f64,
    pub k: usize,
    pub r_min: f64,
    pub sum_min: f64,
    pub n: Channel,
    pub lambda: Channel,
    pub lambda_kind: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RegionOpts {
    /// Number of seeded random maps `Λ` in the sweep.
    pub random_lambdas: usize,
    pub seed: u64,
    pub solver: SolverOpts,
    /// Options for the unassisted corner; `None` skips it.
    pub unassisted: Option<EpOpts>,
}

impl Default for RegionOpts {
    fn default() -> Self {
        Self {
            random_lambdas: 50,
            seed: 0,
            solver: SolverOpts::default(),
            unassisted: Some(EpOpts::default()),
        }
    }
}

#[derive(Debug, Clone)]
pub struct RegionCurve {
    /// Pareto front, `r_min` increasing and `sum_min` decreasing.
    pub points: Vec<RegionPoint>,
    /// Number of evaluated `(N, Λ)` pairs before filtering.
    pub candidates: usize,
    /// Assisted rate of the encoder the sweep is built on.
    pub assisted_rate: f64,
    /// Unassisted upper bound used for the extra corner, if computed.
    pub unassisted_rate: Option<f64>,
}

impl RegionCurve {
    pub fn min_rate(&self) -> f64 {
        self.points.iter().map(|p| p.r_min).fold(f64::INFINITY, f64::min)
    }

    pub fn min_sum(&self) -> f64 {
        self.points.iter().map(|p| p.sum_min).fold(f64::INFINITY, f64::min)
    }

    /// Whether some point is at least as good as `(r, s)` up to `tol` in
    /// both coordinates.
    pub fn dominates(&self, r: f64, s: f64, tol: f64) -> bool {
        self.points.iter().any(|p| p.r_min <= r + tol && p.sum_min <= s + tol)
    }
}

/// Corner `(R_min, sum_min)` for the encoder `n` and the environment map
/// `lambda`. `d` is recorded as given.
pub fn region_corner(e: &Ensemble, n: &Channel, lambda: &Channel, d: f64, kind: &str) -> Result<RegionPoint> {
    if n.dim_in() != e.dim_a() * e.dim_j() {
        return Err(QrdError::DimensionMismatch(format!(
            "encoder input {} does not match dimA·dimJ = {}",
            n.dim_in(),
            e.dim_a() * e.dim_j()
        )));
    }
    let v = n.stinespring();
    if lambda.dim_in() != v.dim_env {
        return Err(QrdError::DimensionMismatch(format!(
            "environment map input {} does not match the environment dimension {}",
            lambda.dim_in(),
            v.dim_env
        )));
    }
    let joint = dilation(&v).then(&Channel::identity(n.dim_out()).tensor(lambda))?;
    let (r_min, sum_min) = joint_corner(e, &joint)?;
    Ok(RegionPoint {
        d,
        k: 1,
        r_min,
        sum_min,
        n: n.clone(),
        lambda: lambda.clone(),
        lambda_kind: kind.to_string(),
    })
}

/// `ρ ↦ V ρ V†` onto `Out ⊗ Env`.
fn dilation(v: &Isometry) -> Channel {
    Channel::from_isometry(&Isometry {
        matrix: v.matrix.clone(),
        dim_in: v.dim_in,
        dim_out: v.dim_out * v.dim_env,
        dim_env: 1,
    })
}

/// `(½ I(BE : XX'R), S(BE))` for a joint map `AJ → B ⊗ E_B`.
fn joint_corner(e: &Ensemble, joint: &Channel) -> Result<(f64, f64)> {
    let psi = DensityOp::from_pure(&e.purified_source().psi);
    let tau = joint.apply(&psi, &[LABEL_A, LABEL_J], JOINT_LABEL)?;
    let r = 0.5 * qcore::mutual_information(&tau, &[JOINT_LABEL], &[LABEL_X, LABEL_XP, LABEL_R])?;
    let s = qcore::entropy_of(&tau, &[JOINT_LABEL])?;
    Ok((r.max(0.0), s.max(0.0)))
}

/// Prime factors of `n` in increasing order.
fn factorize(mut n: usize) -> Vec<usize> {
    let mut out = Vec::new();
    let mut p = 2;
    while p * p <= n {
        while n.is_multiple_of(p) {
            out.push(p);
            n /= p;
        }
        p += 1;
    }
    if n > 1 {
        out.push(n);
    }
    out
}

/// Partial trace on `⊗ dims` keeping the factors flagged in `keep`.
pub fn keep_factors(dims: &[usize], keep: &[bool]) -> Channel {
    let total: usize = dims.iter().product();
    let dk: usize = dims.iter().zip(keep).filter(|(_, &k)| k).map(|(d, _)| d).product();
    let dt = total / dk;
    let mut kraus = vec![CMatrix::zeros(dk, total); dt];
    for i in 0..total {
        let (mut rest, mut ik, mut it) = (i, 0, 0);
        let (mut wk, mut wt) = (1, 1);
        for (f, &d) in dims.iter().enumerate().rev() {
            let digit = rest % d;
            rest /= d;
            if keep[f] {
                ik += digit * wk;
                wk *= d;
            } else {
                it += digit * wt;
                wt *= d;
            }
        }
        kraus[it][(ik, i)] = cr(1.0);
    }
    Channel::from_kraus(&kraus)
}

/// `ω ↦ Tr_G(U ω U†)` for a Haar isometry `U: E → E_B ⊗ G` with `dim G = dim E`.
fn random_environment_map(de: usize, rng: &mut ChaCha8Rng) -> Channel {
    let out = rng.random_range(1..=de);
    let v = Isometry {
        matrix: linalg::random_isometry(out * de, de, rng),
        dim_in: de,
        dim_out: out,
        dim_env: de,
    };
    Channel::from_isometry(&v)
}

/// Map `Λ` on the environment of `n` such that `(id ⊗ Λ) ∘ V_n` equals
/// `joint: AJ → B ⊗ F`, where `n = Tr_F joint`.
pub fn environment_map_for(n: &Channel, joint: &Channel) -> Result<Channel> {
    let db = n.dim_out();
    if joint.dim_in() != n.dim_in() || !joint.dim_out().is_multiple_of(db) {
        return Err(QrdError::DimensionMismatch("joint map does not extend the encoder".into()));
    }
    let df = joint.dim_out() / db;
    let kn = n.kraus();
    let norms: Vec<f64> = kn.iter().map(|k| k.norm_squared()).collect();
    let kj = joint.kraus();
    let de = kn.len();
    // Λ_g[f, k] = ⟨K_k, (I ⊗ ⟨f|) L_g⟩ / ‖K_k‖², Kraus operators of n being
    // Hilbert–Schmidt orthogonal.
    let lam: Vec<CMatrix> = kj
        .iter()
        .map(|l| {
            CMatrix::from_fn(df, de, |f, k| {
                let sub = CMatrix::from_fn(db, n.dim_in(), |b, i| l[(b * df + f, i)]);
                kn[k].iter().zip(sub.iter()).map(|(a, b)| a.conj() * b).sum::<num_complex::Complex64>() / cr(norms[k])
            })
        })
        .collect();
    let choi = Channel::from_kraus(&lam).choi().clone();
    match Channel::new(choi.clone(), de, df) {
        Ok(c) => Ok(c),
        Err(_) => channel::project_cptp(&choi, de, df),
    }
}

/// Keep only points not dominated in both coordinates.
pub fn pareto_filter(mut pts: Vec<RegionPoint>) -> Vec<RegionPoint> {
    pts.sort_by(|a, b| a.r_min.total_cmp(&b.r_min).then(a.sum_min.total_cmp(&b.sum_min)));
    let mut out: Vec<RegionPoint> = Vec::new();
    let mut best = f64::INFINITY;
    for p in pts {
        if p.sum_min < best - 1e-9 {
            best = p.sum_min;
            out.push(p);
        }
    }
    out
}

/// Sweep of environment maps on the assisted encoder at distortion `d`,
/// plus the unassisted corner when `d` admits it, Pareto filtered.
pub fn region_curve(e: &Ensemble, d: f64, dist: &Distortion, opts: &RegionOpts) -> Result<RegionCurve> {
    let rea = rdsolver::rea_point(e, d, dist, &opts.solver)?;
    let n = rea.channel.clone();
    let de = n.stinespring().dim_env;
    let factors = factorize(de);
    let mut lambdas: Vec<(Channel, String)> = Vec::new();
    for mask in 0..(1usize << factors.len()) {
        let keep: Vec<bool> = (0..factors.len()).map(|f| mask >> f & 1 == 1).collect();
        let kind = if mask == 0 {
            "trace".to_string()
        } else if keep.iter().all(|&k| k) {
            "identity".to_string()
        } else {
            let idx: Vec<String> = (0..factors.len()).filter(|&f| keep[f]).map(|f| f.to_string()).collect();
            format!("keep:{}", idx.join(","))
        };
        lambdas.push((keep_factors(&factors, &keep), kind));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    for _ in 0..opts.random_lambdas {
        lambdas.push((random_environment_map(de, &mut rng), "random".to_string()));
    }
    let mut pts: Vec<RegionPoint> = lambdas
        .par_iter()
        .map(|(l, kind)| region_corner(e, &n, l, d, kind))
        .collect::<Result<_>>()?;
    let mut unassisted_rate = None;
    if let Some(ep) = &opts.unassisted {
        if d >= epsolver::UNASSISTED_MIN_D && e.is_blind() {
            let (ua, joint) = epsolver::unassisted_encoder(e, d, dist, 1, ep)?;
            unassisted_rate = Some(ua.rate);
            let lam = environment_map_for(&ua.channel, &joint)?;
            pts.push(region_corner(e, &ua.channel, &lam, d, "unassisted")?);
        }
    }
    let candidates = pts.len();
    Ok(RegionCurve {
        points: pareto_filter(pts),
        candidates,
        assisted_rate: rea.rate,
        unassisted_rate,
    })
}
