use std::fmt;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::ensemble::{Ensemble, LABEL_X};
use crate::error::{QrdError, Result};
use crate::linalg::{self, cr, CMatrix};
use crate::qcore::{self, DensityOp, DimLayout};

pub const LABEL_B: &str = "B";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum DistortionKind {
    /// `1 − F(ρ^{BX}, τ^{BX})`.
    #[default]
    Fidelity,
    /// `½‖τ^{BX} − ρ^{BX}‖₁`.
    Trace,
}

impl fmt::Display for DistortionKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DistortionKind::Fidelity => "fidelity",
            DistortionKind::Trace => "trace",
        })
    }
}

impl FromStr for DistortionKind {
    type Err = QrdError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "fidelity" => Ok(Self::Fidelity),
            "trace" => Ok(Self::Trace),
            other => Err(QrdError::InvalidArgument(format!("unknown distortion kind {other}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PerCopyMode {
    Max,
    Ave,
}

impl FromStr for PerCopyMode {
    type Err = QrdError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "max" => Ok(Self::Max),
            "ave" => Ok(Self::Ave),
            other => Err(QrdError::InvalidArgument(format!("unknown per-copy mode {other}"))),
        }
    }
}

/// Distortion on the `BX` state measured against the reference `ρ^{BX}`.
#[derive(Debug, Clone)]
pub struct Distortion {
    kind: DistortionKind,
    reference: DensityOp,
    /// Continuity constant. Exact for `Trace`; an empirical estimate for
    /// `Fidelity` (see `lipschitz_certified`).
    pub lipschitz_k: f64,
    pub lipschitz_certified: bool,
    dim_b: usize,
    dim_x: usize,
    blocks: Vec<RefBlock>,
}

#[derive(Debug, Clone)]
struct RefBlock {
    sqrt: CMatrix,
}

impl Distortion {
    /// Reference `ρ^{BX}` given directly on layout `[B, X]`.
    pub fn new(kind: DistortionKind, reference: DensityOp) -> Result<Self> {
        let dims = reference.layout().dims();
        if dims.len() != 2 {
            return Err(QrdError::DimensionMismatch(format!(
                "reference must have layout [B, X], got {:?}",
                reference.layout().labels()
            )));
        }
        let (dim_b, dim_x) = (dims[0], dims[1]);
        let blocks = (0..dim_x)
            .map(|x| RefBlock {
                sqrt: linalg::sqrtm_psd(&x_block(reference.matrix(), dim_b, dim_x, x)),
            })
            .collect();
        let mut d = Self {
            kind,
            reference,
            lipschitz_k: 0.5,
            lipschitz_certified: true,
            dim_b,
            dim_x,
            blocks,
        };
        if kind == DistortionKind::Fidelity {
            d.lipschitz_k = d.estimate_lipschitz(200, 0x4b);
            d.lipschitz_certified = false;
        }
        Ok(d)
    }

    /// Reference `ρ^{AX}` of `e`, embedded into `B` (`dim_b ≥ dimA`) on the
    /// leading basis vectors.
    pub fn for_ensemble(e: &Ensemble, kind: DistortionKind, dim_b: usize) -> Result<Self> {
        Self::new(kind, embedded_reference(e, dim_b)?)
    }

    pub fn kind(&self) -> DistortionKind {
        self.kind
    }

    pub fn reference(&self) -> &DensityOp {
        &self.reference
    }

    pub fn dim_b(&self) -> usize {
        self.dim_b
    }

    pub fn dim_x(&self) -> usize {
        self.dim_x
    }

    /// `Δ(τ)` for `τ` on `[B, X]`.
    pub fn delta(&self, tau: &DensityOp) -> Result<f64> {
        if tau.layout().dims() != vec![self.dim_b, self.dim_x] {
            return Err(QrdError::DimensionMismatch(format!(
                "τ has dims {:?}, reference has [{}, {}]",
                tau.layout().dims(),
                self.dim_b,
                self.dim_x
            )));
        }
        Ok(self.delta_matrix(tau.matrix()))
    }

    /// `Δ` of a raw matrix on `B ⊗ X`.
    pub fn delta_matrix(&self, tau: &CMatrix) -> f64 {
        match self.kind {
            DistortionKind::Trace => {
                (0.5 * linalg::trace_norm(&(tau - self.reference.matrix()))).max(0.0)
            }
            DistortionKind::Fidelity => {
                if is_x_block_diagonal(tau, self.dim_b, self.dim_x) {
                    let root: f64 = (0..self.dim_x)
                        .map(|x| self.block_root_fidelity(tau, x))
                        .sum();
                    (1.0 - root * root).max(0.0)
                } else {
                    (1.0 - qcore::fidelity_of_matrices(self.reference.matrix(), tau)).max(0.0)
                }
            }
        }
    }

    fn block_root_fidelity(&self, tau: &CMatrix, x: usize) -> f64 {
        let s = &self.blocks[x].sqrt;
        let t = x_block(tau, self.dim_b, self.dim_x, x);
        let m = linalg::hermitize(&(s * t * s));
        linalg::eigvalsh(&m).iter().map(|&l| linalg::clipped_sqrt(l)).sum()
    }

    /// Gradient `∂Δ/∂τ` (Hermitian, w.r.t. the real inner product
    /// `Re Tr(A†B)`). Uses a subgradient for the trace kind.
    pub fn gradient_matrix(&self, tau: &CMatrix) -> CMatrix {
        match self.kind {
            DistortionKind::Trace => {
                let diff = linalg::hermitize(&(tau - self.reference.matrix()));
                linalg::herm_fn(&diff, |l| 0.5 * l.signum() * (l.abs() > 1e-14) as u8 as f64)
            }
            DistortionKind::Fidelity => {
                let n = self.dim_b * self.dim_x;
                let mut parts = Vec::with_capacity(self.dim_x);
                let mut root = 0.0;
                for x in 0..self.dim_x {
                    let s = &self.blocks[x].sqrt;
                    let t = x_block(tau, self.dim_b, self.dim_x, x);
                    let m = linalg::hermitize(&(s * t * s));
                    let (vals, vecs) = linalg::eigh(&m);
                    root += vals.iter().map(|&l| linalg::clipped_sqrt(l)).sum::<f64>();
                    let inv = linalg::from_eig(&vals, &vecs, |l| if l > 1e-12 { 1.0 / l.sqrt() } else { 0.0 });
                    parts.push(s * inv * s);
                }
                // dF/dτ_x = √F · √ρ_x M_x^{-1/2} √ρ_x with √F = Σ_x Tr √M_x.
                let mut g = CMatrix::zeros(n, n);
                for (x, p) in parts.into_iter().enumerate() {
                    for b in 0..self.dim_b {
                        for bp in 0..self.dim_b {
                            g[(b * self.dim_x + x, bp * self.dim_x + x)] = -p[(b, bp)] * cr(root);
                        }
                    }
                }
                linalg::hermitize(&g)
            }
        }
    }

    /// Per-copy criterion over `ξ` whose factors include every label pair
    /// in `pairs` as `(B_i, X_i)`.
    pub fn per_copy(&self, xi: &DensityOp, pairs: &[(&str, &str)], mode: PerCopyMode) -> Result<f64> {
        if pairs.is_empty() {
            return Err(QrdError::InvalidArgument("no copies".into()));
        }
        let vals = pairs
            .iter()
            .map(|(b, x)| {
                let marg = qcore::reduce_ordered(xi, &[b, x])?;
                self.delta(&marg.with_layout(bx_layout(self.dim_b, self.dim_x))?)
            })
            .collect::<Result<Vec<f64>>>()?;
        Ok(match mode {
            PerCopyMode::Max => vals.iter().copied().fold(0.0, f64::max),
            PerCopyMode::Ave => vals.iter().sum::<f64>() / vals.len() as f64,
        })
    }

    /// Max of `|Δ(τ) − Δ(τ̃)| / ‖τ − τ̃‖₁` over seeded random pairs near the
    /// reference.
    pub fn estimate_lipschitz(&self, samples: usize, seed: u64) -> f64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = self.dim_b * self.dim_x;
        let mut best: f64 = 0.0;
        for s in 0..samples {
            let w = [0.0, 0.05, 0.3, 1.0][s % 4];
            let mut draw = || {
                let r = linalg::random_density(n, n, &mut rng);
                self.reference.matrix() * cr(1.0 - w) + r * cr(w)
            };
            let (t1, t2) = (draw(), draw());
            let dist = linalg::trace_norm(&(&t1 - &t2));
            if dist > 1e-9 {
                let diff = (self.delta_matrix(&t1) - self.delta_matrix(&t2)).abs();
                best = best.max(diff / dist);
            }
        }
        best
    }
}

pub fn bx_layout(dim_b: usize, dim_x: usize) -> DimLayout {
    DimLayout::new([(LABEL_B, dim_b), (LABEL_X, dim_x)]).expect("distinct labels")
}

/// `Σ_x p_x V ρ_x V† ⊗ |x⟩⟨x|` with `V` the leading-coordinate embedding
/// `A ↪ B`.
pub fn embedded_reference(e: &Ensemble, dim_b: usize) -> Result<DensityOp> {
    let da = e.dim_a();
    if dim_b < da {
        return Err(QrdError::InvalidArgument(format!(
            "output dimension {dim_b} is smaller than the source dimension {da}"
        )));
    }
    let nx = e.len();
    let mut m = CMatrix::zeros(dim_b * nx, dim_b * nx);
    for (x, it) in e.items().iter().enumerate() {
        for a in 0..da {
            for ap in 0..da {
                m[(a * nx + x, ap * nx + x)] = it.rho[(a, ap)] * cr(it.p);
            }
        }
    }
    Ok(DensityOp::new_unchecked(m, bx_layout(dim_b, nx)))
}

/// Sub-block `⟨b,x| M |b',x⟩` for fixed `x`.
pub(crate) fn x_block(m: &CMatrix, db: usize, nx: usize, x: usize) -> CMatrix {
    CMatrix::from_fn(db, db, |b, bp| m[(b * nx + x, bp * nx + x)])
}

fn is_x_block_diagonal(m: &CMatrix, db: usize, nx: usize) -> bool {
    let scale = m.norm().max(1.0);
    for r in 0..db * nx {
        for c in 0..db * nx {
            if r % nx != c % nx && m[(r, c)].norm() > 1e-13 * scale {
                return false;
            }
        }
    }
    true
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::qcore::{ket, ket_plus};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn nonorthogonal() -> Ensemble {
        Ensemble::from_pure(&[0.5, 0.5], &[ket(2, 0), ket_plus()]).unwrap()
    }

    fn cq_from_blocks(blocks: &[CMatrix], db: usize) -> CMatrix {
        let nx = blocks.len();
        let mut m = CMatrix::zeros(db * nx, db * nx);
        for (x, b) in blocks.iter().enumerate() {
            for i in 0..db {
                for j in 0..db {
                    m[(i * nx + x, j * nx + x)] = b[(i, j)];
                }
            }
        }
        m
    }

    #[test]
    fn reference_has_zero_distortion() {
        for kind in [DistortionKind::Fidelity, DistortionKind::Trace] {
            let d = Distortion::for_ensemble(&nonorthogonal(), kind, 2).unwrap();
            assert!(d.delta(d.reference()).unwrap() < 1e-12);
        }
    }

    #[test]
    fn orthogonal_support_gives_one() {
        let e = Ensemble::from_pure(&[1.0], &[ket(2, 0)]).unwrap();
        for kind in [DistortionKind::Fidelity, DistortionKind::Trace] {
            let d = Distortion::for_ensemble(&e, kind, 2).unwrap();
            let tau = DensityOp::new(linalg::outer(&ket(2, 1)), bx_layout(2, 1)).unwrap();
            assert!((d.delta(&tau).unwrap() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn block_fidelity_matches_full_matrix() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..20 {
            let p = [0.3, 0.7];
            let rhos: Vec<CMatrix> = (0..2).map(|_| linalg::random_density(3, 2, &mut rng)).collect();
            let taus: Vec<CMatrix> = (0..2).map(|_| linalg::random_density(3, 3, &mut rng)).collect();
            let e = Ensemble::from_mixed(&p, &rhos).unwrap();
            let d = Distortion::for_ensemble(&e, DistortionKind::Fidelity, 3).unwrap();
            let tau_blocks: Vec<CMatrix> = taus.iter().zip(p).map(|(t, q)| t * cr(q)).collect();
            let tau = cq_from_blocks(&tau_blocks, 3);
            let full = 1.0 - qcore::fidelity_of_matrices(d.reference().matrix(), &tau);
            // Classical marginals match: 1 − (Σ p_x √F(ρ_x, τ_x))².
            let s: f64 = (0..2)
                .map(|x| p[x] * qcore::fidelity_of_matrices(&rhos[x], &taus[x]).sqrt())
                .sum();
            assert!((d.delta_matrix(&tau) - full).abs() < 1e-9);
            assert!((d.delta_matrix(&tau) - (1.0 - s * s)).abs() < 1e-9);
        }
    }

    #[test]
    fn fidelity_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let e = nonorthogonal();
        let d = Distortion::for_ensemble(&e, DistortionKind::Fidelity, 2).unwrap();
        for _ in 0..10 {
            let blocks: Vec<CMatrix> = (0..2).map(|_| linalg::random_density(2, 2, &mut rng) * cr(0.5)).collect();
            let tau = cq_from_blocks(&blocks, 2);
            let g = d.gradient_matrix(&tau);
            let dir_blocks: Vec<CMatrix> = (0..2).map(|_| linalg::random_hermitian(2, &mut rng)).collect();
            let dir = cq_from_blocks(&dir_blocks, 2);
            let h = 1e-6;
            let fd = (d.delta_matrix(&(&tau + &dir * cr(h))) - d.delta_matrix(&(&tau - &dir * cr(h)))) / (2.0 * h);
            let an = linalg::inner(&g, &dir);
            assert!((fd - an).abs() <= 1e-4 * an.abs().max(1e-3), "{fd} vs {an}");
        }
    }

    #[test]
    fn per_copy_modes() {
        let e = nonorthogonal();
        let d = Distortion::for_ensemble(&e, DistortionKind::Trace, 2).unwrap();
        let r = d.reference().matrix().clone();
        // Copy 1 exact, copy 2 at trace distance 0.2.
        let mut other = r.clone();
        let shift = 0.2;
        other[(0, 0)] -= cr(shift);
        other[(2, 2)] += cr(shift);
        let joint = linalg::kron(&r, &other);
        let layout = DimLayout::new([("B1", 2), ("X1", 2), ("B2", 2), ("X2", 2)]).unwrap();
        let xi = DensityOp::new(joint, layout).unwrap();
        let pairs = [("B1", "X1"), ("B2", "X2")];
        let mx = d.per_copy(&xi, &pairs, PerCopyMode::Max).unwrap();
        let av = d.per_copy(&xi, &pairs, PerCopyMode::Ave).unwrap();
        assert!((mx - 0.2).abs() < 1e-12);
        assert!((av - 0.1).abs() < 1e-12);
        let single = d.per_copy(&xi, &pairs[..1], PerCopyMode::Max).unwrap();
        assert!(single.abs() < 1e-12);
    }

    #[test]
    fn trace_lipschitz_holds() {
        let e = nonorthogonal();
        let d = Distortion::for_ensemble(&e, DistortionKind::Trace, 2).unwrap();
        assert!(d.estimate_lipschitz(200, 1) <= 0.5 + 1e-9);
        let f = Distortion::for_ensemble(&e, DistortionKind::Fidelity, 2).unwrap();
        assert!(!f.lipschitz_certified);
        assert!(f.lipschitz_k > 0.0);
    }

    #[test]
    fn embedding_requires_large_enough_output() {
        let e = Ensemble::from_pure(&[1.0], &[ket(3, 0)]).unwrap();
        assert!(Distortion::for_ensemble(&e, DistortionKind::Trace, 2).is_err());
        let d = Distortion::for_ensemble(&e, DistortionKind::Trace, 4).unwrap();
        assert_eq!(d.dim_b(), 4);
    }
}
