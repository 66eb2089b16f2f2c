use crate::error::{QrdError, Result};
use crate::linalg::{self, cr, CMatrix, CVector};
use crate::qcore::{self, DensityOp, DimLayout, PureState, STATE_TOL};

pub const LABEL_A: &str = "A";
pub const LABEL_J: &str = "J";
pub const LABEL_X: &str = "X";
pub const LABEL_XP: &str = "Xp";
pub const LABEL_R: &str = "R";

/// Largest allowed `k·log₂(dimA·dimJ·|Σ|)` for tensor powers.
pub const TENSOR_POWER_CAP_BITS: f64 = 16.0;

#[derive(Debug, Clone)]
pub struct EnsembleItem {
    pub p: f64,
    pub rho: CMatrix,
    pub j: Option<CVector>,
}

/// An ensemble `{p_x, ρ_x, |j_x⟩}`. `dim_j == 1` encodes blind sources.
///
/// Tensor powers keep their per-copy shape: item `x` of a `k`-copy
/// ensemble is the lexicographic tuple `(x_1, …, x_k)` and `A` factors as
/// `A_1 ⊗ … ⊗ A_k`.
#[derive(Debug, Clone)]
pub struct Ensemble {
    dim_a: usize,
    dim_j: usize,
    items: Vec<EnsembleItem>,
    copies: usize,
    base_dim_a: usize,
    base_dim_j: usize,
    base_len: usize,
}

#[derive(Debug, Clone)]
pub struct PurifiedSource {
    pub psi: PureState,
}

impl PurifiedSource {
    pub fn density(&self) -> DensityOp {
        DensityOp::from_pure(&self.psi)
    }
}

impl Ensemble {
    pub fn new(dim_a: usize, items: Vec<EnsembleItem>) -> Result<Self> {
        if dim_a == 0 {
            return Err(QrdError::InvalidEnsemble("dimA must be positive".into()));
        }
        if items.is_empty() {
            return Err(QrdError::InvalidEnsemble("no items".into()));
        }
        let mut dim_j = None;
        let mut total = 0.0;
        for (x, it) in items.iter().enumerate() {
            let fail = |msg: String| QrdError::InvalidEnsemble(format!("item {x}: {msg}"));
            if !it.p.is_finite() || it.p < 0.0 {
                return Err(fail(format!("probability {} is not a non-negative number", it.p)));
            }
            total += it.p;
            if it.rho.nrows() != dim_a || it.rho.ncols() != dim_a {
                return Err(fail(format!(
                    "rho is {}x{}, expected {dim_a}x{dim_a}",
                    it.rho.nrows(),
                    it.rho.ncols()
                )));
            }
            DensityOp::new(it.rho.clone(), DimLayout::single(LABEL_A, dim_a))
                .map_err(|e| fail(e.to_string()))?;
            let dj = match &it.j {
                Some(v) => {
                    if (v.norm() - 1.0).abs() > STATE_TOL {
                        return Err(fail(format!("side-information norm {} ≠ 1", v.norm())));
                    }
                    v.len()
                }
                None => 1,
            };
            match dim_j {
                None => dim_j = Some(dj),
                Some(d) if d != dj => {
                    return Err(fail(format!("side-information dimension {dj}, expected {d}")))
                }
                _ => {}
            }
        }
        if (total - 1.0).abs() > 1e-9 {
            return Err(QrdError::InvalidEnsemble(format!("probabilities sum to {total}")));
        }
        let dim_j = dim_j.unwrap_or(1);
        let items = items
            .into_iter()
            .map(|it| EnsembleItem {
                p: it.p,
                rho: linalg::hermitize(&it.rho),
                j: it.j,
            })
            .collect::<Vec<_>>();
        let base_len = items.len();
        Ok(Self {
            dim_a,
            dim_j,
            items,
            copies: 1,
            base_dim_a: dim_a,
            base_dim_j: dim_j,
            base_len,
        })
    }

    /// Blind ensemble of pure states.
    pub fn from_pure(probs: &[f64], states: &[CVector]) -> Result<Self> {
        if probs.len() != states.len() {
            return Err(QrdError::InvalidEnsemble("probability and state counts differ".into()));
        }
        let dim_a = states.first().map(|v| v.len()).unwrap_or(0);
        let items = probs
            .iter()
            .zip(states)
            .map(|(&p, v)| EnsembleItem {
                p,
                rho: linalg::outer(v),
                j: None,
            })
            .collect();
        Self::new(dim_a, items)
    }

    /// Blind ensemble of density matrices.
    pub fn from_mixed(probs: &[f64], states: &[CMatrix]) -> Result<Self> {
        if probs.len() != states.len() {
            return Err(QrdError::InvalidEnsemble("probability and state counts differ".into()));
        }
        let dim_a = states.first().map(|m| m.nrows()).unwrap_or(0);
        let items = probs
            .iter()
            .zip(states)
            .map(|(&p, m)| EnsembleItem {
                p,
                rho: m.clone(),
                j: None,
            })
            .collect();
        Self::new(dim_a, items)
    }

    pub fn dim_a(&self) -> usize {
        self.dim_a
    }

    pub fn dim_j(&self) -> usize {
        self.dim_j
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn items(&self) -> &[EnsembleItem] {
        &self.items
    }

    pub fn probs(&self) -> Vec<f64> {
        self.items.iter().map(|it| it.p).collect()
    }

    pub fn copies(&self) -> usize {
        self.copies
    }

    pub fn base_dim_a(&self) -> usize {
        self.base_dim_a
    }

    pub fn base_dim_j(&self) -> usize {
        self.base_dim_j
    }

    pub fn base_len(&self) -> usize {
        self.base_len
    }

    pub fn is_blind(&self) -> bool {
        self.dim_j == 1
    }

    /// `ρ_x ⊗ |j_x⟩⟨j_x|` on `AJ`.
    pub fn item_state_aj(&self, x: usize) -> CMatrix {
        let it = &self.items[x];
        match &it.j {
            Some(j) => linalg::kron(&it.rho, &linalg::outer(j)),
            None => it.rho.clone(),
        }
    }

    /// Average state `Σ p_x ρ_x ⊗ |j_x⟩⟨j_x|` on `AJ`.
    pub fn average_aj(&self) -> CMatrix {
        let n = self.dim_a * self.dim_j;
        self.items
            .iter()
            .enumerate()
            .fold(CMatrix::zeros(n, n), |acc, (x, it)| acc + self.item_state_aj(x) * cr(it.p))
    }

    /// Average state on `A` alone.
    pub fn average_a(&self) -> CMatrix {
        let n = self.dim_a;
        self.items
            .iter()
            .fold(CMatrix::zeros(n, n), |acc, it| acc + &it.rho * cr(it.p))
    }

    pub fn cq_layout(&self) -> DimLayout {
        DimLayout::new([
            (LABEL_A, self.dim_a),
            (LABEL_J, self.dim_j),
            (LABEL_X, self.len()),
        ])
        .expect("distinct labels")
    }

    /// `Σ p_x ρ_x ⊗ |j_x⟩⟨j_x| ⊗ |x⟩⟨x|` on `A J X`.
    pub fn cq_state(&self) -> DensityOp {
        let nx = self.len();
        let naj = self.dim_a * self.dim_j;
        let mut m = CMatrix::zeros(naj * nx, naj * nx);
        for (x, it) in self.items.iter().enumerate() {
            let block = self.item_state_aj(x) * cr(it.p);
            for r in 0..naj {
                for c in 0..naj {
                    m[(r * nx + x, c * nx + x)] = block[(r, c)];
                }
            }
        }
        DensityOp::new_unchecked(m, self.cq_layout())
    }

    /// Common reference dimension `max_x rank(ρ_x)`.
    pub fn reference_dim(&self) -> usize {
        self.items
            .iter()
            .map(|it| {
                linalg::eigvalsh(&it.rho)
                    .iter()
                    .filter(|&&l| l > qcore::EIG_CLIP)
                    .count()
            })
            .max()
            .unwrap_or(1)
            .max(1)
    }

    /// `Σ √p_x |φ_x⟩^{AR} |j_x⟩ |x⟩ |x⟩` on `A J X Xp R`.
    pub fn purified_source(&self) -> PurifiedSource {
        let nx = self.len();
        let rd = self.reference_dim();
        let (da, dj) = (self.dim_a, self.dim_j);
        let layout = DimLayout::new([
            (LABEL_A, da),
            (LABEL_J, dj),
            (LABEL_X, nx),
            (LABEL_XP, nx),
            (LABEL_R, rd),
        ])
        .expect("distinct labels");
        let mut psi = CVector::zeros(layout.total_dim());
        for (x, it) in self.items.iter().enumerate() {
            if it.p <= 0.0 {
                continue;
            }
            let rho = DensityOp::new_unchecked(it.rho.clone(), DimLayout::single(LABEL_A, da));
            let phi = qcore::purify_with_dim(&rho, LABEL_R, Some(rd))
                .expect("valid item state purifies");
            let j = it.j.clone().unwrap_or_else(|| CVector::from_element(1, cr(1.0)));
            let w = cr(it.p.sqrt());
            for a in 0..da {
                for jj in 0..dj {
                    for r in 0..rd {
                        let amp = phi.vector()[a * rd + r] * j[jj] * w;
                        let idx = (((a * dj + jj) * nx + x) * nx + x) * rd + r;
                        psi[idx] += amp;
                    }
                }
            }
        }
        let norm = psi.norm();
        psi /= cr(norm);
        PurifiedSource {
            psi: PureState::new(psi, layout).expect("normalized purification"),
        }
    }

    /// `k`-fold tensor power with items in lexicographic order.
    pub fn tensor_power(&self, k: usize) -> Result<Ensemble> {
        if k == 0 {
            return Err(QrdError::InvalidArgument("tensor power k must be ≥ 1".into()));
        }
        if self.copies != 1 {
            return Err(QrdError::InvalidArgument(
                "tensor power of a tensor power is not supported".into(),
            ));
        }
        let bits = k as f64 * ((self.dim_a * self.dim_j * self.len()) as f64).log2();
        if bits > TENSOR_POWER_CAP_BITS + 1e-12 {
            return Err(QrdError::CapExceeded(format!(
                "k·log₂(dimA·dimJ·|Σ|) = {bits:.3} > {TENSOR_POWER_CAP_BITS}"
            )));
        }
        if k == 1 {
            return Ok(self.clone());
        }
        let mut items: Vec<EnsembleItem> = self.items.clone();
        for _ in 1..k {
            let mut next = Vec::with_capacity(items.len() * self.len());
            for a in &items {
                for b in &self.items {
                    let j = match (&a.j, &b.j) {
                        (Some(u), Some(v)) => Some(u.kronecker(v)),
                        _ => None,
                    };
                    next.push(EnsembleItem {
                        p: a.p * b.p,
                        rho: linalg::kron(&a.rho, &b.rho),
                        j,
                    });
                }
            }
            items = next;
        }
        let mut out = Ensemble::new(self.dim_a.pow(k as u32), items)?;
        out.copies = k;
        out.base_dim_a = self.dim_a;
        out.base_dim_j = self.dim_j;
        out.base_len = self.len();
        Ok(out)
    }

    /// Replace side information by the orthonormal labels `|x⟩`.
    pub fn visible(&self) -> Ensemble {
        let nx = self.len();
        let items = self
            .items
            .iter()
            .enumerate()
            .map(|(x, it)| EnsembleItem {
                p: it.p,
                rho: it.rho.clone(),
                j: Some(qcore::ket(nx, x)),
            })
            .collect();
        let mut out = Ensemble::new(self.dim_a, items).expect("visible of a valid ensemble");
        out.copies = self.copies;
        out.base_dim_a = self.base_dim_a;
        out.base_dim_j = self.base_len;
        out.base_len = self.base_len;
        out
    }

    /// Drop side information.
    pub fn blind(&self) -> Ensemble {
        let items = self
            .items
            .iter()
            .map(|it| EnsembleItem {
                p: it.p,
                rho: it.rho.clone(),
                j: None,
            })
            .collect();
        let mut out = Ensemble::new(self.dim_a, items).expect("blind of a valid ensemble");
        out.copies = self.copies;
        out.base_dim_a = self.base_dim_a;
        out.base_dim_j = 1;
        out.base_len = self.base_len;
        out
    }

    /// `{p_x, ω ⊗ ρ_x}`.
    pub fn with_redundant_factor(&self, omega: &CMatrix) -> Result<Ensemble> {
        DensityOp::new(omega.clone(), DimLayout::single("N", omega.nrows()))?;
        let items = self
            .items
            .iter()
            .map(|it| EnsembleItem {
                p: it.p,
                rho: linalg::kron(omega, &it.rho),
                j: it.j.clone(),
            })
            .collect();
        Ensemble::new(omega.nrows() * self.dim_a, items)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::qcore::{ket, ket_plus, partial_trace};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn nonorthogonal() -> Ensemble {
        Ensemble::from_pure(&[0.5, 0.5], &[ket(2, 0), ket_plus()]).unwrap()
    }

    fn random_ensemble(seed: u64, with_j: bool) -> Ensemble {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let items = (0..3)
            .map(|_| EnsembleItem {
                p: 1.0 / 3.0,
                rho: linalg::random_density(2, 2, &mut rng),
                j: with_j.then(|| linalg::random_pure(2, &mut rng)),
            })
            .collect();
        Ensemble::new(2, items).unwrap()
    }

    #[test]
    fn cq_state_of_classical_pair() {
        let e = Ensemble::from_pure(&[0.5, 0.5], &[ket(2, 0), ket(2, 1)]).unwrap();
        let cq = e.cq_state();
        let mut expect = CMatrix::zeros(4, 4);
        expect[(0, 0)] = cr(0.5);
        expect[(3, 3)] = cr(0.5);
        assert!((cq.matrix() - expect).norm() < 1e-15);
    }

    #[test]
    fn cq_single_item() {
        let e = Ensemble::from_mixed(&[1.0], &[linalg::identity(2) / cr(2.0)]).unwrap();
        let cq = e.cq_state();
        assert_eq!(cq.layout().dim_of(LABEL_X).unwrap(), 1);
        assert!((cq.matrix() - linalg::identity(2) / cr(2.0)).norm() < 1e-15);
    }

    #[test]
    fn x_marginal_is_exact_distribution() {
        let e = nonorthogonal();
        let x = partial_trace(&e.cq_state(), &[LABEL_X]).unwrap();
        assert!((x.matrix()[(0, 0)].re - 0.5).abs() < 1e-15);
        assert!((x.matrix()[(1, 1)].re - 0.5).abs() < 1e-15);
        assert_eq!(x.matrix()[(0, 1)].norm(), 0.0);
    }

    #[test]
    fn purified_source_reduces_to_cq() {
        for (seed, j) in [(1, false), (2, true), (3, true)] {
            let e = random_ensemble(seed, j);
            let full = e.purified_source().density();
            let red = partial_trace(&full, &[LABEL_A, LABEL_J, LABEL_X]).unwrap();
            assert!((red.matrix() - e.cq_state().matrix()).norm() < 1e-9);
        }
        let e = nonorthogonal();
        let src = e.purified_source();
        assert_eq!(src.psi.layout().dim_of(LABEL_R).unwrap(), 1);
        let red = partial_trace(&src.density(), &[LABEL_A, LABEL_J, LABEL_X]).unwrap();
        assert!((red.matrix() - e.cq_state().matrix()).norm() < 1e-9);
    }

    #[test]
    fn purified_maximally_mixed_is_bell() {
        let e = Ensemble::from_mixed(&[1.0], &[linalg::identity(2) / cr(2.0)]).unwrap();
        let full = e.purified_source().density();
        let i = qcore::mutual_information_of(&full, &[LABEL_A], &[LABEL_R]).unwrap();
        assert!((i - 2.0).abs() < 1e-12);
    }

    #[test]
    fn tensor_power_products() {
        let e = nonorthogonal();
        assert_eq!(e.tensor_power(1).unwrap().len(), 2);
        let e2 = e.tensor_power(2).unwrap();
        assert_eq!(e2.len(), 4);
        assert!(e2.probs().iter().all(|&p| (p - 0.25).abs() < 1e-15));
        assert_eq!(e2.copies(), 2);
        // cq(e⊗e) equals cq(e)⊗cq(e) after regrouping A1 X1 A2 X2 → A1 A2 X1 X2.
        let cq = e.cq_state().matrix().clone();
        let joint = linalg::kron(&cq, &cq);
        let regrouped = linalg::permute_factors(&joint, &[2, 2, 2, 2], &[0, 2, 1, 3]);
        assert!((regrouped - e2.cq_state().matrix()).norm() < 1e-14);
    }

    #[test]
    fn tensor_power_cap() {
        let e = random_ensemble(4, true);
        // log2(2·2·3) ≈ 3.585, k = 5 → 17.9 bits.
        assert!(matches!(e.tensor_power(5), Err(QrdError::CapExceeded(_))));
        assert!(e.tensor_power(4).is_ok());
    }

    #[test]
    fn visible_is_idempotent_and_keeps_ax() {
        let e = nonorthogonal();
        let v = e.visible();
        assert_eq!(v.dim_j(), 2);
        let vv = v.visible();
        assert!((v.cq_state().matrix() - vv.cq_state().matrix()).norm() < 1e-15);
        let ax = partial_trace(&e.cq_state(), &[LABEL_A, LABEL_X]).unwrap();
        let vax = partial_trace(&v.cq_state(), &[LABEL_A, LABEL_X]).unwrap();
        assert!((ax.matrix() - vax.matrix()).norm() < 1e-14);
    }

    #[test]
    fn validation_cites_item() {
        let bad = Ensemble::new(
            2,
            vec![
                EnsembleItem { p: 0.5, rho: linalg::outer(&ket(2, 0)), j: None },
                EnsembleItem { p: 0.5, rho: linalg::identity(2), j: None },
            ],
        );
        let msg = bad.unwrap_err().to_string();
        assert!(msg.contains("item 1"), "{msg}");
        let bad_sum = Ensemble::from_pure(&[0.5, 0.6], &[ket(2, 0), ket(2, 1)]);
        assert!(bad_sum.is_err());
    }
}
