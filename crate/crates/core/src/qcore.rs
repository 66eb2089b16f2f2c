//! Labelled quantum states and the basic information functionals.
//!
//! A [`DimLayout`] names every tensor factor of an operator so that partial
//! traces, channel applications and bipartitions can be addressed by label.
//! Entropies are in bits with `0 log 0 = 0`.

use std::collections::HashSet;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{QrdError, Result};
use crate::linalg::{self, c, cr, CMatrix, CVector};

/// Tolerance used when validating density operators.
pub const STATE_TOL: f64 = 1e-10;
/// Eigenvalues with magnitude below this are treated as exactly zero.
pub const EIG_CLIP: f64 = 1e-12;

/// Ordered list of labelled tensor factors.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DimLayout {
    factors: Vec<(String, usize)>,
}

impl DimLayout {
    pub fn new<S: Into<String>>(factors: impl IntoIterator<Item = (S, usize)>) -> Result<Self> {
        let factors: Vec<(String, usize)> =
            factors.into_iter().map(|(l, d)| (l.into(), d)).collect();
        let mut seen = HashSet::new();
        for (label, dim) in &factors {
            if *dim == 0 {
                return Err(QrdError::InvalidArgument(format!(
                    "factor {label} has dimension 0"
                )));
            }
            if !seen.insert(label.as_str()) {
                return Err(QrdError::LabelCollision(label.clone()));
            }
        }
        Ok(Self { factors })
    }

    pub fn single(label: &str, dim: usize) -> Self {
        Self::new([(label, dim)]).expect("single factor layout")
    }

    pub fn factors(&self) -> &[(String, usize)] {
        &self.factors
    }

    pub fn labels(&self) -> Vec<&str> {
        self.factors.iter().map(|(l, _)| l.as_str()).collect()
    }

    pub fn dims(&self) -> Vec<usize> {
        self.factors.iter().map(|(_, d)| *d).collect()
    }

    pub fn total_dim(&self) -> usize {
        self.factors.iter().map(|(_, d)| d).product()
    }

    pub fn len(&self) -> usize {
        self.factors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.factors.is_empty()
    }

    pub fn position(&self, label: &str) -> Result<usize> {
        self.factors
            .iter()
            .position(|(l, _)| l == label)
            .ok_or_else(|| QrdError::UnknownLabel(label.to_string()))
    }

    pub fn dim_of(&self, label: &str) -> Result<usize> {
        Ok(self.factors[self.position(label)?].1)
    }

    /// Product of the dimensions of the given labels.
    pub fn dim_of_all(&self, labels: &[&str]) -> Result<usize> {
        labels.iter().map(|l| self.dim_of(l)).product()
    }

    /// Concatenation; labels must be disjoint.
    pub fn concat(&self, other: &DimLayout) -> Result<DimLayout> {
        DimLayout::new(self.factors.iter().chain(other.factors.iter()).cloned())
    }

    /// Positions of `labels` in this layout, in the order given.
    pub fn positions(&self, labels: &[&str]) -> Result<Vec<usize>> {
        let mut seen = HashSet::new();
        labels
            .iter()
            .map(|l| {
                if !seen.insert(*l) {
                    return Err(QrdError::LabelCollision(l.to_string()));
                }
                self.position(l)
            })
            .collect()
    }

    pub fn sub_layout(&self, positions: &[usize]) -> DimLayout {
        DimLayout {
            factors: positions.iter().map(|&p| self.factors[p].clone()).collect(),
        }
    }

    /// Rename a factor.
    pub fn renamed(&self, from: &str, to: &str) -> Result<DimLayout> {
        let pos = self.position(from)?;
        let mut f = self.factors.clone();
        f[pos].0 = to.to_string();
        DimLayout::new(f)
    }
}

/// A validated density operator on a labelled space.
#[derive(Debug, Clone)]
pub struct DensityOp {
    matrix: CMatrix,
    layout: DimLayout,
}

impl DensityOp {
    /// Validate and wrap. The stored matrix is re-Hermitized.
    pub fn new(matrix: CMatrix, layout: DimLayout) -> Result<Self> {
        let n = layout.total_dim();
        if matrix.nrows() != n || matrix.ncols() != n {
            return Err(QrdError::DimensionMismatch(format!(
                "matrix is {}x{}, layout needs {n}x{n}",
                matrix.nrows(),
                matrix.ncols()
            )));
        }
        if matrix.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
            return Err(QrdError::InvalidState("non-finite entry".into()));
        }
        let herm = linalg::hermitian_residual(&matrix);
        if herm > STATE_TOL * (n as f64).max(1.0) {
            return Err(QrdError::InvalidState(format!(
                "not Hermitian (residual {herm:e})"
            )));
        }
        let tr = linalg::trace(&matrix);
        if (tr.re - 1.0).abs() > STATE_TOL * (n as f64).max(1.0) || tr.im.abs() > STATE_TOL {
            return Err(QrdError::InvalidState(format!("trace {tr} ≠ 1")));
        }
        let matrix = linalg::hermitize(&matrix);
        let min = linalg::min_eigenvalue(&matrix);
        if min < -STATE_TOL {
            return Err(QrdError::InvalidState(format!(
                "negative eigenvalue {min:e}"
            )));
        }
        Ok(Self { matrix, layout })
    }

    /// Wrap without validation. Used for solver intermediates that are
    /// states by construction.
    pub(crate) fn new_unchecked(matrix: CMatrix, layout: DimLayout) -> Self {
        Self { matrix, layout }
    }

    pub fn from_pure(psi: &PureState) -> Self {
        Self {
            matrix: linalg::outer(psi.vector()),
            layout: psi.layout().clone(),
        }
    }

    pub fn maximally_mixed(label: &str, d: usize) -> Self {
        Self {
            matrix: linalg::identity(d) / cr(d as f64),
            layout: DimLayout::single(label, d),
        }
    }

    /// Diagonal state from probabilities.
    pub fn diagonal(label: &str, probs: &[f64]) -> Result<Self> {
        let d = probs.len();
        let m = CMatrix::from_fn(d, d, |i, j| if i == j { cr(probs[i]) } else { cr(0.0) });
        Self::new(m, DimLayout::single(label, d))
    }

    pub fn matrix(&self) -> &CMatrix {
        &self.matrix
    }

    pub fn layout(&self) -> &DimLayout {
        &self.layout
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn eigenvalues(&self) -> Vec<f64> {
        linalg::eigvalsh(&self.matrix)
    }

    pub fn rank(&self, tol: f64) -> usize {
        self.eigenvalues().iter().filter(|&&l| l > tol).count()
    }

    /// Same matrix, relabelled. The new layout must have the same total
    /// dimension.
    pub fn with_layout(&self, layout: DimLayout) -> Result<Self> {
        if layout.total_dim() != self.dim() {
            return Err(QrdError::DimensionMismatch(format!(
                "layout of dim {} for state of dim {}",
                layout.total_dim(),
                self.dim()
            )));
        }
        Ok(Self {
            matrix: self.matrix.clone(),
            layout,
        })
    }

    /// Reorder factors to the given label order (must be a permutation).
    pub fn reorder(&self, labels: &[&str]) -> Result<Self> {
        if labels.len() != self.layout.len() {
            return Err(QrdError::InvalidArgument(format!(
                "reorder needs all {} labels, got {}",
                self.layout.len(),
                labels.len()
            )));
        }
        let perm = self.layout.positions(labels)?;
        let matrix = linalg::permute_factors(&self.matrix, &self.layout.dims(), &perm);
        Ok(Self {
            matrix,
            layout: self.layout.sub_layout(&perm),
        })
    }
}

/// Unit vector on a labelled space.
#[derive(Debug, Clone)]
pub struct PureState {
    vector: CVector,
    layout: DimLayout,
}

impl PureState {
    pub fn new(vector: CVector, layout: DimLayout) -> Result<Self> {
        if vector.len() != layout.total_dim() {
            return Err(QrdError::DimensionMismatch(format!(
                "vector of length {} for layout of dim {}",
                vector.len(),
                layout.total_dim()
            )));
        }
        let norm = vector.norm();
        if (norm - 1.0).abs() > STATE_TOL {
            return Err(QrdError::InvalidState(format!("norm {norm} ≠ 1")));
        }
        Ok(Self { vector, layout })
    }

    pub fn basis(label: &str, d: usize, k: usize) -> Self {
        let mut v = CVector::zeros(d);
        v[k] = cr(1.0);
        Self {
            vector: v,
            layout: DimLayout::single(label, d),
        }
    }

    pub fn from_amplitudes(label: &str, amps: &[Complex64]) -> Result<Self> {
        Self::new(
            CVector::from_column_slice(amps),
            DimLayout::single(label, amps.len()),
        )
    }

    pub fn vector(&self) -> &CVector {
        &self.vector
    }

    pub fn layout(&self) -> &DimLayout {
        &self.layout
    }

    pub fn tensor(&self, other: &PureState) -> Result<PureState> {
        let layout = self.layout.concat(&other.layout)?;
        Ok(Self {
            vector: self.vector.kronecker(&other.vector),
            layout,
        })
    }

    /// Reorder factors to the given label order.
    pub fn reorder(&self, labels: &[&str]) -> Result<Self> {
        let perm = self.layout.positions(labels)?;
        if perm.len() != self.layout.len() {
            return Err(QrdError::InvalidArgument("reorder needs all labels".into()));
        }
        Ok(Self {
            vector: linalg::permute_vector(&self.vector, &self.layout.dims(), &perm),
            layout: self.layout.sub_layout(&perm),
        })
    }
}

/// Kronecker product of two states; layouts must be disjoint.
pub fn tensor(a: &DensityOp, b: &DensityOp) -> Result<DensityOp> {
    let layout = a.layout.concat(&b.layout)?;
    Ok(DensityOp {
        matrix: linalg::kron(&a.matrix, &b.matrix),
        layout,
    })
}

/// Reduced state on the kept labels (original order preserved).
pub fn partial_trace(rho: &DensityOp, keep: &[&str]) -> Result<DensityOp> {
    let mut pos = rho.layout.positions(keep)?;
    pos.sort_unstable();
    let matrix = linalg::ptrace_keep(&rho.matrix, &rho.layout.dims(), &pos);
    Ok(DensityOp {
        matrix,
        layout: rho.layout.sub_layout(&pos),
    })
}

/// Like [`partial_trace`], with the output factors in the order of `keep`.
pub fn reduce_ordered(rho: &DensityOp, keep: &[&str]) -> Result<DensityOp> {
    let reduced = partial_trace(rho, keep)?;
    reduced.reorder(keep)
}

/// Entropy of a spectrum, bits, with the clip threshold applied.
pub fn entropy_of_spectrum(eigs: &[f64]) -> f64 {
    eigs.iter()
        .filter(|&&l| l > EIG_CLIP)
        .map(|&l| -l * l.log2())
        .sum::<f64>()
        .max(0.0)
}

/// Von Neumann entropy of a raw matrix. The input must be Hermitian to
/// 1e-8 and have no eigenvalue below −1e-10.
pub fn entropy_of_matrix(m: &CMatrix) -> Result<f64> {
    let herm = linalg::hermitian_residual(m);
    if herm > 1e-8 {
        return Err(QrdError::InvalidState(format!(
            "entropy input not Hermitian (residual {herm:e})"
        )));
    }
    let eigs = linalg::eigvalsh(m);
    if let Some(&min) = eigs.last() {
        if min < -STATE_TOL {
            return Err(QrdError::InvalidState(format!(
                "negative eigenvalue {min:e}"
            )));
        }
    }
    Ok(entropy_of_spectrum(&eigs))
}

/// `S(ρ) = −Tr ρ log₂ ρ`.
pub fn vn_entropy(rho: &DensityOp) -> f64 {
    entropy_of_spectrum(&rho.eigenvalues())
}

/// Entropy of the reduced state on `labels`.
pub fn entropy_of(rho: &DensityOp, labels: &[&str]) -> Result<f64> {
    Ok(vn_entropy(&partial_trace(rho, labels)?))
}

/// `I(A:B) = S(A) + S(B) − S(AB)`; the two parts must partition the labels.
pub fn mutual_information(rho: &DensityOp, part_a: &[&str], part_b: &[&str]) -> Result<f64> {
    check_bipartition(rho.layout(), part_a, part_b)?;
    let sa = entropy_of(rho, part_a)?;
    let sb = entropy_of(rho, part_b)?;
    Ok(sa + sb - vn_entropy(rho))
}

/// `I(A:B)` on the reduced state of `part_a ∪ part_b` (no partition
/// requirement).
pub fn mutual_information_of(rho: &DensityOp, part_a: &[&str], part_b: &[&str]) -> Result<f64> {
    let all: Vec<&str> = part_a.iter().chain(part_b.iter()).copied().collect();
    let reduced = partial_trace(rho, &all)?;
    mutual_information(&reduced, part_a, part_b)
}

pub(crate) fn check_bipartition(layout: &DimLayout, a: &[&str], b: &[&str]) -> Result<()> {
    if a.is_empty() || b.is_empty() {
        return Err(QrdError::InvalidArgument("empty side of bipartition".into()));
    }
    let mut all: Vec<&str> = a.iter().chain(b.iter()).copied().collect();
    layout.positions(&all)?;
    all.sort_unstable();
    let mut labels = layout.labels();
    labels.sort_unstable();
    if all != labels {
        return Err(QrdError::InvalidArgument(format!(
            "{a:?} | {b:?} is not a bipartition of {labels:?}"
        )));
    }
    Ok(())
}

/// Squared fidelity `(Tr|√ρ √σ|)²` of two raw PSD matrices.
pub fn fidelity_of_matrices(rho: &CMatrix, sigma: &CMatrix) -> f64 {
    let a = linalg::sqrtm_psd(rho);
    let b = linalg::sqrtm_psd(sigma);
    let root = linalg::trace_norm(&(a * b));
    (root * root).clamp(0.0, 1.0)
}

/// Fidelity in the squared convention, so that for pure states it equals
/// `|⟨φ|ψ⟩|²`.
pub fn fidelity(rho: &DensityOp, sigma: &DensityOp) -> Result<f64> {
    same_dims(rho, sigma)?;
    Ok(fidelity_of_matrices(&rho.matrix, &sigma.matrix))
}

/// `½‖ρ − σ‖₁`.
pub fn trace_distance(rho: &DensityOp, sigma: &DensityOp) -> Result<f64> {
    same_dims(rho, sigma)?;
    Ok((0.5 * linalg::trace_norm(&(&rho.matrix - &sigma.matrix))).clamp(0.0, 1.0))
}

fn same_dims(a: &DensityOp, b: &DensityOp) -> Result<()> {
    if a.dim() != b.dim() {
        return Err(QrdError::DimensionMismatch(format!(
            "states of dimension {} and {}",
            a.dim(),
            b.dim()
        )));
    }
    Ok(())
}

/// Continuity bound `ε log₂(d−1) + h₂(ε)`, valid for `0 ≤ ε ≤ 1 − 1/d`.
pub fn fannes_bound(eps: f64, d: usize) -> Result<f64> {
    if d < 1 {
        return Err(QrdError::InvalidArgument("dimension must be ≥ 1".into()));
    }
    let max = 1.0 - 1.0 / d as f64;
    if !(0.0..=max + 1e-12).contains(&eps) {
        return Err(QrdError::InvalidArgument(format!(
            "eps = {eps} outside [0, {max}]"
        )));
    }
    let log_term = if d > 1 { eps * ((d - 1) as f64).log2() } else { 0.0 };
    Ok(log_term + linalg::h2(eps))
}

/// Canonical purification `Σ √λᵢ |eᵢ⟩|i⟩` with the reference appended as a
/// new factor `ref_label` of dimension `rank(ρ)`.
///
/// Eigenvalues are ordered descending; each eigenvector is phase-fixed so
/// that its first non-negligible amplitude is real positive.
pub fn purify(rho: &DensityOp, ref_label: &str) -> Result<PureState> {
    purify_with_dim(rho, ref_label, None)
}

/// As [`purify`], with the reference dimension padded to `ref_dim` (must be
/// at least the rank).
pub fn purify_with_dim(rho: &DensityOp, ref_label: &str, ref_dim: Option<usize>) -> Result<PureState> {
    let (vals, vecs) = linalg::eigh(&rho.matrix);
    let rank = vals.iter().filter(|&&l| l > EIG_CLIP).count().max(1);
    let rdim = ref_dim.unwrap_or(rank);
    if rdim < rank {
        return Err(QrdError::InvalidArgument(format!(
            "reference dimension {rdim} below rank {rank}"
        )));
    }
    let layout = rho.layout.concat(&DimLayout::single(ref_label, rdim))?;
    let n = rho.dim();
    let mut psi = CVector::zeros(n * rdim);
    for (i, &l) in vals.iter().take(rank).enumerate() {
        let w = l.max(0.0).sqrt();
        let v = phase_fixed(vecs.column(i).into_owned());
        for a in 0..n {
            psi[a * rdim + i] += v[a] * cr(w);
        }
    }
    let norm = psi.norm();
    psi /= cr(norm);
    PureState::new(psi, layout)
}

fn phase_fixed(mut v: CVector) -> CVector {
    if let Some(z) = v.iter().find(|z| z.norm() > 1e-9).copied() {
        let phase: Complex64 = z.conj() / z.norm();
        v *= phase;
    }
    v
}

/// Computational-basis ket `|k⟩` of dimension `d` as a raw vector.
pub fn ket(d: usize, k: usize) -> CVector {
    let mut v = CVector::zeros(d);
    v[k] = cr(1.0);
    v
}

/// `|+⟩` on a qubit.
pub fn ket_plus() -> CVector {
    let s = std::f64::consts::FRAC_1_SQRT_2;
    CVector::from_column_slice(&[c(s, 0.0), c(s, 0.0)])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{identity, kron};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn qubit(label: &str, m: CMatrix) -> DensityOp {
        DensityOp::new(m, DimLayout::single(label, 2)).unwrap()
    }

    fn proj(v: &CVector) -> CMatrix {
        linalg::outer(v)
    }

    fn bell() -> DensityOp {
        let s = std::f64::consts::FRAC_1_SQRT_2;
        let v = CVector::from_column_slice(&[cr(s), cr(0.0), cr(0.0), cr(s)]);
        let layout = DimLayout::new([("A", 2), ("B", 2)]).unwrap();
        DensityOp::new(proj(&v), layout).unwrap()
    }

    #[test]
    fn tensor_of_maximally_mixed() {
        let a = DensityOp::maximally_mixed("A", 2);
        let b = DensityOp::maximally_mixed("B", 2);
        let ab = tensor(&a, &b).unwrap();
        assert!((ab.matrix() - identity(4) / cr(4.0)).norm() < 1e-15);
        assert_eq!(ab.layout().labels(), vec!["A", "B"]);
    }

    #[test]
    fn tensor_of_basis_states() {
        let a = qubit("A", proj(&ket(2, 0)));
        let b = qubit("B", proj(&ket(2, 1)));
        let ab = tensor(&a, &b).unwrap();
        assert!((ab.matrix() - proj(&ket(4, 1))).norm() < 1e-15);
    }

    #[test]
    fn tensor_dims_and_collision() {
        let a = DensityOp::maximally_mixed("A", 2);
        let b = DensityOp::maximally_mixed("B", 3);
        let ab = tensor(&a, &b).unwrap();
        assert_eq!(ab.dim(), 6);
        assert_eq!(ab.layout().dims(), vec![2, 3]);
        assert!(matches!(tensor(&a, &a), Err(QrdError::LabelCollision(_))));
    }

    #[test]
    fn partial_trace_of_bell_is_maximally_mixed() {
        let r = partial_trace(&bell(), &["A"]).unwrap();
        assert!((r.matrix() - identity(2) / cr(2.0)).norm() < 1e-15);
    }

    #[test]
    fn partial_trace_of_product() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let rho = DensityOp::new(linalg::random_density(2, 2, &mut rng), DimLayout::single("A", 2)).unwrap();
        let sigma = DensityOp::new(linalg::random_density(3, 3, &mut rng), DimLayout::single("S", 3)).unwrap();
        let r = partial_trace(&tensor(&rho, &sigma).unwrap(), &["A"]).unwrap();
        assert!((r.matrix() - rho.matrix()).norm() < 1e-14);
    }

    #[test]
    fn partial_trace_unknown_label() {
        assert!(matches!(partial_trace(&bell(), &["Z"]), Err(QrdError::UnknownLabel(_))));
    }

    #[test]
    fn iterated_partial_traces_match_direct_contraction() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..10 {
            let dims = [2usize, 3, 2];
            let m = linalg::random_density(12, 5, &mut rng);
            let layout = DimLayout::new([("A", 2), ("B", 3), ("C", 2)]).unwrap();
            let rho = DensityOp::new(m.clone(), layout).unwrap();
            let step = partial_trace(&partial_trace(&rho, &["A", "C"]).unwrap(), &["C"]).unwrap();
            // Direct oracle: contract A and B indices by explicit summation.
            let mut direct = CMatrix::zeros(2, 2);
            for c1 in 0..2 {
                for c2 in 0..2 {
                    let mut acc = cr(0.0);
                    for a in 0..dims[0] {
                        for b in 0..dims[1] {
                            acc += m[(a * 6 + b * 2 + c1, a * 6 + b * 2 + c2)];
                        }
                    }
                    direct[(c1, c2)] = acc;
                }
            }
            assert!((step.matrix() - direct).norm() < 1e-13);
        }
    }

    #[test]
    fn entropy_examples() {
        assert!((vn_entropy(&DensityOp::maximally_mixed("A", 2)) - 1.0).abs() < 1e-14);
        assert!(vn_entropy(&bell()).abs() < 1e-12);
        let d = DensityOp::diagonal("A", &[0.75, 0.25]).unwrap();
        assert!((vn_entropy(&d) - 0.811278).abs() < 1e-6);
    }

    #[test]
    fn entropy_rejects_non_hermitian_and_negative() {
        let mut m = identity(2) / cr(2.0);
        m[(0, 1)] = cr(0.1);
        assert!(entropy_of_matrix(&m).is_err());
        let neg = CMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![cr(1.1), cr(-0.1)]));
        assert!(entropy_of_matrix(&neg).is_err());
    }

    #[test]
    fn mutual_information_examples() {
        assert!((mutual_information(&bell(), &["A"], &["B"]).unwrap() - 2.0).abs() < 1e-12);
        let prod = tensor(
            &DensityOp::maximally_mixed("A", 2),
            &qubit("B", proj(&ket(2, 0))),
        )
        .unwrap();
        assert!(mutual_information(&prod, &["A"], &["B"]).unwrap().abs() < 1e-12);
        let mut cc = CMatrix::zeros(4, 4);
        cc[(0, 0)] = cr(0.5);
        cc[(3, 3)] = cr(0.5);
        let cc = DensityOp::new(cc, DimLayout::new([("A", 2), ("B", 2)]).unwrap()).unwrap();
        assert!((mutual_information(&cc, &["A"], &["B"]).unwrap() - 1.0).abs() < 1e-12);
        assert!(mutual_information(&cc, &["A"], &["A"]).is_err());
    }

    #[test]
    fn fidelity_examples() {
        let z = qubit("A", proj(&ket(2, 0)));
        let o = qubit("A", proj(&ket(2, 1)));
        let p = qubit("A", proj(&ket_plus()));
        assert!((fidelity(&z, &z).unwrap() - 1.0).abs() < 1e-12);
        assert!(fidelity(&z, &o).unwrap().abs() < 1e-12);
        assert!((fidelity(&z, &p).unwrap() - 0.5).abs() < 1e-12);
        let big = DensityOp::maximally_mixed("A", 3);
        assert!(fidelity(&z, &big).is_err());
    }

    #[test]
    fn trace_distance_examples() {
        let z = qubit("A", proj(&ket(2, 0)));
        let o = qubit("A", proj(&ket(2, 1)));
        let m = DensityOp::maximally_mixed("A", 2);
        assert!(trace_distance(&z, &z).unwrap().abs() < 1e-12);
        assert!((trace_distance(&z, &o).unwrap() - 1.0).abs() < 1e-12);
        assert!((trace_distance(&z, &m).unwrap() - 0.5).abs() < 1e-12);
    }

    #[test]
    fn fannes_examples() {
        assert_eq!(fannes_bound(0.0, 7).unwrap(), 0.0);
        assert!((fannes_bound(0.5, 2).unwrap() - 1.0).abs() < 1e-12);
        // 0.1 log2 3 + h2(0.1), evaluated independently.
        assert!((fannes_bound(0.1, 4).unwrap() - 0.627_491_843_661_397).abs() < 1e-12);
        assert!(fannes_bound(0.6, 2).is_err());
        assert!(fannes_bound(-0.1, 2).is_err());
    }

    #[test]
    fn purify_pure_input_has_trivial_reference() {
        let p = qubit("A", proj(&ket_plus()));
        let psi = purify(&p, "R").unwrap();
        assert_eq!(psi.layout().dim_of("R").unwrap(), 1);
        let back = partial_trace(&DensityOp::from_pure(&psi), &["A"]).unwrap();
        assert!((back.matrix() - p.matrix()).norm() < 1e-12);
    }

    #[test]
    fn purify_maximally_mixed_gives_bell() {
        let psi = purify(&DensityOp::maximally_mixed("A", 2), "R").unwrap();
        let full = DensityOp::from_pure(&psi);
        assert!((mutual_information(&full, &["A"], &["R"]).unwrap() - 2.0).abs() < 1e-12);
        let red = partial_trace(&full, &["A"]).unwrap();
        assert!((red.matrix() - identity(2) / cr(2.0)).norm() < 1e-12);
    }

    #[test]
    fn purify_rank_three() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let rho = DensityOp::new(linalg::random_density(4, 3, &mut rng), DimLayout::single("A", 4)).unwrap();
        let psi = purify(&rho, "R").unwrap();
        assert_eq!(psi.layout().dim_of("R").unwrap(), 3);
        let back = partial_trace(&DensityOp::from_pure(&psi), &["A"]).unwrap();
        assert!((back.matrix() - rho.matrix()).norm() < 1e-9);
    }

    #[test]
    fn density_validation() {
        let layout = DimLayout::single("A", 2);
        assert!(DensityOp::new(identity(2), layout.clone()).is_err());
        let neg = CMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![cr(1.5), cr(-0.5)]));
        assert!(DensityOp::new(neg, layout.clone()).is_err());
        assert!(DensityOp::new(identity(3) / cr(3.0), layout).is_err());
        assert!(DimLayout::new([("A", 2), ("A", 3)]).is_err());
    }

    #[test]
    fn reorder_is_kron_swap() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let a = linalg::random_density(2, 2, &mut rng);
        let b = linalg::random_density(3, 3, &mut rng);
        let ab = DensityOp::new(kron(&a, &b), DimLayout::new([("A", 2), ("B", 3)]).unwrap()).unwrap();
        let ba = ab.reorder(&["B", "A"]).unwrap();
        assert!((ba.matrix() - kron(&b, &a)).norm() < 1e-14);
    }
}
