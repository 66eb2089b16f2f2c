//! Dense complex linear algebra helpers on top of `nalgebra`.
//!
//! Everything works on [`CMatrix`] (`DMatrix<Complex64>`). Tensor products
//! use the row-major convention: in `a ⊗ b` the index of `a` is the most
//! significant digit.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;

pub type CMatrix = DMatrix<Complex64>;
pub type CVector = DVector<Complex64>;

pub const LN2: f64 = std::f64::consts::LN_2;

#[inline]
pub fn c(re: f64, im: f64) -> Complex64 {
    Complex64::new(re, im)
}

#[inline]
pub fn cr(re: f64) -> Complex64 {
    Complex64::new(re, 0.0)
}

pub fn identity(d: usize) -> CMatrix {
    CMatrix::identity(d, d)
}

pub fn zeros(r: usize, c: usize) -> CMatrix {
    CMatrix::zeros(r, c)
}

/// `(M + M†) / 2`.
pub fn hermitize(m: &CMatrix) -> CMatrix {
    (m + m.adjoint()) * cr(0.5)
}

/// Frobenius norm of `M - M†`.
pub fn hermitian_residual(m: &CMatrix) -> f64 {
    (m - m.adjoint()).norm()
}

pub fn trace(m: &CMatrix) -> Complex64 {
    m.diagonal().iter().sum()
}

/// Real inner product `Re Tr(A† B)`.
pub fn inner(a: &CMatrix, b: &CMatrix) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| (x.conj() * y).re).sum()
}

/// Eigendecomposition of the Hermitian part of `m`, eigenvalues sorted in
/// descending order (eigenvectors are the matching columns).
pub fn eigh(m: &CMatrix) -> (Vec<f64>, CMatrix) {
    let n = m.nrows();
    if n == 0 {
        return (Vec::new(), zeros(0, 0));
    }
    let (raw, raw_vecs) = unsorted_eigh(&hermitize(m));
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| raw[j].total_cmp(&raw[i]));
    let vals = order.iter().map(|&i| raw[i]).collect();
    let mut vecs = zeros(n, n);
    for (new, &old) in order.iter().enumerate() {
        vecs.set_column(new, &raw_vecs.column(old));
    }
    (vals, vecs)
}

/// Eigenvalues only, descending.
pub fn eigvalsh(m: &CMatrix) -> Vec<f64> {
    if m.nrows() == 0 {
        return Vec::new();
    }
    let h = hermitize(m);
    let mut v: Vec<f64> = h.symmetric_eigenvalues().iter().copied().collect();
    if !spectrum_consistent(&h, &v) {
        v = jacobi_eigh(&h).0;
    }
    v.sort_by(|a, b| b.total_cmp(a));
    v
}

/// Relative tolerance on `‖HV − VΛ‖` and on the spectral moment checks.
const EIG_RESIDUAL_TOL: f64 = 1e-12;

/// Trace and Frobenius moments of `vals` match those of `h`.
fn spectrum_consistent(h: &CMatrix, vals: &[f64]) -> bool {
    if vals.iter().any(|x| !x.is_finite()) {
        return false;
    }
    let scale = h.norm().max(1e-300);
    let tr: f64 = vals.iter().sum();
    let sq: f64 = vals.iter().map(|x| x * x).sum();
    (tr - trace(h).re).abs() <= EIG_RESIDUAL_TOL * scale * (h.nrows() as f64).sqrt()
        && (sq.sqrt() - scale).abs() <= EIG_RESIDUAL_TOL * scale
}

/// `nalgebra`'s QR iteration, with a Jacobi fallback whenever its result
/// fails the residual check (it can return non-finite values on nearly
/// degenerate spectra, and inaccurate eigenvectors on some complex inputs).
fn unsorted_eigh(h: &CMatrix) -> (Vec<f64>, CMatrix) {
    let eig = h.clone().symmetric_eigen();
    let vals: Vec<f64> = eig.eigenvalues.iter().copied().collect();
    let vecs = eig.eigenvectors;
    let finite = vals.iter().all(|x| x.is_finite()) && vecs.iter().all(|x| x.re.is_finite() && x.im.is_finite());
    if finite {
        let mut hv = h * &vecs;
        for (k, &l) in vals.iter().enumerate() {
            hv.column_mut(k).axpy(cr(-l), &vecs.column(k), cr(1.0));
        }
        let unit = (vecs.adjoint() * &vecs - identity(vals.len())).norm();
        if hv.norm() <= EIG_RESIDUAL_TOL * h.norm().max(1e-300) && unit <= EIG_RESIDUAL_TOL {
            return (vals, vecs);
        }
    }
    jacobi_eigh(h)
}

/// Cyclic complex Jacobi eigensolver for a Hermitian matrix.
pub(crate) fn jacobi_eigh(h: &CMatrix) -> (Vec<f64>, CMatrix) {
    let n = h.nrows();
    let mut a = h.clone();
    let mut v = identity(n);
    let scale = a.norm().max(f64::MIN_POSITIVE);
    for _ in 0..100 {
        let mut off = 0.0;
        for p in 0..n {
            for q in p + 1..n {
                off += a[(p, q)].norm_sqr();
            }
        }
        if off.sqrt() <= 1e-15 * scale {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                let apq = a[(p, q)];
                let mag = apq.norm();
                if mag <= 1e-300 {
                    continue;
                }
                let phase = apq / mag;
                let theta = (a[(q, q)].re - a[(p, p)].re) / (2.0 * mag);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let cs = 1.0 / (t * t + 1.0).sqrt();
                let sn = t * cs;
                // G = diag(1, conj(phase)) · [[c, s], [-s, c]] on (p, q).
                let g = [[cr(cs), cr(sn)], [-phase.conj() * sn, phase.conj() * cs]];
                for k in 0..n {
                    let (xp, xq) = (a[(k, p)], a[(k, q)]);
                    a[(k, p)] = xp * g[0][0] + xq * g[1][0];
                    a[(k, q)] = xp * g[0][1] + xq * g[1][1];
                    let (vp, vq) = (v[(k, p)], v[(k, q)]);
                    v[(k, p)] = vp * g[0][0] + vq * g[1][0];
                    v[(k, q)] = vp * g[0][1] + vq * g[1][1];
                }
                for k in 0..n {
                    let (xp, xq) = (a[(p, k)], a[(q, k)]);
                    a[(p, k)] = g[0][0].conj() * xp + g[1][0].conj() * xq;
                    a[(q, k)] = g[0][1].conj() * xp + g[1][1].conj() * xq;
                }
                a[(p, q)] = cr(0.0);
                a[(q, p)] = cr(0.0);
            }
        }
    }
    ((0..n).map(|i| a[(i, i)].re).collect(), v)
}

/// Rebuild `Σ f(λ_i) |v_i⟩⟨v_i|` from an eigendecomposition.
pub fn from_eig(vals: &[f64], vecs: &CMatrix, f: impl Fn(f64) -> f64) -> CMatrix {
    let n = vecs.nrows();
    let mut scaled = vecs.clone();
    for (j, &l) in vals.iter().enumerate() {
        let s = f(l);
        scaled.column_mut(j).scale_mut(s);
    }
    let out = scaled * vecs.adjoint();
    debug_assert_eq!(out.nrows(), n);
    out
}

/// Apply a real function to the spectrum of a Hermitian matrix.
pub fn herm_fn(m: &CMatrix, f: impl Fn(f64) -> f64) -> CMatrix {
    let (vals, vecs) = eigh(m);
    from_eig(&vals, &vecs, f)
}

/// Square root with eigenvalues below 1e-14 treated as zero.
pub fn sqrtm_psd(m: &CMatrix) -> CMatrix {
    herm_fn(m, clipped_sqrt)
}

pub fn clipped_sqrt(l: f64) -> f64 {
    if l > 1e-14 {
        l.sqrt()
    } else {
        0.0
    }
}

pub fn kron(a: &CMatrix, b: &CMatrix) -> CMatrix {
    a.kronecker(b)
}

/// Sum of singular values.
pub fn trace_norm(m: &CMatrix) -> f64 {
    if m.nrows() == 0 {
        return 0.0;
    }
    m.clone().singular_values().iter().sum()
}

pub fn min_eigenvalue(m: &CMatrix) -> f64 {
    eigvalsh(m).last().copied().unwrap_or(0.0)
}

/// Reorder the tensor factors of a square operator. `perm[k]` is the old
/// position of the factor placed at new position `k`.
pub fn permute_factors(m: &CMatrix, dims: &[usize], perm: &[usize]) -> CMatrix {
    let n: usize = dims.iter().product();
    assert_eq!(m.nrows(), n);
    assert_eq!(perm.len(), dims.len());
    if perm.iter().enumerate().all(|(i, &p)| i == p) {
        return m.clone();
    }
    let map = permutation_map(dims, perm);
    CMatrix::from_fn(n, n, |i, j| m[(map[i], map[j])])
}

/// Same as [`permute_factors`] for a vector.
pub fn permute_vector(v: &CVector, dims: &[usize], perm: &[usize]) -> CVector {
    let map = permutation_map(dims, perm);
    CVector::from_fn(v.len(), |i, _| v[map[i]])
}

/// `map[new_index] = old_index` for a factor permutation.
fn permutation_map(dims: &[usize], perm: &[usize]) -> Vec<usize> {
    let n: usize = dims.iter().product();
    let new_dims: Vec<usize> = perm.iter().map(|&p| dims[p]).collect();
    let old_strides = strides(dims);
    let mut map = vec![0usize; n];
    let mut digits = vec![0usize; dims.len()];
    for (idx, slot) in map.iter_mut().enumerate() {
        let mut rem = idx;
        for k in (0..new_dims.len()).rev() {
            digits[k] = rem % new_dims[k];
            rem /= new_dims[k];
        }
        *slot = digits
            .iter()
            .zip(perm)
            .map(|(&d, &p)| d * old_strides[p])
            .sum();
    }
    map
}

pub fn strides(dims: &[usize]) -> Vec<usize> {
    let mut s = vec![1usize; dims.len()];
    for k in (0..dims.len().saturating_sub(1)).rev() {
        s[k] = s[k + 1] * dims[k + 1];
    }
    s
}

/// Partial trace keeping the factors at positions `keep` (kept in their
/// original order).
pub fn ptrace_keep(m: &CMatrix, dims: &[usize], keep: &[usize]) -> CMatrix {
    let (perm, dk, dt) = keep_first(dims, keep);
    let p = permute_factors(m, dims, &perm);
    let mut out = zeros(dk, dk);
    for i in 0..dk {
        for j in 0..dk {
            let mut acc = Complex64::new(0.0, 0.0);
            for t in 0..dt {
                acc += p[(i * dt + t, j * dt + t)];
            }
            out[(i, j)] = acc;
        }
    }
    out
}

/// Adjoint of [`ptrace_keep`]: `G ↦ G ⊗ I` on the traced factors, placed
/// back in the original factor order.
pub fn ptrace_keep_adjoint(g: &CMatrix, dims: &[usize], keep: &[usize]) -> CMatrix {
    let (perm, _dk, dt) = keep_first(dims, keep);
    let embedded = kron(g, &identity(dt));
    let mut inverse = vec![0usize; perm.len()];
    for (new, &old) in perm.iter().enumerate() {
        inverse[old] = new;
    }
    let pdims: Vec<usize> = perm.iter().map(|&p| dims[p]).collect();
    permute_factors(&embedded, &pdims, &inverse)
}

fn keep_first(dims: &[usize], keep: &[usize]) -> (Vec<usize>, usize, usize) {
    let mut perm: Vec<usize> = keep.to_vec();
    perm.extend((0..dims.len()).filter(|i| !keep.contains(i)));
    let dk: usize = keep.iter().map(|&k| dims[k]).product();
    let dt: usize = dims.iter().product::<usize>() / dk.max(1);
    (perm, dk, dt)
}

/// `|v⟩⟨v|`.
pub fn outer(v: &CVector) -> CMatrix {
    v * v.adjoint()
}

/// Row vector `⟨k|` of dimension `d`.
pub fn outer_bra(d: usize, k: usize) -> CMatrix {
    let mut m = CMatrix::zeros(1, d);
    m[(0, k)] = cr(1.0);
    m
}

pub fn ginibre<R: Rng + ?Sized>(rows: usize, cols: usize, rng: &mut R) -> CMatrix {
    CMatrix::from_fn(rows, cols, |_, _| {
        let re: f64 = rng.sample(StandardNormal);
        let im: f64 = rng.sample(StandardNormal);
        c(re, im) * std::f64::consts::FRAC_1_SQRT_2
    })
}

/// Haar-random unitary (QR of a Ginibre matrix with the phase fix).
pub fn haar_unitary<R: Rng + ?Sized>(d: usize, rng: &mut R) -> CMatrix {
    let g = ginibre(d, d, rng);
    let qr = g.qr();
    let mut q = qr.q();
    let r = qr.r();
    for j in 0..d {
        let rjj = r[(j, j)];
        let phase = if rjj.norm() > 0.0 { rjj / rjj.norm() } else { cr(1.0) };
        for i in 0..d {
            q[(i, j)] *= phase;
        }
    }
    q
}

/// Isometry `dim_in → dim_out` from the polar part of a Ginibre matrix.
pub fn random_isometry<R: Rng + ?Sized>(dim_out: usize, dim_in: usize, rng: &mut R) -> CMatrix {
    polar_isometry(&ginibre(dim_out, dim_in, rng))
}

/// `G (G†G)^{-1/2}`, the closest isometry to a full-column-rank `G`.
pub fn polar_isometry(g: &CMatrix) -> CMatrix {
    let gram = g.adjoint() * g;
    let inv_sqrt = herm_fn(&gram, |l| if l > 1e-300 { 1.0 / l.sqrt() } else { 0.0 });
    g * inv_sqrt
}

pub fn random_pure<R: Rng + ?Sized>(d: usize, rng: &mut R) -> CVector {
    let g = ginibre(d, 1, rng);
    let n = g.norm();
    CVector::from_iterator(d, g.iter().map(|z| z / n))
}

/// Random density matrix of the given rank (induced Hilbert–Schmidt
/// measure).
pub fn random_density<R: Rng + ?Sized>(d: usize, rank: usize, rng: &mut R) -> CMatrix {
    let g = ginibre(d, rank.max(1), rng);
    let w = &g * g.adjoint();
    let t = trace(&w).re;
    w / cr(t)
}

/// Random Hermitian matrix with Gaussian entries.
pub fn random_hermitian<R: Rng + ?Sized>(d: usize, rng: &mut R) -> CMatrix {
    hermitize(&ginibre(d, d, rng))
}

/// Binary entropy in bits.
pub fn h2(p: f64) -> f64 {
    let term = |q: f64| if q > 0.0 { -q * q.log2() } else { 0.0 };
    term(p) + term(1.0 - p)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn jacobi_matches_reconstruction() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for n in [1, 2, 3, 6, 9] {
            let h = random_hermitian(n, &mut rng);
            let (vals, vecs) = jacobi_eigh(&h);
            let back = &vecs * CMatrix::from_diagonal(&DVector::from_iterator(n, vals.iter().map(|&l| cr(l)))) * vecs.adjoint();
            assert!((back - &h).norm() < 1e-10, "n={n}");
            assert!((vecs.adjoint() * &vecs - identity(n)).norm() < 1e-10);
        }
    }

    #[test]
    fn eigh_residual_small_on_many_densities() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..500 {
            let (a, b) = (rng.random_range(1..=4), rng.random_range(1..=4));
            let n = a + b;
            let mut blocks = zeros(n, n);
            blocks.view_mut((0, 0), (a, a)).copy_from(&random_density(a, rng.random_range(1..=a), &mut rng));
            blocks.view_mut((a, a), (b, b)).copy_from(&random_density(b, b, &mut rng));
            let u = haar_unitary(n, &mut rng);
            let h = hermitize(&(&u * blocks * u.adjoint()));
            let (vals, vecs) = eigh(&h);
            let r = (from_eig(&vals, &vecs, |l| l) - &h).norm();
            assert!(r < 1e-11, "{r:e}");
            assert!((vecs.adjoint() * &vecs - identity(n)).norm() < 1e-12);
        }
    }

    #[test]
    fn eigh_sorted_and_reconstructs() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let h = random_hermitian(5, &mut rng);
        let (vals, vecs) = eigh(&h);
        assert!(vals.windows(2).all(|w| w[0] >= w[1]));
        let back = from_eig(&vals, &vecs, |l| l);
        assert!((back - &h).norm() < 1e-10);
    }

    #[test]
    fn permutation_swaps_kron_factors() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let a = random_hermitian(2, &mut rng);
        let b = random_hermitian(3, &mut rng);
        let ab = kron(&a, &b);
        let ba = permute_factors(&ab, &[2, 3], &[1, 0]);
        assert!((ba - kron(&b, &a)).norm() < 1e-12);
    }

    #[test]
    fn ptrace_adjoint_is_adjoint() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let dims = [2, 3, 2];
        let m = random_hermitian(12, &mut rng);
        let keep = [0, 2];
        let g = random_hermitian(4, &mut rng);
        let lhs = inner(&g, &ptrace_keep(&m, &dims, &keep));
        let rhs = inner(&ptrace_keep_adjoint(&g, &dims, &keep), &m);
        assert!((lhs - rhs).abs() < 1e-10);
    }

    #[test]
    fn haar_unitary_is_unitary() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let u = haar_unitary(4, &mut rng);
        assert!((u.adjoint() * &u - identity(4)).norm() < 1e-12);
        let v = random_isometry(6, 2, &mut rng);
        assert!((v.adjoint() * &v - identity(2)).norm() < 1e-12);
    }

    #[test]
    fn binary_entropy_values() {
        assert_eq!(h2(0.0), 0.0);
        assert!((h2(0.5) - 1.0).abs() < 1e-15);
        assert!((h2(0.25) - 0.811_278_124_459_132_8).abs() < 1e-12);
    }
}
