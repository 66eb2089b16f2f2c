//! Koashi–Imoto decomposition `A ⊇ supp ρ̄ ≅ ⊕_c N_c ⊗ Q_c` of an
//! ensemble, with `ρ_x ≅ ⊕_c p_{c|x} ω_c ⊗ ρ_{cx}`.
//!
//! The decomposition is read off the operator algebra `⊕_c I_{N_c} ⊗ B(Q_c)`
//! generated on the joint support by the cocycles `ρ_x^{it} ρ̄^{-it}` and the
//! support projections of the `ρ_x`. Blocks are the minimal central
//! projections; `Q_c` is the irreducible factor and `N_c` the multiplicity
//! space, rotated so that `ω_c` is diagonal.

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::Serialize;

use crate::channel::Channel;
use crate::ensemble::Ensemble;
use crate::error::{QrdError, Result};
use crate::linalg::{self, c, cr, CMatrix, CVector};
use crate::qcore::{self, DensityOp, DimLayout};

const COCYCLE_TIMES: [f64; 3] = [0.37, 1.0, 2.3];
const SUPPORT_TOL: f64 = 1e-10;
const CLUSTER_GAP: f64 = 1e-6;
const RECONSTRUCTION_TOL: f64 = 1e-7;
const PROB_ZERO: f64 = 1e-9;

#[derive(Debug, Clone, Copy)]
pub struct KIOptions {
    pub tol: f64,
    pub seed: u64,
}

impl Default for KIOptions {
    fn default() -> Self {
        Self { tol: 1e-9, seed: 0 }
    }
}

/// One block `c`: `N_c ⊗ Q_c` embedded in `A` by the columns of `basis`,
/// column `k·dim_q + q` being `|k⟩_N |q⟩_Q`.
#[derive(Debug, Clone)]
pub struct KIBlock {
    pub dim_q: usize,
    pub dim_n: usize,
    pub omega: CMatrix,
    pub probs: Vec<f64>,
    pub states: Vec<CMatrix>,
    pub basis: CMatrix,
}

#[derive(Debug, Clone)]
pub struct KIDecomposition {
    pub dim_a: usize,
    pub blocks: Vec<KIBlock>,
    pub residual: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct KIReport {
    pub reconstruction_residual: f64,
    pub probability_residual: f64,
    pub commutant_dims: Vec<usize>,
    pub intertwiners: Vec<(usize, usize)>,
    pub passed: bool,
}

impl KIDecomposition {
    pub fn dim_c(&self) -> usize {
        self.blocks.len()
    }

    pub fn n_max(&self) -> usize {
        self.blocks.iter().map(|b| b.dim_n).max().unwrap_or(1)
    }

    pub fn q_max(&self) -> usize {
        self.blocks.iter().map(|b| b.dim_q).max().unwrap_or(1)
    }

    /// Partial isometry `U: A → C ⊗ N_max ⊗ Q_max`, isometric on the joint
    /// support.
    pub fn isometry(&self) -> CMatrix {
        let (nm, qm) = (self.n_max(), self.q_max());
        let mut u = CMatrix::zeros(self.dim_c() * nm * qm, self.dim_a);
        for (ci, b) in self.blocks.iter().enumerate() {
            for k in 0..b.dim_n {
                for q in 0..b.dim_q {
                    let row = (ci * nm + k) * qm + q;
                    let col = b.basis.column(k * b.dim_q + q);
                    for a in 0..self.dim_a {
                        u[(row, a)] = col[a].conj();
                    }
                }
            }
        }
        u
    }

    /// `Σ_c p_{c|x} V_c (ω_c ⊗ ρ_{cx}) V_c†`.
    pub fn reconstruct(&self, x: usize) -> CMatrix {
        let mut m = CMatrix::zeros(self.dim_a, self.dim_a);
        for b in &self.blocks {
            if b.probs[x] <= 0.0 {
                continue;
            }
            let inner = linalg::kron(&b.omega, &b.states[x]) * cr(b.probs[x]);
            m += &b.basis * inner * b.basis.adjoint();
        }
        m
    }

    /// `ω^{CQ} = Σ_x p_x Σ_c p_{c|x} |c⟩⟨c| ⊗ ρ_{cx}`, with `Q` padded to
    /// `Q_max`.
    pub fn cq_average(&self, probs: &[f64]) -> CMatrix {
        let qm = self.q_max();
        let mut m = CMatrix::zeros(self.dim_c() * qm, self.dim_c() * qm);
        for (ci, b) in self.blocks.iter().enumerate() {
            for (x, &px) in probs.iter().enumerate() {
                let w = cr(px * b.probs[x]);
                for q in 0..b.dim_q {
                    for qq in 0..b.dim_q {
                        m[(ci * qm + q, ci * qm + qq)] += b.states[x][(q, qq)] * w;
                    }
                }
            }
        }
        m
    }

    /// `K_off: A → C ⊗ Q_max`: apply `U`, trace out `N`. Weight outside the
    /// joint support is sent to `|0,0⟩`.
    pub fn ki_off(&self) -> Channel {
        let (nm, qm) = (self.n_max(), self.q_max());
        let dc = self.dim_c();
        let u = self.isometry();
        let mut kraus = Vec::with_capacity(nm + self.dim_a);
        for k in 0..nm {
            let mut kk = CMatrix::zeros(dc * qm, self.dim_a);
            for ci in 0..dc {
                for q in 0..qm {
                    for a in 0..self.dim_a {
                        kk[(ci * qm + q, a)] = u[((ci * nm + k) * qm + q, a)];
                    }
                }
            }
            kraus.push(kk);
        }
        let perp = linalg::identity(self.dim_a) - u.adjoint() * &u;
        let (vals, vecs) = linalg::eigh(&linalg::hermitize(&perp));
        for (i, &l) in vals.iter().enumerate() {
            if l > 0.5 {
                let mut kk = CMatrix::zeros(dc * qm, self.dim_a);
                let v = vecs.column(i);
                for a in 0..self.dim_a {
                    kk[(0, a)] = v[a].conj();
                }
                kraus.push(kk);
            }
        }
        Channel::from_kraus(&kraus)
    }

    /// `K_on: C ⊗ Q_max → A`: dephase `C`, attach `ω_c`, apply `U†`.
    /// Padding slots `q ≥ dim Q_c` map to `I/dimA`.
    pub fn ki_on(&self) -> Channel {
        let qm = self.q_max();
        let dc = self.dim_c();
        let din = dc * qm;
        let da = self.dim_a;
        let mut choi = CMatrix::zeros(din * da, din * da);
        for (ci, b) in self.blocks.iter().enumerate() {
            for q in 0..qm {
                let i = ci * qm + q;
                if q >= b.dim_q {
                    let blk = linalg::identity(da) / cr(da as f64);
                    choi.view_mut((i * da, i * da), (da, da)).copy_from(&blk);
                    continue;
                }
                for qq in 0..b.dim_q {
                    let j = ci * qm + qq;
                    let mut e = CMatrix::zeros(b.dim_q, b.dim_q);
                    e[(q, qq)] = cr(1.0);
                    let out = &b.basis * linalg::kron(&b.omega, &e) * b.basis.adjoint();
                    choi.view_mut((i * da, j * da), (da, da)).copy_from(&out);
                }
            }
        }
        Channel::new_unchecked(linalg::hermitize(&choi), din, da)
    }
}

/// Decompose the `ρ^{AX}` part of `e` (side information is ignored).
pub fn ki_decompose(e: &Ensemble, opts: KIOptions) -> Result<KIDecomposition> {
    if !(1e-12..=1e-6).contains(&opts.tol) {
        return Err(QrdError::InvalidArgument(format!(
            "KI tolerance {} outside [1e-12, 1e-6]",
            opts.tol
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let da = e.dim_a();
    let rho_bar = e.average_a();
    let (vals, vecs) = linalg::eigh(&rho_bar);
    let s = vals.iter().filter(|&&l| l > SUPPORT_TOL).count();
    let support = vecs.columns(0, s).into_owned();
    let restrict = |m: &CMatrix| linalg::hermitize(&(support.adjoint() * m * &support));
    let bar = restrict(&rho_bar);
    let states: Vec<CMatrix> = e.items().iter().map(|it| restrict(&it.rho)).collect();

    let gens = generators(&bar, &states, e.probs().as_slice());
    let null_tol = (opts.tol * 1e3).min(1e-5);
    let algebra = close_algebra(&gens, s, opts.tol)?;
    let commutant = nullspace_of_commutators(&gens, s, null_tol);
    let mut all = gens.clone();
    all.extend(commutant.iter().cloned());
    let centre = nullspace_of_commutators(&all, s, null_tol);

    let z = random_hermitian_in(&centre, &mut rng);
    let (zvals, zvecs) = linalg::eigh(&z);
    let clusters = cluster(&zvals);

    let mut blocks = Vec::with_capacity(clusters.len());
    for cl in &clusters {
        let ec = CMatrix::from_fn(s, cl.len(), |r, k| zvecs[(r, cl[k])]);
        blocks.push(split_block(&ec, &algebra, &mut rng)?);
    }

    // Map bases back into A and fill per-x data.
    let mut out_blocks = Vec::with_capacity(blocks.len());
    for (v, dim_n, dim_q) in blocks {
        let basis_s = v;
        let omega_full = basis_s.adjoint() * &bar * &basis_s;
        let omega_raw = linalg::ptrace_keep(&linalg::hermitize(&omega_full), &[dim_n, dim_q], &[0]);
        let tr = linalg::trace(&omega_raw).re;
        let omega_raw = omega_raw / cr(tr);
        let (ovals, ovecs) = linalg::eigh(&omega_raw);
        let rot = linalg::kron(&ovecs, &linalg::identity(dim_q));
        let basis_s = basis_s * rot;
        let omega = CMatrix::from_fn(dim_n, dim_n, |i, j| if i == j { cr(ovals[i]) } else { cr(0.0) });
        let basis = &support * &basis_s;
        let mut probs = Vec::with_capacity(e.len());
        let mut rhos = Vec::with_capacity(e.len());
        for rho in &states {
            let blk = linalg::hermitize(&(basis_s.adjoint() * rho * &basis_s));
            let p = linalg::trace(&blk).re.max(0.0);
            let q = linalg::ptrace_keep(&blk, &[dim_n, dim_q], &[1]);
            if p > PROB_ZERO {
                probs.push(p);
                rhos.push(linalg::hermitize(&(q / cr(p))));
            } else {
                probs.push(0.0);
                rhos.push(linalg::identity(dim_q) / cr(dim_q as f64));
            }
        }
        out_blocks.push(KIBlock {
            dim_q,
            dim_n,
            omega,
            probs,
            states: rhos,
            basis,
        });
    }
    let mut d = KIDecomposition {
        dim_a: da,
        blocks: out_blocks,
        residual: 0.0,
    };
    d.residual = reconstruction_residual(&d, e);
    if d.residual > RECONSTRUCTION_TOL {
        return Err(QrdError::Decomposition(
            "reconstruction does not match the ensemble".into(),
            d.residual,
        ));
    }
    Ok(d)
}

fn reconstruction_residual(d: &KIDecomposition, e: &Ensemble) -> f64 {
    e.items()
        .iter()
        .enumerate()
        .map(|(x, it)| (d.reconstruct(x) - &it.rho).norm())
        .fold(0.0, f64::max)
}

fn generators(bar: &CMatrix, states: &[CMatrix], probs: &[f64]) -> Vec<CMatrix> {
    let s = bar.nrows();
    let (bvals, bvecs) = linalg::eigh(bar);
    let mut gens = Vec::new();
    for (rho, &p) in states.iter().zip(probs) {
        if p <= 0.0 {
            continue;
        }
        let (vals, vecs) = linalg::eigh(rho);
        gens.push(linalg::from_eig(&vals, &vecs, |l| (l > SUPPORT_TOL) as u8 as f64));
        for &t in &COCYCLE_TIMES {
            let rt = complex_power(&vals, &vecs, t);
            let bt = complex_power(&bvals, &bvecs, -t);
            let u = rt * bt;
            gens.push(u.adjoint());
            gens.push(u);
        }
    }
    if gens.is_empty() {
        gens.push(linalg::identity(s));
    }
    gens
}

/// `Σ_{λ>0} λ^{it} |e⟩⟨e|`.
fn complex_power(vals: &[f64], vecs: &CMatrix, t: f64) -> CMatrix {
    let n = vecs.nrows();
    let mut m = CMatrix::zeros(n, n);
    for (k, &l) in vals.iter().enumerate() {
        if l > SUPPORT_TOL {
            let phase = Complex64::from_polar(1.0, t * l.ln());
            let v = vecs.column(k).into_owned();
            m += (&v * v.adjoint()) * phase;
        }
    }
    m
}

/// Orthonormal (Hilbert–Schmidt) basis of the unital algebra generated by
/// `gens`, grown by left multiplication until closed.
fn close_algebra(gens: &[CMatrix], s: usize, tol: f64) -> Result<Vec<CMatrix>> {
    let cap = s * s;
    let mut basis: Vec<CMatrix> = Vec::new();
    let mut queue: Vec<CMatrix> = vec![linalg::identity(s)];
    queue.extend(gens.iter().cloned());
    let mut head = 0;
    while head < queue.len() {
        let cand = queue[head].clone();
        head += 1;
        if let Some(v) = orthogonalize(&cand, &basis, tol) {
            if basis.len() >= cap {
                return Err(QrdError::CapExceeded(format!(
                    "algebra basis exceeds dim² = {cap}"
                )));
            }
            basis.push(v.clone());
            for g in gens {
                queue.push(g * &v);
            }
        }
    }
    Ok(basis)
}

fn orthogonalize(m: &CMatrix, basis: &[CMatrix], tol: f64) -> Option<CMatrix> {
    let scale = m.norm();
    if scale <= tol {
        return None;
    }
    let mut v = m / cr(scale);
    for _ in 0..2 {
        for b in basis {
            let coeff = b.iter().zip(v.iter()).map(|(x, y)| x.conj() * y).sum::<Complex64>();
            v -= b * coeff;
        }
    }
    let n = v.norm();
    if n <= (tol * 1e2).max(1e-8) {
        return None;
    }
    Some(v / cr(n))
}

/// Basis of `{Y : [g, Y] = 0 ∀ g}`.
fn nullspace_of_commutators(ops: &[CMatrix], s: usize, tol: f64) -> Vec<CMatrix> {
    let n = s * s;
    let id = linalg::identity(s);
    let rows = (ops.len() * n).max(n);
    let mut l = CMatrix::zeros(rows, n);
    for (k, g) in ops.iter().enumerate() {
        // Column-major vec: vec(gY − Yg) = (I⊗g − gᵀ⊗I) vec Y.
        let blk = linalg::kron(&id, g) - linalg::kron(&g.transpose(), &id);
        l.view_mut((k * n, 0), (n, n)).copy_from(&blk);
    }
    nullspace(&l, tol)
        .into_iter()
        .map(|v| CMatrix::from_column_slice(s, s, v.as_slice()))
        .collect()
}

/// Right null vectors with singular value at most `tol · max(σ_max, 1)`.
pub(crate) fn nullspace(l: &CMatrix, tol: f64) -> Vec<CVector> {
    let svd = l.clone().svd(false, true);
    let vt = svd.v_t.expect("right singular vectors requested");
    let smax = svd.singular_values.iter().copied().fold(1.0, f64::max);
    let mut out = Vec::new();
    for (k, &sv) in svd.singular_values.iter().enumerate() {
        if sv <= tol * smax {
            out.push(vt.row(k).adjoint().into_owned());
        }
    }
    out
}

fn random_hermitian_in(basis: &[CMatrix], rng: &mut ChaCha8Rng) -> CMatrix {
    let s = basis[0].nrows();
    let mut m = CMatrix::zeros(s, s);
    for b in basis {
        let w: f64 = rng.sample(StandardNormal);
        m += linalg::hermitize(b) * cr(w);
        let w: f64 = rng.sample(StandardNormal);
        m += (b - b.adjoint()) * c(0.0, 0.5 * w);
    }
    linalg::hermitize(&m)
}

fn random_element(basis: &[CMatrix], rng: &mut ChaCha8Rng) -> CMatrix {
    let s = basis[0].nrows();
    let mut m = CMatrix::zeros(s, s);
    for b in basis {
        let re: f64 = rng.sample(StandardNormal);
        let im: f64 = rng.sample(StandardNormal);
        m += b * c(re, im);
    }
    m
}

/// Groups of indices of a descending spectrum separated by relative gaps
/// above `CLUSTER_GAP`.
fn cluster(vals: &[f64]) -> Vec<Vec<usize>> {
    let scale = vals.iter().fold(0.0f64, |a, &v| a.max(v.abs())).max(1e-300);
    let mut out: Vec<Vec<usize>> = Vec::new();
    for (i, &v) in vals.iter().enumerate() {
        match out.last_mut() {
            Some(cl) if (vals[*cl.last().unwrap()] - v).abs() <= CLUSTER_GAP * scale => cl.push(i),
            _ => out.push(vec![i]),
        }
    }
    out
}

/// Within one central block, find `N ⊗ Q` matrix units. Returns the block
/// basis on the support (columns `(k, q) → k·d + q`), `dim N`, `dim Q`.
fn split_block(
    ec: &CMatrix,
    algebra: &[CMatrix],
    rng: &mut ChaCha8Rng,
) -> Result<(CMatrix, usize, usize)> {
    let m = ec.ncols();
    let compress = |a: &CMatrix| ec.adjoint() * a * ec;
    let a = linalg::hermitize(&compress(&random_hermitian_in(algebra, rng)));
    let (vals, vecs) = linalg::eigh(&a);
    let clusters = cluster(&vals);
    let d = clusters.len();
    let n = clusters[0].len();
    if clusters.iter().any(|cl| cl.len() != n) || n * d != m {
        return Err(QrdError::Decomposition(
            format!("irregular multiplicities in a block of dimension {m}"),
            0.0,
        ));
    }
    let eq: Vec<CMatrix> = clusters
        .iter()
        .map(|cl| CMatrix::from_fn(m, n, |r, k| vecs[(r, cl[k])]))
        .collect();
    let mut aligned: Vec<CMatrix> = vec![eq[0].clone()];
    if d > 1 {
        let mut ok = false;
        for _ in 0..8 {
            let b = compress(&random_element(algebra, rng));
            let mut cand = vec![eq[0].clone()];
            let mut good = true;
            for e in eq.iter().skip(1) {
                let t = e.adjoint() * &b * &eq[0];
                let scale = t.norm() / (n as f64).sqrt();
                if scale < 1e-6 {
                    good = false;
                    break;
                }
                let u = linalg::polar_isometry(&(t / cr(scale)));
                cand.push(e * u);
            }
            if good {
                aligned = cand;
                ok = true;
                break;
            }
        }
        if !ok {
            return Err(QrdError::Decomposition("matrix units not found".into(), 0.0));
        }
    }
    let mut basis = CMatrix::zeros(ec.nrows(), m);
    for k in 0..n {
        for (q, f) in aligned.iter().enumerate() {
            let col = ec * f.column(k);
            basis.column_mut(k * d + q).copy_from(&col);
        }
    }
    Ok((basis, n, d))
}

/// Checks the decomposition against the reconstruction identity, per-block
/// irreducibility and the absence of inter-block intertwiners.
pub fn verify_ki(d: &KIDecomposition, e: &Ensemble) -> KIReport {
    let reconstruction_residual = reconstruction_residual(d, e);
    let probability_residual = (0..e.len())
        .map(|x| (d.blocks.iter().map(|b| b.probs[x]).sum::<f64>() - 1.0).abs())
        .fold(0.0, f64::max);
    let commutant_dims: Vec<usize> = d
        .blocks
        .iter()
        .map(|b| {
            let ops: Vec<CMatrix> = b
                .states
                .iter()
                .zip(&b.probs)
                .filter(|(_, &p)| p > PROB_ZERO)
                .map(|(r, _)| r.clone())
                .collect();
            if ops.is_empty() {
                return b.dim_q * b.dim_q;
            }
            nullspace_of_commutators(&ops, b.dim_q, 1e-7).len()
        })
        .collect();
    let mut intertwiners = Vec::new();
    for i in 0..d.blocks.len() {
        for j in i + 1..d.blocks.len() {
            if intertwined(&d.blocks[i], &d.blocks[j]) {
                intertwiners.push((i, j));
            }
        }
    }
    let passed = reconstruction_residual <= RECONSTRUCTION_TOL
        && probability_residual <= 1e-8
        && commutant_dims.iter().all(|&k| k == 1)
        && intertwiners.is_empty();
    KIReport {
        reconstruction_residual,
        probability_residual,
        commutant_dims,
        intertwiners,
        passed,
    }
}

/// A unitary `V` with `V ρ_{cx} = ρ_{c'x} V` for all `x` and an
/// `x`-independent ratio `p_{c|x}/p_{c'|x}`.
fn intertwined(a: &KIBlock, b: &KIBlock) -> bool {
    if a.dim_q != b.dim_q {
        return false;
    }
    let mut ratio: Option<f64> = None;
    let mut xs = Vec::new();
    for x in 0..a.probs.len() {
        let (pa, pb) = (a.probs[x], b.probs[x]);
        match (pa > PROB_ZERO, pb > PROB_ZERO) {
            (false, false) => continue,
            (true, true) => {
                let r = pa / pb;
                match ratio {
                    None => ratio = Some(r),
                    Some(r0) if (r - r0).abs() > 1e-6 * r0.max(r) => return false,
                    _ => {}
                }
                xs.push(x);
            }
            _ => return false,
        }
    }
    if xs.is_empty() {
        return false;
    }
    let q = a.dim_q;
    let n = q * q;
    let id = linalg::identity(q);
    let mut l = CMatrix::zeros(xs.len().max(1) * n, n);
    for (k, &x) in xs.iter().enumerate() {
        // vec(V ρ − σ V) = (ρᵀ ⊗ I − I ⊗ σ) vec V.
        let blk = linalg::kron(&a.states[x].transpose(), &id) - linalg::kron(&id, &b.states[x]);
        l.view_mut((k * n, 0), (n, n)).copy_from(&blk);
    }
    let sols = nullspace(&l, 1e-7);
    if sols.is_empty() {
        return false;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut v = CMatrix::zeros(q, q);
    for s in &sols {
        let re: f64 = rng.sample(StandardNormal);
        let im: f64 = rng.sample(StandardNormal);
        v += CMatrix::from_column_slice(q, q, s.as_slice()) * c(re, im);
    }
    let gram = v.adjoint() * &v;
    let scale = linalg::trace(&gram).re / q as f64;
    scale > 1e-12 && (gram / cr(scale) - linalg::identity(q)).norm() < 1e-6
}

/// `S(CQ)` of `ω^{CQ}`.
pub fn blind_rate(e: &Ensemble) -> Result<f64> {
    let d = ki_decompose(e, KIOptions::default())?;
    Ok(blind_rate_of(&d, &e.probs()))
}

pub fn blind_rate_of(d: &KIDecomposition, probs: &[f64]) -> f64 {
    qcore::entropy_of_spectrum(&linalg::eigvalsh(&d.cq_average(probs)))
}

/// `ρ^{AX}` of `e` as a state on `[A, X]`.
pub fn ax_state(e: &Ensemble) -> DensityOp {
    let nx = e.len();
    let da = e.dim_a();
    let mut m = CMatrix::zeros(da * nx, da * nx);
    for (x, it) in e.items().iter().enumerate() {
        for a in 0..da {
            for b in 0..da {
                m[(a * nx + x, b * nx + x)] = it.rho[(a, b)] * cr(it.p);
            }
        }
    }
    DensityOp::new_unchecked(
        m,
        DimLayout::new([("A", da), ("X", nx)]).expect("distinct labels"),
    )
}

/// A channel fixing every `ρ_x`: dephasing of each `N_c` in the eigenbasis
/// of `ω_c` with seeded phases, identity on `Q_c`, identity off the support.
pub fn preserving_channel(d: &KIDecomposition, seed: u64) -> Channel {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let nm = d.n_max();
    let mut perp = linalg::identity(d.dim_a);
    for b in &d.blocks {
        perp -= &b.basis * b.basis.adjoint();
    }
    let mut kraus = Vec::with_capacity(nm);
    for k in 0..nm {
        let mut kk = if k == 0 { perp.clone() } else { CMatrix::zeros(d.dim_a, d.dim_a) };
        for b in &d.blocks {
            if k >= b.dim_n {
                continue;
            }
            let phase = Complex64::from_polar(1.0, rng.random_range(0.0..std::f64::consts::TAU));
            let mut pn = CMatrix::zeros(b.dim_n, b.dim_n);
            pn[(k, k)] = phase;
            kk += &b.basis * linalg::kron(&pn, &linalg::identity(b.dim_q)) * b.basis.adjoint();
        }
        kraus.push(kk);
    }
    Channel::from_kraus(&kraus)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::qcore::{ket, ket_plus};

    fn decompose(e: &Ensemble) -> KIDecomposition {
        ki_decompose(e, KIOptions::default()).unwrap()
    }

    #[test]
    fn identical_states_are_fully_redundant() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let rho = linalg::random_density(3, 2, &mut rng);
        let e = Ensemble::from_mixed(&[0.4, 0.6], &[rho.clone(), rho.clone()]).unwrap();
        let d = decompose(&e);
        assert_eq!(d.blocks.len(), 1);
        assert_eq!(d.blocks[0].dim_q, 1);
        assert_eq!(d.blocks[0].dim_n, 2);
        let omega_back = &d.blocks[0].basis * &d.blocks[0].omega * d.blocks[0].basis.adjoint();
        assert!((omega_back - rho).norm() < 1e-9);
        assert!(blind_rate_of(&d, &e.probs()).abs() < 1e-9);
    }

    #[test]
    fn orthogonal_states_are_classical() {
        let e = Ensemble::from_pure(&[0.5, 0.5], &[ket(2, 0), ket(2, 1)]).unwrap();
        let d = decompose(&e);
        assert_eq!(d.blocks.len(), 2);
        assert!(d.blocks.iter().all(|b| b.dim_q == 1 && b.dim_n == 1));
        assert!((blind_rate_of(&d, &e.probs()) - 1.0).abs() < 1e-9);
        assert!(verify_ki(&d, &e).passed);
    }

    #[test]
    fn nonorthogonal_pair_is_quantum() {
        let e = Ensemble::from_pure(&[0.5, 0.5], &[ket(2, 0), ket_plus()]).unwrap();
        let d = decompose(&e);
        assert_eq!(d.blocks.len(), 1);
        assert_eq!((d.blocks[0].dim_q, d.blocks[0].dim_n), (2, 1));
        // Eigenvalues (1 ± 1/√2)/2 of the average state.
        assert!((blind_rate_of(&d, &e.probs()) - 0.600876).abs() < 1e-6);
        let r = verify_ki(&d, &e);
        assert!(r.passed, "{r:?}");
    }

    #[test]
    fn redundant_factor_is_split_off() {
        let omega = CMatrix::from_diagonal(&CVector::from_vec(vec![cr(0.7), cr(0.3)]));
        let base = Ensemble::from_pure(&[0.5, 0.5], &[ket(2, 0), ket_plus()]).unwrap();
        let e = base.with_redundant_factor(&omega).unwrap();
        let d = decompose(&e);
        assert_eq!(d.blocks.len(), 1);
        assert_eq!((d.blocks[0].dim_q, d.blocks[0].dim_n), (2, 2));
        let w = linalg::eigvalsh(&d.blocks[0].omega);
        assert!((w[0] - 0.7).abs() < 1e-9 && (w[1] - 0.3).abs() < 1e-9);
        assert!((blind_rate_of(&d, &e.probs()) - blind_rate(&base).unwrap()).abs() < 1e-9);
        assert!(verify_ki(&d, &e).passed);
    }

    #[test]
    fn merged_blocks_fail_irreducibility() {
        let e = Ensemble::from_pure(&[0.5, 0.5], &[ket(2, 0), ket(2, 1)]).unwrap();
        let merged = KIDecomposition {
            dim_a: 2,
            blocks: vec![KIBlock {
                dim_q: 2,
                dim_n: 1,
                omega: linalg::identity(1),
                probs: vec![1.0, 1.0],
                states: vec![linalg::outer(&ket(2, 0)), linalg::outer(&ket(2, 1))],
                basis: linalg::identity(2),
            }],
            residual: 0.0,
        };
        let r = verify_ki(&merged, &e);
        assert!(r.reconstruction_residual < 1e-12);
        assert_eq!(r.commutant_dims, vec![2]);
        assert!(!r.passed);
    }

    #[test]
    fn split_redundant_factor_has_intertwiner() {
        let e = Ensemble::from_mixed(&[1.0], &[linalg::identity(2) / cr(2.0)]).unwrap();
        let block = |k: usize| KIBlock {
            dim_q: 1,
            dim_n: 1,
            omega: linalg::identity(1),
            probs: vec![0.5],
            states: vec![linalg::identity(1)],
            basis: CMatrix::from_column_slice(2, 1, ket(2, k).as_slice()),
        };
        let split = KIDecomposition {
            dim_a: 2,
            blocks: vec![block(0), block(1)],
            residual: 0.0,
        };
        let r = verify_ki(&split, &e);
        assert!(r.reconstruction_residual < 1e-12);
        assert_eq!(r.intertwiners, vec![(0, 1)]);
        assert!(!r.passed);
    }

    #[test]
    fn ki_off_on_round_trip() {
        let omega = CMatrix::from_diagonal(&CVector::from_vec(vec![cr(0.7), cr(0.3)]));
        let base = Ensemble::from_pure(&[0.5, 0.5], &[ket(2, 0), ket_plus()]).unwrap();
        let e = base.with_redundant_factor(&omega).unwrap();
        let d = decompose(&e);
        let rho = ax_state(&e);
        let off = d.ki_off();
        let on = d.ki_on();
        assert!(off.is_cptp() && on.is_cptp());
        let cqx = off.apply(&rho, &["A"], "CQ").unwrap();
        assert_eq!(cqx.layout().dim_of("CQ").unwrap(), 2);
        let back = on.apply(&cqx, &["CQ"], "A").unwrap();
        assert!((back.matrix() - rho.matrix()).norm() < 1e-7);
    }

    #[test]
    fn preserving_channel_fixes_states() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let sigma0 = linalg::random_density(2, 2, &mut rng);
        let omega = linalg::random_density(2, 2, &mut rng);
        let base = Ensemble::from_mixed(&[0.5, 0.5], &[sigma0, linalg::outer(&ket_plus())]).unwrap();
        let e = base.with_redundant_factor(&omega).unwrap();
        let d = decompose(&e);
        let lam = preserving_channel(&d, 3);
        assert!(lam.is_cptp());
        for it in e.items() {
            assert!((lam.apply_matrix(&it.rho) - &it.rho).norm() < 1e-8);
        }
    }

    #[test]
    fn tolerance_range_is_enforced() {
        let e = Ensemble::from_pure(&[1.0], &[ket(2, 0)]).unwrap();
        assert!(ki_decompose(&e, KIOptions { tol: 1e-3, seed: 0 }).is_err());
    }
}
