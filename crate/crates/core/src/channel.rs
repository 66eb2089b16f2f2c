//! CPTP maps stored as unnormalized Choi matrices
//! `J = Σ_ij |i⟩⟨j| ⊗ N(|i⟩⟨j|)` with the input factor first, so that
//! `Tr J = dimIn` and row index `i·dimOut + o` addresses `|i⟩_In|o⟩_Out`.

use crate::error::{QrdError, Result};
use crate::linalg::{self, cr, CMatrix};
use crate::qcore::{DensityOp, DimLayout};

pub const PSD_TOL: f64 = 1e-9;
pub const TP_TOL: f64 = 1e-8;
pub const KRAUS_CUTOFF: f64 = 1e-10;
pub const PROJECTION_TARGET: f64 = 1e-9;
pub const PROJECTION_MAX_ROUNDS: usize = 500;

#[derive(Debug, Clone)]
pub struct Channel {
    choi: CMatrix,
    dim_in: usize,
    dim_out: usize,
}

/// `V: In → Out ⊗ Env` with `V†V = I`.
#[derive(Debug, Clone)]
pub struct Isometry {
    pub matrix: CMatrix,
    pub dim_in: usize,
    pub dim_out: usize,
    pub dim_env: usize,
}

impl Isometry {
    pub fn residual(&self) -> f64 {
        (self.matrix.adjoint() * &self.matrix - linalg::identity(self.dim_in)).norm()
    }
}

impl Channel {
    /// Validated constructor.
    pub fn new(choi: CMatrix, dim_in: usize, dim_out: usize) -> Result<Self> {
        let n = dim_in * dim_out;
        if choi.nrows() != n || choi.ncols() != n {
            return Err(QrdError::DimensionMismatch(format!(
                "Choi matrix is {}x{}, expected {n}x{n}",
                choi.nrows(),
                choi.ncols()
            )));
        }
        let herm = linalg::hermitian_residual(&choi);
        if herm > TP_TOL {
            return Err(QrdError::InvalidChannel(format!(
                "Choi matrix not Hermitian (residual {herm:e})"
            )));
        }
        let choi = linalg::hermitize(&choi);
        let (psd, tp) = feasibility(&choi, dim_in, dim_out);
        if psd > PSD_TOL {
            return Err(QrdError::InvalidChannel(format!(
                "Choi matrix has eigenvalue {:e}",
                -psd
            )));
        }
        if tp > TP_TOL {
            return Err(QrdError::InvalidChannel(format!(
                "not trace preserving (residual {tp:e})"
            )));
        }
        Ok(Self {
            choi,
            dim_in,
            dim_out,
        })
    }

    /// Wrap a Choi matrix that is feasible by construction.
    pub(crate) fn new_unchecked(choi: CMatrix, dim_in: usize, dim_out: usize) -> Self {
        Self {
            choi,
            dim_in,
            dim_out,
        }
    }

    pub fn choi(&self) -> &CMatrix {
        &self.choi
    }

    pub fn dim_in(&self) -> usize {
        self.dim_in
    }

    pub fn dim_out(&self) -> usize {
        self.dim_out
    }

    /// `max(−λ_min(J), ‖Tr_Out J − I‖_F)`.
    pub fn feasibility_residual(&self) -> f64 {
        let (psd, tp) = feasibility(&self.choi, self.dim_in, self.dim_out);
        psd.max(tp)
    }

    pub fn is_cptp(&self) -> bool {
        let (psd, tp) = feasibility(&self.choi, self.dim_in, self.dim_out);
        psd <= PSD_TOL && tp <= TP_TOL
    }

    /// `N(|i⟩⟨j|)`.
    pub fn block(&self, i: usize, j: usize) -> CMatrix {
        let d = self.dim_out;
        self.choi.view((i * d, j * d), (d, d)).into_owned()
    }

    pub fn identity(d: usize) -> Self {
        let mut choi = CMatrix::zeros(d * d, d * d);
        for i in 0..d {
            for j in 0..d {
                choi[(i * d + i, j * d + j)] = cr(1.0);
            }
        }
        Self::new_unchecked(choi, d, d)
    }

    /// Constant channel `ρ ↦ Tr(ρ) σ`.
    pub fn replacer(sigma: &CMatrix, dim_in: usize) -> Self {
        Self::new_unchecked(
            linalg::kron(&linalg::identity(dim_in), &linalg::hermitize(sigma)),
            dim_in,
            sigma.nrows(),
        )
    }

    /// Dephasing in the orthonormal basis given by the columns of `basis`.
    pub fn dephasing(basis: &CMatrix) -> Result<Self> {
        let d = basis.nrows();
        if basis.ncols() != d || (basis.adjoint() * basis - linalg::identity(d)).norm() > 1e-9 {
            return Err(QrdError::InvalidArgument("dephasing basis is not unitary".into()));
        }
        let kraus: Vec<CMatrix> = (0..d)
            .map(|k| linalg::outer(&basis.column(k).into_owned()))
            .collect();
        Ok(Self::from_kraus(&kraus))
    }

    /// `ρ ↦ (1−p) ρ + p Tr(ρ) I/d`.
    pub fn depolarizing(d: usize, p: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&p) {
            return Err(QrdError::InvalidArgument(format!("depolarizing p = {p} outside [0,1]")));
        }
        let id = Self::identity(d);
        let rep = Self::replacer(&(linalg::identity(d) / cr(d as f64)), d);
        Ok(Self::new_unchecked(
            id.choi * cr(1.0 - p) + rep.choi * cr(p),
            d,
            d,
        ))
    }

    pub fn unitary(u: &CMatrix) -> Self {
        Self::from_kraus(std::slice::from_ref(u))
    }

    /// `ρ ↦ Σ_k K_k ρ K_k†`. Trace preservation is the caller's contract.
    pub fn from_kraus(kraus: &[CMatrix]) -> Self {
        let dim_out = kraus[0].nrows();
        let dim_in = kraus[0].ncols();
        let n = dim_in * dim_out;
        let mut choi = CMatrix::zeros(n, n);
        for k in kraus {
            let v = vec_in_out(k);
            choi += &v * v.adjoint();
        }
        Self::new_unchecked(linalg::hermitize(&choi), dim_in, dim_out)
    }

    /// `ρ ↦ Tr_Env(V ρ V†)` for `V: In → Out ⊗ Env`.
    pub fn from_isometry(v: &Isometry) -> Self {
        Self::from_kraus(&isometry_to_kraus(v))
    }

    /// Partial trace `In = Keep ⊗ Drop → Keep` (or `Drop ⊗ Keep` when
    /// `keep_first` is false).
    pub fn partial_trace(dim_keep: usize, dim_drop: usize, keep_first: bool) -> Self {
        let kraus: Vec<CMatrix> = (0..dim_drop)
            .map(|e| {
                let bra = linalg::outer_bra(dim_drop, e);
                if keep_first {
                    linalg::kron(&linalg::identity(dim_keep), &bra)
                } else {
                    linalg::kron(&bra, &linalg::identity(dim_keep))
                }
            })
            .collect();
        Self::from_kraus(&kraus)
    }

    /// Kraus operators from the Choi eigendecomposition:
    /// `K_k[o,i] = √λ_k v_k[i·dimOut + o]` for `λ_k > 1e-10`.
    pub fn kraus(&self) -> Vec<CMatrix> {
        let (vals, vecs) = linalg::eigh(&self.choi);
        let mut out = Vec::new();
        for (k, &l) in vals.iter().enumerate() {
            if l <= KRAUS_CUTOFF {
                continue;
            }
            let s = cr(l.sqrt());
            let col = vecs.column(k);
            out.push(CMatrix::from_fn(self.dim_out, self.dim_in, |o, i| {
                col[i * self.dim_out + o] * s
            }));
        }
        if out.is_empty() {
            out.push(CMatrix::zeros(self.dim_out, self.dim_in));
        }
        out
    }

    /// `V[(o,k), i] = K_k[o,i]`, output ordered `Out ⊗ Env`.
    pub fn stinespring(&self) -> Isometry {
        let kraus = self.kraus();
        let r = kraus.len();
        let mut v = CMatrix::zeros(self.dim_out * r, self.dim_in);
        for (k, kk) in kraus.iter().enumerate() {
            for o in 0..self.dim_out {
                for i in 0..self.dim_in {
                    v[(o * r + k, i)] = kk[(o, i)];
                }
            }
        }
        Isometry {
            matrix: v,
            dim_in: self.dim_in,
            dim_out: self.dim_out,
            dim_env: r,
        }
    }

    /// `ρ ↦ Tr_Out(V ρ V†)` on the Stinespring environment.
    pub fn complementary(&self) -> Channel {
        complementary_of(&self.stinespring())
    }

    /// `Σ_ij m_ij N(|i⟩⟨j|)` for a raw input operator.
    pub fn apply_matrix(&self, m: &CMatrix) -> CMatrix {
        let d = self.dim_out;
        let mut out = CMatrix::zeros(d, d);
        for i in 0..self.dim_in {
            for j in 0..self.dim_in {
                let w = m[(i, j)];
                if w.norm() == 0.0 {
                    continue;
                }
                out += self.choi.view((i * d, j * d), (d, d)) * w;
            }
        }
        out
    }

    /// Apply to the factors `on` (in that order) of `rho`, identity
    /// elsewhere. The output carries `out_label` first, followed by the
    /// untouched factors in their original order.
    pub fn apply(&self, rho: &DensityOp, on: &[&str], out_label: &str) -> Result<DensityOp> {
        let (rho_p, rest) = self.prepare(rho, on, out_label)?;
        let dr = rest.total_dim();
        let m = apply_choi_path(&self.choi, self.dim_in, self.dim_out, rho_p.matrix(), dr);
        Ok(DensityOp::new_unchecked(
            linalg::hermitize(&m),
            DimLayout::single(out_label, self.dim_out).concat(&rest)?,
        ))
    }

    /// Same action as [`Channel::apply`], evaluated through Kraus operators.
    pub fn apply_kraus(&self, rho: &DensityOp, on: &[&str], out_label: &str) -> Result<DensityOp> {
        let (rho_p, rest) = self.prepare(rho, on, out_label)?;
        let dr = rest.total_dim();
        let id = linalg::identity(dr);
        let mut m = CMatrix::zeros(self.dim_out * dr, self.dim_out * dr);
        for k in self.kraus() {
            let kk = linalg::kron(&k, &id);
            m += &kk * rho_p.matrix() * kk.adjoint();
        }
        Ok(DensityOp::new_unchecked(
            linalg::hermitize(&m),
            DimLayout::single(out_label, self.dim_out).concat(&rest)?,
        ))
    }

    fn prepare(&self, rho: &DensityOp, on: &[&str], out_label: &str) -> Result<(DensityOp, DimLayout)> {
        let layout = rho.layout();
        let on_pos = layout.positions(on)?;
        let din: usize = on_pos.iter().map(|&p| layout.dims()[p]).product();
        if din != self.dim_in {
            return Err(QrdError::DimensionMismatch(format!(
                "channel input dimension {} but factors {on:?} have dimension {din}",
                self.dim_in
            )));
        }
        let rest_pos: Vec<usize> = (0..layout.len()).filter(|p| !on_pos.contains(p)).collect();
        let rest = layout.sub_layout(&rest_pos);
        if rest.labels().contains(&out_label) {
            return Err(QrdError::LabelCollision(out_label.to_string()));
        }
        let order: Vec<&str> = on
            .iter()
            .copied()
            .chain(rest.labels())
            .collect();
        Ok((rho.reorder(&order)?, rest))
    }

    /// `M ∘ N` (this channel first).
    pub fn then(&self, m: &Channel) -> Result<Channel> {
        if m.dim_in != self.dim_out {
            return Err(QrdError::DimensionMismatch(format!(
                "composition {} → {} then {} → {}",
                self.dim_in, self.dim_out, m.dim_in, m.dim_out
            )));
        }
        let d = self.dim_in;
        let o = m.dim_out;
        let mut choi = CMatrix::zeros(d * o, d * o);
        for i in 0..d {
            for j in 0..d {
                let blk = m.apply_matrix(&self.block(i, j));
                choi.view_mut((i * o, j * o), (o, o)).copy_from(&blk);
            }
        }
        Ok(Channel::new_unchecked(linalg::hermitize(&choi), d, o))
    }

    /// `N ⊗ M` acting on `In_N ⊗ In_M → Out_N ⊗ Out_M`.
    pub fn tensor(&self, m: &Channel) -> Channel {
        let joint = linalg::kron(&self.choi, &m.choi);
        let dims = [self.dim_in, self.dim_out, m.dim_in, m.dim_out];
        let choi = linalg::permute_factors(&joint, &dims, &[0, 2, 1, 3]);
        Channel::new_unchecked(choi, self.dim_in * m.dim_in, self.dim_out * m.dim_out)
    }

    /// `t N + (1−t) M`.
    pub fn mix(&self, t: f64, m: &Channel) -> Result<Channel> {
        if self.dim_in != m.dim_in || self.dim_out != m.dim_out {
            return Err(QrdError::DimensionMismatch("mixing channels of different shape".into()));
        }
        Ok(Channel::new_unchecked(
            &self.choi * cr(t) + &m.choi * cr(1.0 - t),
            self.dim_in,
            self.dim_out,
        ))
    }

    /// `Tr_Drop ∘ N` for `Out = Keep ⊗ Drop`.
    pub fn trace_output_tail(&self, dim_keep: usize) -> Result<Channel> {
        if !self.dim_out.is_multiple_of(dim_keep) {
            return Err(QrdError::DimensionMismatch(format!(
                "{dim_keep} does not divide output dimension {}",
                self.dim_out
            )));
        }
        let drop = self.dim_out / dim_keep;
        let choi = linalg::ptrace_keep(&self.choi, &[self.dim_in, dim_keep, drop], &[0, 1]);
        Ok(Channel::new_unchecked(choi, self.dim_in, dim_keep))
    }
}

/// `ρ ↦ Tr_Out(V ρ V†)`.
pub fn complementary_of(v: &Isometry) -> Channel {
    let (din, dout, denv) = (v.dim_in, v.dim_out, v.dim_env);
    let mut choi = CMatrix::zeros(din * denv, din * denv);
    for i in 0..din {
        for j in 0..din {
            for e in 0..denv {
                for f in 0..denv {
                    let mut acc = cr(0.0);
                    for o in 0..dout {
                        acc += v.matrix[(o * denv + e, i)] * v.matrix[(o * denv + f, j)].conj();
                    }
                    choi[(i * denv + e, j * denv + f)] = acc;
                }
            }
        }
    }
    Channel::new_unchecked(linalg::hermitize(&choi), din, denv)
}

fn isometry_to_kraus(v: &Isometry) -> Vec<CMatrix> {
    (0..v.dim_env)
        .map(|e| CMatrix::from_fn(v.dim_out, v.dim_in, |o, i| v.matrix[(o * v.dim_env + e, i)]))
        .collect()
}

fn vec_in_out(k: &CMatrix) -> linalg::CVector {
    let (dout, din) = (k.nrows(), k.ncols());
    linalg::CVector::from_fn(din * dout, |idx, _| k[(idx % dout, idx / dout)])
}

/// `τ = Σ_ij N(|i⟩⟨j|) ⊗ ρ_ij` where `ρ_ij` is the `(i,j)` block of `rho`
/// on `In ⊗ Rest`.
pub(crate) fn apply_choi_path(choi: &CMatrix, din: usize, dout: usize, rho: &CMatrix, dr: usize) -> CMatrix {
    let mut out = CMatrix::zeros(dout * dr, dout * dr);
    for i in 0..din {
        for j in 0..din {
            let nij = choi.view((i * dout, j * dout), (dout, dout));
            let rij = rho.view((i * dr, j * dr), (dr, dr));
            if rij.iter().all(|z| z.norm() == 0.0) {
                continue;
            }
            for o in 0..dout {
                for p in 0..dout {
                    let w = nij[(o, p)];
                    if w.norm() == 0.0 {
                        continue;
                    }
                    let mut blk = out.view_mut((o * dr, p * dr), (dr, dr));
                    blk += rij * w;
                }
            }
        }
    }
    out
}

/// `(max(0, −λ_min), ‖Tr_Out J − I‖_F)`.
pub fn feasibility(choi: &CMatrix, dim_in: usize, dim_out: usize) -> (f64, f64) {
    let psd = (-linalg::min_eigenvalue(choi)).max(0.0);
    let t = linalg::ptrace_keep(choi, &[dim_in, dim_out], &[0]);
    let tp = (t - linalg::identity(dim_in)).norm();
    (psd, tp)
}

fn clip_psd(m: &CMatrix) -> CMatrix {
    linalg::herm_fn(m, |l| l.max(0.0))
}

fn tp_correct(m: &CMatrix, dim_in: usize, dim_out: usize) -> CMatrix {
    let t = linalg::ptrace_keep(m, &[dim_in, dim_out], &[0]);
    let corr = (linalg::identity(dim_in) - t) / cr(dim_out as f64);
    m + linalg::kron(&corr, &linalg::identity(dim_out))
}

/// Congruence `(T^{-1/2} ⊗ I) J (T^{-1/2} ⊗ I)` with `T = Tr_Out J`;
/// exactly TP and PSD when `J ⪰ 0` and `T ≻ 0`.
pub(crate) fn congruence_polish(m: &CMatrix, dim_in: usize, dim_out: usize) -> Option<CMatrix> {
    let t = linalg::ptrace_keep(m, &[dim_in, dim_out], &[0]);
    let (vals, vecs) = linalg::eigh(&t);
    if vals.last().copied().unwrap_or(0.0) <= 1e-8 {
        return None;
    }
    let tinv = linalg::from_eig(&vals, &vecs, |l| 1.0 / l.sqrt());
    let s = linalg::kron(&tinv, &linalg::identity(dim_out));
    Some(linalg::hermitize(&(&s * m * &s)))
}

/// Alternating PSD clip and trace-preserving correction until the joint
/// residual is at most 1e-9. Once the residual falls below 1e-6 a
/// congruence polish finishes the projection exactly.
pub fn project_cptp(m: &CMatrix, dim_in: usize, dim_out: usize) -> Result<Channel> {
    let n = dim_in * dim_out;
    if m.nrows() != n || m.ncols() != n {
        return Err(QrdError::DimensionMismatch(format!(
            "matrix is {}x{}, expected {n}x{n}",
            m.nrows(),
            m.ncols()
        )));
    }
    let mut cur = linalg::hermitize(m);
    let mut residual = f64::INFINITY;
    for _ in 0..PROJECTION_MAX_ROUNDS {
        let (psd, tp) = feasibility(&cur, dim_in, dim_out);
        residual = psd.max(tp);
        if residual <= PROJECTION_TARGET {
            return Ok(Channel::new_unchecked(cur, dim_in, dim_out));
        }
        let clipped = clip_psd(&cur);
        if residual < 1e-6 {
            if let Some(p) = congruence_polish(&clipped, dim_in, dim_out) {
                let (psd, tp) = feasibility(&p, dim_in, dim_out);
                if psd.max(tp) <= PROJECTION_TARGET {
                    return Ok(Channel::new_unchecked(p, dim_in, dim_out));
                }
            }
        }
        cur = tp_correct(&clipped, dim_in, dim_out);
    }
    Err(QrdError::ProjectionNonConvergence {
        rounds: PROJECTION_MAX_ROUNDS,
        residual,
    })
}
