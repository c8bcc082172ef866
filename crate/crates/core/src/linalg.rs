//! Small dense linear-algebra helpers shared by the geometry modules.

use nalgebra::{DMatrix, DVector};

use crate::float::Float;

/// `‖BᵀB − I‖_max` for an n×k basis candidate.
pub fn orthonormality_defect<T: Float>(basis: &DMatrix<T>) -> T {
    let k = basis.ncols();
    let gram = basis.transpose() * basis;
    let mut defect = T::zero();
    for i in 0..k {
        for j in 0..k {
            let target = if i == j { T::one() } else { T::zero() };
            defect = defect.max((gram[(i, j)] - target).abs());
        }
    }
    defect
}

/// Orthogonal projector `BBᵀ` onto the column span of an orthonormal basis.
pub fn projector<T: Float>(basis: &DMatrix<T>) -> DMatrix<T> {
    basis * basis.transpose()
}

/// Orthonormal basis of the orthocomplement of `span(basis)` in ℝⁿ.
///
/// Eigenvectors of the projector with eigenvalue below 1/2. The eigenvalues
/// of an exact projector are {0, 1}, so the split is unambiguous.
pub fn orthocomplement<T: Float>(basis: &DMatrix<T>, ambient: usize) -> DMatrix<T> {
    let p = if basis.ncols() == 0 {
        DMatrix::<T>::zeros(ambient, ambient)
    } else {
        projector(basis)
    };
    eigencols_below(&p, T::c(0.5))
}

/// Orthonormal basis of the intersection `span(a) ∩ span(b)`.
///
/// Null space of `2I − P_a − P_b`, with eigenvalues compared against the
/// rank tolerance. For exact data the eigenvalues are 0 on the intersection
/// and ≥ 1 − cos(θ₁) > 0 elsewhere.
pub fn intersection<T: Float>(a: &DMatrix<T>, b: &DMatrix<T>, ambient: usize) -> DMatrix<T> {
    let mut m = DMatrix::<T>::identity(ambient, ambient) * T::c(2.0);
    if a.ncols() > 0 {
        m -= projector(a);
    }
    if b.ncols() > 0 {
        m -= projector(b);
    }
    eigencols_below(&m, T::c(crate::tol::SUBSPACE_RANK))
}

/// True when `span(b) ⊆ span(a)` within the rank tolerance.
pub fn contains<T: Float>(a: &DMatrix<T>, b: &DMatrix<T>) -> bool {
    if b.ncols() == 0 {
        return true;
    }
    if a.ncols() == 0 {
        return false;
    }
    let residual = b - projector(a) * b;
    residual.norm() <= T::c(crate::tol::SUBSPACE_RANK) * T::c(b.ncols() as f64).sqrt()
}

/// Subspace equality via projector distance (sin of the largest principal
/// angle bounds `‖P_a − P_b‖`).
pub fn same_span<T: Float>(a: &DMatrix<T>, b: &DMatrix<T>) -> bool {
    if a.ncols() != b.ncols() {
        return false;
    }
    if a.ncols() == 0 {
        return true;
    }
    (projector(a) - projector(b)).norm() <= T::c(crate::tol::SUBSPACE_RANK)
}

/// Cosine of the first (smallest) principal angle between two subspaces,
/// i.e. the largest singular value of `AᵀB`. Returns 0 for empty factors.
pub fn cos_first_principal_angle<T: Float>(a: &DMatrix<T>, b: &DMatrix<T>) -> T {
    if a.ncols() == 0 || b.ncols() == 0 {
        return T::zero();
    }
    let m = a.transpose() * b;
    let svd = m.svd(false, false);
    let mut top = T::zero();
    for s in svd.singular_values.iter() {
        top = top.max(*s);
    }
    // Rounding can push the cosine marginally above 1.
    top.min(T::one())
}

/// Columns of the orthonormal eigenbasis of a symmetric matrix whose
/// eigenvalues lie strictly below `cut`.
fn eigencols_below<T: Float>(sym: &DMatrix<T>, cut: T) -> DMatrix<T> {
    let n = sym.nrows();
    let eig = sym.clone().symmetric_eigen();
    let idx: Vec<usize> = (0..n).filter(|&i| eig.eigenvalues[i] < cut).collect();
    let mut out = DMatrix::<T>::zeros(n, idx.len());
    for (col, &i) in idx.iter().enumerate() {
        out.set_column(col, &eig.eigenvectors.column(i));
    }
    out
}

/// Smallest eigenvalue of a symmetric matrix (0 for the empty matrix).
pub fn eigmin<T: Float>(sym: &DMatrix<T>) -> T {
    if sym.nrows() == 0 {
        return T::zero();
    }
    let eig = sym.clone().symmetric_eigen();
    let mut low = eig.eigenvalues[0];
    for v in eig.eigenvalues.iter() {
        low = low.min(*v);
    }
    low
}

/// `max |M_ij − M_ji|`.
pub fn symmetry_defect<T: Float>(m: &DMatrix<T>) -> T {
    let mut defect = T::zero();
    for i in 0..m.nrows() {
        for j in (i + 1)..m.ncols() {
            defect = defect.max((m[(i, j)] - m[(j, i)]).abs());
        }
    }
    defect
}

/// Symmetrize in place: `(M + Mᵀ)/2`.
pub fn symmetrize<T: Float>(m: &mut DMatrix<T>) {
    let half = T::c(0.5);
    for i in 0..m.nrows() {
        for j in (i + 1)..m.ncols() {
            let v = (m[(i, j)] + m[(j, i)]) * half;
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
}

/// Rank-one matrix `u vᵀ`.
pub fn outer<T: Float>(u: &DVector<T>, v: &DVector<T>) -> DMatrix<T> {
    u * v.transpose()
}

/// Spherical distance between unit vectors, stable at both ends:
/// `2·atan2(‖y₁ − y₂‖, ‖y₁ + y₂‖)`.
pub fn sphere_distance<T: Float>(y1: &DVector<T>, y2: &DVector<T>) -> T {
    let diff = (y1 - y2).norm();
    let sum = (y1 + y2).norm();
    diff.atan2(sum) * T::c(2.0)
}

/// Column rank with an absolute singular-value threshold.
pub fn rank<T: Float>(m: &DMatrix<T>, tol: T) -> usize {
    if m.ncols() == 0 || m.nrows() == 0 {
        return 0;
    }
    let svd = m.clone().svd(false, false);
    svd.singular_values.iter().filter(|&&s| s > tol).count()
}
