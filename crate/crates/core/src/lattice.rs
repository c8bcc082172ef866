//! The collision-plane arrangement: a finite, intersection-closed family of
//! linear subspaces `X_a ⊂ ℝⁿ` with its partial order, orthogonal
//! projections, k-cluster stratification, and the induced strata `C_a`,
//! `C′_a` on the sphere at infinity.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::float::Float;
use crate::linalg;
use crate::tol;

/// Stable integer label of a cluster. By convention id 0 is `X₀ = ℝⁿ` (the
/// free cluster) and id 1 is `X₁ = {0}`; closure products follow in the
/// order they are discovered.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ClusterId(pub usize);

/// The free cluster `X₀ = ℝⁿ`.
pub const FREE: ClusterId = ClusterId(0);
/// The origin cluster `X₁ = {0}`.
pub const ORIGIN: ClusterId = ClusterId(1);

impl std::fmt::Display for ClusterId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// A linear subspace of ℝⁿ given by an orthonormal basis (columns).
#[derive(Debug, Clone)]
pub struct Subspace<T: Float> {
    basis: DMatrix<T>,
}

impl<T: Float> Subspace<T> {
    /// Wraps an orthonormal basis matrix. Columns must be orthonormal to
    /// within 1e-12.
    pub fn new(basis: DMatrix<T>) -> Result<Self> {
        let defect = linalg::orthonormality_defect(&basis);
        if defect > T::c(tol::ORTHONORMALITY) {
            return Err(Error::InvalidSubspace(format!(
                "basis columns not orthonormal, defect {:.3e}",
                defect.to_f64()
            )));
        }
        Ok(Self { basis })
    }

    /// The zero subspace `{0} ⊂ ℝⁿ`.
    pub fn zero(ambient: usize) -> Self {
        Self {
            basis: DMatrix::zeros(ambient, 0),
        }
    }

    /// The full space ℝⁿ.
    pub fn full(ambient: usize) -> Self {
        Self {
            basis: DMatrix::identity(ambient, ambient),
        }
    }

    /// Spans a (not necessarily orthonormal) set of row vectors, applying
    /// Gram–Schmidt. Fails on dependent rows.
    pub fn from_rows(rows: &[Vec<T>], ambient: usize) -> Result<Self> {
        let mut cols: Vec<DVector<T>> = Vec::new();
        for row in rows {
            if row.len() != ambient {
                return Err(Error::DimensionMismatch {
                    expected: ambient,
                    got: row.len(),
                });
            }
            let mut v = DVector::from_column_slice(row);
            for c in &cols {
                let proj = c.dot(&v);
                v -= c * proj;
            }
            let norm = v.norm();
            if norm <= T::c(tol::SUBSPACE_RANK) {
                return Err(Error::InvalidSubspace(
                    "dependent generator rows".to_string(),
                ));
            }
            cols.push(v / norm);
        }
        let mut basis = DMatrix::zeros(ambient, cols.len());
        for (i, c) in cols.iter().enumerate() {
            basis.set_column(i, c);
        }
        Self::new(basis)
    }

    pub fn dim(&self) -> usize {
        self.basis.ncols()
    }

    pub fn ambient_dim(&self) -> usize {
        self.basis.nrows()
    }

    pub fn basis(&self) -> &DMatrix<T> {
        &self.basis
    }

    /// Orthogonal projection of `v` onto this subspace.
    pub fn project(&self, v: &DVector<T>) -> DVector<T> {
        if self.dim() == 0 {
            return DVector::zeros(self.ambient_dim());
        }
        &self.basis * (self.basis.transpose() * v)
    }

    /// Coordinates of `π v` in this subspace's basis.
    pub fn coords(&self, v: &DVector<T>) -> DVector<T> {
        self.basis.transpose() * v
    }

    /// Embeds basis coordinates back into ℝⁿ.
    pub fn embed(&self, coords: &DVector<T>) -> DVector<T> {
        &self.basis * coords
    }

    /// `|π^⊥ v|`, the distance of `v` from the subspace.
    pub fn normal_distance(&self, v: &DVector<T>) -> T {
        (v - self.project(v)).norm()
    }

    pub fn contains_vector(&self, v: &DVector<T>, tolerance: T) -> bool {
        self.normal_distance(v) <= tolerance
    }
}

/// Orthogonal splitting ℝⁿ = X_a ⊕ X^a_b ⊕ X^{ab} for a pair `X_a ⊆ X_b`,
/// where `X^a_b = X^a ∩ X_b` and `X^{ab} = X^a ∩ X^b = X^b`.
#[derive(Debug, Clone)]
pub struct SplitCoordinates<T: Float> {
    pub x_a: DMatrix<T>,
    pub x_a_b: DMatrix<T>,
    pub x_ab: DMatrix<T>,
}

/// Intersection-closed family of collision planes with the partial order
/// `a ≤ b ⇔ X_b ⊆ X_a` (equivalently `C_b ⊆ C_a`) and the k-cluster ranks.
///
/// Immutable after construction; all queries take `&self`.
#[derive(Debug, Clone)]
pub struct ClusterLattice<T: Float> {
    ambient_dim: usize,
    subspaces: Vec<Subspace<T>>,
    /// `leq[a][b]` ⇔ a ≤ b ⇔ X_b ⊆ X_a.
    leq: Vec<Vec<bool>>,
    cluster_rank: Vec<usize>,
}

/// Builds the intersection closure of `generators ∪ {{0}, ℝⁿ}` and assigns
/// ids, order, and cluster ranks.
///
/// Generators equal (up to the 1e-10 principal-angle tolerance) to each
/// other or to the two distinguished elements are deduplicated.
pub fn build_lattice<T: Float>(
    generators: Vec<Subspace<T>>,
    ambient_dim: usize,
) -> Result<ClusterLattice<T>> {
    for g in &generators {
        if g.ambient_dim() != ambient_dim {
            return Err(Error::DimensionMismatch {
                expected: ambient_dim,
                got: g.ambient_dim(),
            });
        }
    }
    let mut subs: Vec<Subspace<T>> = vec![Subspace::full(ambient_dim), Subspace::zero(ambient_dim)];
    for g in generators {
        if !subs.iter().any(|s| linalg::same_span(s.basis(), g.basis())) {
            subs.push(g);
        }
    }
    // Fixpoint pairwise intersection closure.
    loop {
        let mut added = false;
        let len = subs.len();
        for i in 0..len {
            for j in (i + 1)..len {
                let cap = linalg::intersection(subs[i].basis(), subs[j].basis(), ambient_dim);
                if !subs.iter().any(|s| linalg::same_span(s.basis(), &cap)) {
                    subs.push(Subspace::new(cap)?);
                    added = true;
                }
            }
        }
        if !added {
            break;
        }
    }

    let m = subs.len();
    let mut leq = vec![vec![false; m]; m];
    for a in 0..m {
        for b in 0..m {
            leq[a][b] = linalg::contains(subs[a].basis(), subs[b].basis());
        }
    }

    // Iterative maximal-element peeling: I₁ = {1}; m-clusters are the
    // maximal elements (smallest remaining planes) of what is left.
    let mut cluster_rank = vec![0usize; m];
    cluster_rank[1] = 1;
    let mut remaining: Vec<usize> = (0..m).filter(|&a| a != 1).collect();
    let mut k = 2;
    while !remaining.is_empty() {
        let maximal: Vec<usize> = remaining
            .iter()
            .copied()
            .filter(|&a| {
                !remaining
                    .iter()
                    .any(|&b| b != a && leq[a][b] && !leq[b][a])
            })
            .collect();
        for &a in &maximal {
            cluster_rank[a] = k;
        }
        remaining.retain(|a| !maximal.contains(a));
        k += 1;
    }

    Ok(ClusterLattice {
        ambient_dim,
        subspaces: subs,
        leq,
        cluster_rank,
    })
}

impl<T: Float> ClusterLattice<T> {
    pub fn ambient_dim(&self) -> usize {
        self.ambient_dim
    }

    pub fn len(&self) -> usize {
        self.subspaces.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn ids(&self) -> impl Iterator<Item = ClusterId> + '_ {
        (0..self.subspaces.len()).map(ClusterId)
    }

    pub fn subspace(&self, a: ClusterId) -> Result<&Subspace<T>> {
        self.subspaces.get(a.0).ok_or(Error::UnknownCluster(a.0))
    }

    fn sub(&self, a: ClusterId) -> &Subspace<T> {
        &self.subspaces[a.0]
    }

    pub fn dim(&self, a: ClusterId) -> usize {
        self.sub(a).dim()
    }

    /// Paper order: `a ≤ b ⇔ X_b ⊆ X_a ⇔ C_b ⊆ C_a`.
    pub fn leq(&self, a: ClusterId, b: ClusterId) -> bool {
        self.leq[a.0][b.0]
    }

    /// Plane containment `X_a ⊆ X_b` (i.e. `b ≤ a`), the form most queries
    /// in the geometry take.
    pub fn plane_subset(&self, a: ClusterId, b: ClusterId) -> bool {
        self.leq[b.0][a.0]
    }

    /// `k` such that `a` is a k-cluster.
    pub fn cluster_rank(&self, a: ClusterId) -> usize {
        self.cluster_rank[a.0]
    }

    /// The body count N of the system (the rank of the free cluster).
    pub fn body_count(&self) -> usize {
        self.cluster_rank[0]
    }

    /// Lattice meet: the cluster whose plane is `X_a ∩ X_b`.
    pub fn meet(&self, a: ClusterId, b: ClusterId) -> ClusterId {
        let cap = linalg::intersection(self.sub(a).basis(), self.sub(b).basis(), self.ambient_dim);
        for (i, s) in self.subspaces.iter().enumerate() {
            if linalg::same_span(s.basis(), &cap) {
                return ClusterId(i);
            }
        }
        // Closure guarantees membership; falling through means the lattice
        // was built with a different tolerance regime.
        unreachable!("lattice is intersection-closed")
    }

    /// External projection `π_a v` onto the collision plane `X_a`.
    pub fn project_external(&self, a: ClusterId, v: &DVector<T>) -> Result<DVector<T>> {
        Ok(self.subspace(a)?.project(v))
    }

    /// Internal projection `π^a v = v − π_a v`.
    pub fn project_internal(&self, a: ClusterId, v: &DVector<T>) -> Result<DVector<T>> {
        Ok(v - self.subspace(a)?.project(v))
    }

    /// The unique stratum of a unit vector: the smallest plane containing
    /// `y` within τ_mem = 1e-9.
    pub fn stratum(&self, y: &DVector<T>) -> Result<ClusterId> {
        let norm = y.norm();
        if (norm - T::one()).abs() > T::c(tol::UNIT_VECTOR) {
            return Err(Error::NotUnitVector(norm.to_f64()));
        }
        let tolerance = T::c(tol::MEMBERSHIP);
        let mut best: Option<ClusterId> = None;
        for (i, s) in self.subspaces.iter().enumerate() {
            if s.dim() == 0 {
                continue;
            }
            if s.contains_vector(y, tolerance) {
                best = match best {
                    None => Some(ClusterId(i)),
                    Some(b) => {
                        if self.plane_subset(ClusterId(i), b) && self.dim(ClusterId(i)) < self.dim(b)
                        {
                            Some(ClusterId(i))
                        } else {
                            Some(b)
                        }
                    }
                };
            }
        }
        Ok(best.expect("ℝⁿ contains every vector"))
    }

    /// Membership of `y` in the closed sphere `C_a` (i.e. `y ∈ X_a`).
    pub fn on_sphere(&self, a: ClusterId, y: &DVector<T>) -> Result<bool> {
        Ok(self.subspace(a)?.contains_vector(y, T::c(tol::MEMBERSHIP)))
    }

    /// Regular-part test `y ∈ C′_a = C_a ∖ C_{a,sing}`.
    pub fn is_regular_point(&self, a: ClusterId, y: &DVector<T>) -> Result<bool> {
        Ok(self.on_sphere(a, y)? && !self.is_singular_point(a, y)?)
    }

    /// Singular-part test `y ∈ C_{a,sing} = ∪_{b ≰ a} (C_b ∩ C_a)`.
    pub fn is_singular_point(&self, a: ClusterId, y: &DVector<T>) -> Result<bool> {
        if !self.on_sphere(a, y)? {
            return Ok(false);
        }
        for b in self.ids() {
            // b ≰ a means X_a ⊄ X_b: planes containing X_a are regular.
            if !self.plane_subset(a, b) && self.dim(b) > 0 && self.on_sphere(b, y)? {
                return Ok(true);
            }
        }
        Ok(false)
    }

    /// Orthonormal block decomposition for an ordered pair `C_a ⊆ C_b`.
    pub fn split_coordinates(&self, a: ClusterId, b: ClusterId) -> Result<SplitCoordinates<T>> {
        let sa = self.subspace(a)?;
        let sb = self.subspace(b)?;
        if !self.plane_subset(a, b) {
            return Err(Error::InvalidSubspace(format!(
                "X_{a} is not contained in X_{b}"
            )));
        }
        // X^a_b = X^a ∩ X_b: orthocomplement of X_a inside X_b.
        let xa_perp = linalg::orthocomplement(sa.basis(), self.ambient_dim);
        let x_a_b = linalg::intersection(&xa_perp, sb.basis(), self.ambient_dim);
        let x_ab = linalg::orthocomplement(sb.basis(), self.ambient_dim);
        Ok(SplitCoordinates {
            x_a: sa.basis().clone(),
            x_a_b,
            x_ab,
        })
    }

    /// All clusters `b` with `X_a ⊆ X_b` (equivalently `C_a ⊆ C_b`), the
    /// index set of admissible fiber lifts over `C′_a`.
    pub fn planes_containing(&self, a: ClusterId) -> Vec<ClusterId> {
        self.ids().filter(|&b| self.plane_subset(a, b)).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::dmatrix;

    fn line2(x: f64, y: f64) -> Subspace<f64> {
        let n = (x * x + y * y).sqrt();
        Subspace::new(dmatrix![x / n; y / n]).unwrap()
    }

    #[test]
    fn closure_of_empty_set_is_two_chain() {
        let lat = build_lattice::<f64>(vec![], 2).unwrap();
        assert_eq!(lat.len(), 2);
        assert_eq!(lat.dim(FREE), 2);
        assert_eq!(lat.dim(ORIGIN), 0);
        assert!(lat.leq(FREE, ORIGIN));
        assert!(!lat.leq(ORIGIN, FREE));
        assert_eq!(lat.body_count(), 2);
    }

    #[test]
    fn two_lines_in_r2_give_three_body() {
        let lat = build_lattice(vec![line2(1.0, 0.0), line2(1.0, 1.0)], 2).unwrap();
        assert_eq!(lat.len(), 4);
        // lines are 2-clusters, the free cluster is the 3-cluster
        let lines: Vec<_> = lat.ids().filter(|&a| lat.dim(a) == 1).collect();
        assert_eq!(lines.len(), 2);
        for a in lines {
            assert_eq!(lat.cluster_rank(a), 2);
        }
        assert_eq!(lat.body_count(), 3);
    }

    #[test]
    fn three_planes_in_r4_with_distinct_line_intersections() {
        // span{e1,e2}, span{e2,e3}, span{e3,e1}: pairwise intersections are
        // the three distinct axes, triple intersection is {0}.
        let p = |i: usize, j: usize| {
            let mut b = DMatrix::<f64>::zeros(4, 2);
            b[(i, 0)] = 1.0;
            b[(j, 1)] = 1.0;
            Subspace::new(b).unwrap()
        };
        let lat = build_lattice(vec![p(0, 1), p(1, 2), p(2, 0)], 4).unwrap();
        assert_eq!(lat.len(), 8);
        let lines = lat.ids().filter(|&a| lat.dim(a) == 1).count();
        assert_eq!(lines, 3);
        assert_eq!(lat.body_count(), 4);
    }

    #[test]
    fn closure_matches_brute_force_oracle_on_rotated_config() {
        // Oracle: repeated pairwise intersection with a straightforward
        // list-based fixpoint over projector matrices.
        let angle: f64 = 0.37;
        let (c, s) = (angle.cos(), angle.sin());
        let rot = dmatrix![c, -s, 0.0, 0.0; s, c, 0.0, 0.0; 0.0, 0.0, 1.0, 0.0; 0.0, 0.0, 0.0, 1.0];
        let p = |i: usize, j: usize| {
            let mut b = DMatrix::<f64>::zeros(4, 2);
            b[(i, 0)] = 1.0;
            b[(j, 1)] = 1.0;
            Subspace::new(&rot * b).unwrap()
        };
        let gens = vec![p(0, 1), p(1, 2), p(2, 3)];
        let lat = build_lattice(gens.clone(), 4).unwrap();

        let mut oracle: Vec<DMatrix<f64>> = vec![
            DMatrix::identity(4, 4),
            DMatrix::zeros(4, 0),
        ];
        for g in &gens {
            oracle.push(g.basis().clone());
        }
        loop {
            let mut added = false;
            let len = oracle.len();
            for i in 0..len {
                for j in (i + 1)..len {
                    let cap = linalg::intersection(&oracle[i], &oracle[j], 4);
                    if !oracle.iter().any(|m| linalg::same_span(m, &cap)) {
                        oracle.push(cap);
                        added = true;
                    }
                }
            }
            if !added {
                break;
            }
        }
        assert_eq!(lat.len(), oracle.len());
        for m in &oracle {
            assert!(lat
                .ids()
                .any(|a| linalg::same_span(lat.subspace(a).unwrap().basis(), m)));
        }
    }

    #[test]
    fn projections_and_strata() {
        let lat = build_lattice(vec![line2(1.0, 0.0), line2(0.0, 1.0)], 2).unwrap();
        let v = DVector::from_column_slice(&[3.0, 4.0]);
        assert_eq!(lat.project_external(FREE, &v).unwrap(), v);
        assert_eq!(
            lat.project_external(ORIGIN, &v).unwrap(),
            DVector::from_column_slice(&[0.0, 0.0])
        );
        let a = lat
            .ids()
            .find(|&a| {
                lat.dim(a) == 1
                    && lat
                        .subspace(a)
                        .unwrap()
                        .contains_vector(&DVector::from_column_slice(&[1.0, 0.0]), 1e-9)
            })
            .unwrap();
        let pv = lat.project_external(a, &v).unwrap();
        assert!((pv - DVector::from_column_slice(&[3.0, 0.0])).norm() < 1e-12);

        // Stratum classification
        let y = DVector::from_column_slice(&[1.0, 0.0]);
        assert_eq!(lat.stratum(&y).unwrap(), a);
        let g = DVector::from_column_slice(&[0.6, 0.8]);
        assert_eq!(lat.stratum(&g).unwrap(), FREE);
        // 2-clusters have empty singular part
        assert!(!lat.is_singular_point(a, &y).unwrap());
        assert!(lat.is_regular_point(a, &y).unwrap());

        let bad = DVector::from_column_slice(&[0.6, 0.9]);
        assert!(matches!(lat.stratum(&bad), Err(Error::NotUnitVector(_))));
    }

    #[test]
    fn four_body_singular_points() {
        // Two planes meeting in a line inside ℝ⁴: points on the line are
        // singular for each plane and regular for the line itself.
        let p = |i: usize, j: usize| {
            let mut b = DMatrix::<f64>::zeros(4, 2);
            b[(i, 0)] = 1.0;
            b[(j, 1)] = 1.0;
            Subspace::new(b).unwrap()
        };
        let lat = build_lattice(vec![p(0, 1), p(1, 2)], 4).unwrap();
        let line = lat
            .ids()
            .find(|&a| lat.dim(a) == 1)
            .expect("closure adds the common line");
        let mut y = DVector::zeros(4);
        y[1] = 1.0;
        assert_eq!(lat.stratum(&y).unwrap(), line);
        let plane = lat.ids().find(|&a| lat.dim(a) == 2).unwrap();
        assert!(lat.is_singular_point(plane, &y).unwrap());
        assert!(lat.is_regular_point(line, &y).unwrap());
    }

    #[test]
    fn order_is_partial_order() {
        let lat = build_lattice(vec![line2(1.0, 0.0), line2(1.0, 2.0)], 2).unwrap();
        for a in lat.ids() {
            for b in lat.ids() {
                if lat.leq(a, b) && lat.leq(b, a) {
                    assert_eq!(a, b);
                }
                for c in lat.ids() {
                    if lat.leq(a, b) && lat.leq(b, c) {
                        assert!(lat.leq(a, c));
                    }
                }
            }
        }
    }

    #[test]
    fn split_coordinates_blocks_are_orthogonal() {
        let p = |i: usize, j: usize| {
            let mut b = DMatrix::<f64>::zeros(4, 2);
            b[(i, 0)] = 1.0;
            b[(j, 1)] = 1.0;
            Subspace::new(b).unwrap()
        };
        let lat = build_lattice(vec![p(0, 1), p(1, 2)], 4).unwrap();
        let line = lat.ids().find(|&a| lat.dim(a) == 1).unwrap();
        let plane = lat.ids().find(|&a| lat.dim(a) == 2).unwrap();
        let split = lat.split_coordinates(line, plane).unwrap();
        assert_eq!(
            split.x_a.ncols() + split.x_a_b.ncols() + split.x_ab.ncols(),
            4
        );
        assert!((split.x_a.transpose() * &split.x_a_b).norm() < 1e-12);
        assert!((split.x_a.transpose() * &split.x_ab).norm() < 1e-12);
        assert!((split.x_a_b.transpose() * &split.x_ab).norm() < 1e-12);
    }
}
