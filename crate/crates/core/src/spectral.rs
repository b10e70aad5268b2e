//! Jacobi operator at a critical loop, its spectrum and the splitting `X = X⁻ ⊕ X⁺`.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::loopspace::LoopField;
use crate::model::{self, Chart};

pub const DEFAULT_DEGENERACY_TOL: f64 = 1e-8;

/// Galerkin matrix of `A ξ = −ξ'' − ∇²V_t(x)ξ` in real Fourier coordinates.
#[derive(Debug, Clone)]
pub struct JacobiOperator {
    pub dim: usize,
    pub modes: usize,
    pub matrix: DMatrix<f64>,
}

pub fn assemble(chart: &Chart) -> JacobiOperator {
    let n = chart.nodes();
    let mut matrix = -crate::loopspace::multiplication_matrix(chart.modes(), chart.dim(), chart.hessian_grid());
    for i in 0..chart.dim() * n {
        let w = 2.0 * std::f64::consts::PI * crate::loopspace::wavenumber(i % n) as f64;
        matrix[(i, i)] += w * w;
    }
    // collocation roundoff breaks exact symmetry at the 1e-16 level
    let sym = (&matrix + matrix.transpose()) * 0.5;
    JacobiOperator {
        dim: chart.dim(),
        modes: chart.modes(),
        matrix: sym,
    }
}

impl JacobiOperator {
    /// Same operator as [`model::second_variation_matrix`], built from the chart cache.
    pub fn from_model(model: &crate::model::TorusModel, x: &LoopField) -> Self {
        JacobiOperator {
            dim: x.dim(),
            modes: x.modes(),
            matrix: model::second_variation_matrix(model, x),
        }
    }

    pub fn apply(&self, field: &LoopField) -> LoopField {
        LoopField::from_vector(self.dim, self.modes, &(&self.matrix * field.to_vector()))
    }

    pub fn symmetry_defect(&self) -> f64 {
        (&self.matrix - self.matrix.transpose()).amax()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Part {
    Full,
    Plus,
    Minus,
}

/// Sorted eigen-decomposition of the Jacobi operator. Eigenvectors are the
/// columns of `eigenvectors`, orthonormal in L².
#[derive(Debug, Clone)]
pub struct SpectralDecomposition {
    pub dim: usize,
    pub modes: usize,
    pub eigenvalues: DVector<f64>,
    pub eigenvectors: DMatrix<f64>,
    pub morse_index: usize,
    pub gap: f64,
    pub mu: f64,
}

pub fn decompose(op: &JacobiOperator, mu_fraction: f64, degeneracy_tol: f64) -> Result<SpectralDecomposition> {
    if !(mu_fraction > 0.0 && mu_fraction < 1.0) {
        return Err(Error::Invalid(format!("μ fraction {mu_fraction} not in (0,1)")));
    }
    let eig = SymmetricEigen::new(op.matrix.clone());
    let mut order: Vec<usize> = (0..eig.eigenvalues.len()).collect();
    order.sort_by(|a, b| eig.eigenvalues[*a].total_cmp(&eig.eigenvalues[*b]).then(a.cmp(b)));
    let eigenvalues = DVector::from_iterator(order.len(), order.iter().map(|i| eig.eigenvalues[*i]));
    let mut eigenvectors = DMatrix::zeros(op.matrix.nrows(), order.len());
    for (col, i) in order.iter().enumerate() {
        let mut v = eig.eigenvectors.column(*i).into_owned();
        // deterministic orientation: largest-magnitude entry positive
        let imax = v.iamax();
        if v[imax] < 0.0 {
            v.neg_mut();
        }
        eigenvectors.set_column(col, &v);
    }
    let nearest = eigenvalues.iter().copied().min_by(|a, b| a.abs().total_cmp(&b.abs())).unwrap_or(0.0);
    if nearest.abs() < degeneracy_tol {
        return Err(Error::DegenerateCriticalPoint { eigenvalue: nearest });
    }
    let morse_index = eigenvalues.iter().filter(|l| **l < 0.0).count();
    let lowest_positive = eigenvalues.get(morse_index).copied().unwrap_or(f64::INFINITY);
    let gap = if morse_index == 0 {
        lowest_positive
    } else {
        (-eigenvalues[morse_index - 1]).min(lowest_positive)
    };
    Ok(SpectralDecomposition {
        dim: op.dim,
        modes: op.modes,
        eigenvalues,
        eigenvectors,
        morse_index,
        gap,
        mu: mu_fraction * gap,
    })
}

impl SpectralDecomposition {
    pub fn size(&self) -> usize {
        self.eigenvalues.len()
    }

    pub fn is_minus(&self, i: usize) -> bool {
        i < self.morse_index
    }

    pub fn in_part(&self, i: usize, part: Part) -> bool {
        match part {
            Part::Full => true,
            Part::Minus => self.is_minus(i),
            Part::Plus => !self.is_minus(i),
        }
    }

    /// L²-coordinates in the eigenbasis.
    pub fn to_eigen(&self, field: &LoopField) -> DVector<f64> {
        self.eigenvectors.tr_mul(&field.to_vector())
    }

    pub fn from_eigen(&self, coords: &DVector<f64>) -> LoopField {
        LoopField::from_vector(self.dim, self.modes, &(&self.eigenvectors * coords))
    }

    pub fn eigenvector(&self, i: usize) -> LoopField {
        LoopField::from_vector(self.dim, self.modes, &self.eigenvectors.column(i).into_owned())
    }

    /// Smallest positive eigenvalue `λ_{k+1}`.
    pub fn lowest_positive(&self) -> f64 {
        self.eigenvalues[self.morse_index]
    }

    pub fn project(&self, field: &LoopField, part: Part) -> LoopField {
        let mut y = self.to_eigen(field);
        for i in 0..y.len() {
            if !self.in_part(i, part) {
                y[i] = 0.0;
            }
        }
        self.from_eigen(&y)
    }

    /// Largest deviation of the eigenvectors from L²-orthonormality.
    pub fn orthonormality_defect(&self) -> f64 {
        let g = self.eigenvectors.tr_mul(&self.eigenvectors);
        (g - DMatrix::identity(self.size(), self.size())).amax()
    }

    /// W^{3,2}-type norm `(Σ (1+(2πj)²)³ |ĉ_j|²)^{1/2}` of eigenvector `i`.
    pub fn w32_norm(&self, i: usize) -> f64 {
        let v = self.eigenvector(i);
        let n = v.nodes();
        v.coords()
            .iter()
            .enumerate()
            .map(|(k, c)| crate::loopspace::w12_weight(k % n).powi(3) * c * c)
            .sum::<f64>()
            .sqrt()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{find_critical_loop, NewtonOptions, TorusModel};
    use crate::loopspace::NormKind;
    use approx::assert_relative_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;

    fn chart(model: TorusModel, guess: &[f64], modes: usize) -> Chart {
        let x = find_critical_loop(&model, &LoopField::constant(modes, guess), NewtonOptions::default()).unwrap();
        Chart::new(model, x)
    }

    #[test]
    fn pendulum_matrix_is_diagonal() {
        let op = assemble(&chart(TorusModel::pendulum(1.0), &[3.0], 8));
        assert!(op.symmetry_defect() < 1e-12);
        for i in 0..op.matrix.nrows() {
            let j = crate::loopspace::wavenumber(i) as f64;
            assert_relative_eq!(op.matrix[(i, i)], (2.0 * PI * j).powi(2) - 1.0, epsilon = 1e-10);
            for k in 0..op.matrix.ncols() {
                if k != i {
                    assert!(op.matrix[(i, k)].abs() < 1e-12);
                }
            }
        }
        let free = JacobiOperator::from_model(&TorusModel::free(1), &LoopField::constant(8, &[0.0]));
        for i in 0..free.matrix.nrows() {
            assert_relative_eq!(free.matrix[(i, i)], (2.0 * PI * crate::loopspace::wavenumber(i) as f64).powi(2));
        }
    }

    #[test]
    fn pendulum_spectrum() {
        let op = assemble(&chart(TorusModel::pendulum(1.0), &[3.0], 32));
        let dec = decompose(&op, 0.5, DEFAULT_DEGENERACY_TOL).unwrap();
        assert_relative_eq!(dec.eigenvalues[0], -1.0, epsilon = 1e-10);
        assert_relative_eq!(dec.eigenvalues[1], 4.0 * PI * PI - 1.0, epsilon = 1e-9);
        assert_relative_eq!(dec.eigenvalues[2], 4.0 * PI * PI - 1.0, epsilon = 1e-9);
        assert_eq!(dec.morse_index, 1);
        assert_relative_eq!(dec.gap, 1.0, epsilon = 1e-10);
        assert_relative_eq!(dec.mu, 0.5, epsilon = 1e-10);
        assert!(dec.orthonormality_defect() < 1e-10);
        assert!(dec.w32_norm(0).is_finite());
    }

    #[test]
    fn free_operator_is_degenerate() {
        let op = JacobiOperator::from_model(&TorusModel::free(1), &LoopField::constant(8, &[0.0]));
        assert!(matches!(
            decompose(&op, 0.5, DEFAULT_DEGENERACY_TOL),
            Err(Error::DegenerateCriticalPoint { .. })
        ));
    }

    #[test]
    fn projections() {
        let op = assemble(&chart(TorusModel::pendulum(1.0), &[3.0], 16));
        let dec = decompose(&op, 0.5, DEFAULT_DEGENERACY_TOL).unwrap();
        let one = LoopField::constant(16, &[1.0]);
        let p = dec.project(&one, Part::Minus);
        assert!(p.sub(&one).norm(NormKind::L2) < 1e-13);
        let mut cos = LoopField::zeros(1, 16);
        cos.coords_mut()[1] = 1.0;
        assert!(dec.project(&cos, Part::Minus).norm(NormKind::L2) < 1e-13);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let z = crate::model::random_w12_direction(1, 16, &mut rng);
        let sum = dec.project(&z, Part::Plus).add(&dec.project(&z, Part::Minus));
        assert!(sum.sub(&z).norm(NormKind::L2) < 1e-12);
        let pp = dec.project(&dec.project(&z, Part::Plus), Part::Plus);
        assert!(pp.sub(&dec.project(&z, Part::Plus)).norm(NormKind::L2) < 1e-12);
        let cross = dec.project(&dec.project(&z, Part::Minus), Part::Plus);
        assert!(cross.norm(NormKind::L2) < 1e-12);
    }

    #[test]
    fn operator_commutes_with_projections() {
        let model = TorusModel::new(
            1,
            vec![
                crate::model::PotentialTerm {
                    amp: 1.0,
                    wavevector: vec![1],
                    time_mode: 0,
                    phase: 0.0,
                    kind: crate::model::TermKind::Cos,
                },
                crate::model::PotentialTerm {
                    amp: 0.3,
                    wavevector: vec![1],
                    time_mode: 1,
                    phase: 0.2,
                    kind: crate::model::TermKind::Sin,
                },
            ],
        )
        .unwrap();
        let ch = chart(model, &[3.0], 12);
        let op = assemble(&ch);
        let dec = decompose(&op, 0.5, DEFAULT_DEGENERACY_TOL).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let z = crate::model::random_w12_direction(1, 12, &mut rng);
        for part in [Part::Plus, Part::Minus] {
            let lhs = op.apply(&dec.project(&z, part));
            let rhs = dec.project(&op.apply(&z), part);
            assert!(lhs.sub(&rhs).norm(NormKind::L2) < 1e-10);
        }
    }

    #[test]
    fn torus_product_has_index_two() {
        let op = assemble(&chart(TorusModel::torus_product(1.0), &[3.0, 3.2], 16));
        let dec = decompose(&op, 0.5, DEFAULT_DEGENERACY_TOL).unwrap();
        assert_eq!(dec.morse_index, 2);
        assert_relative_eq!(dec.eigenvalues[0], -1.0, epsilon = 1e-10);
        assert_relative_eq!(dec.eigenvalues[1], -1.0, epsilon = 1e-10);
    }
}
