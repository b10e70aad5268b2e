//! `e^{−sA}` and its restrictions to `X^±`, evaluated exactly in the eigenbasis,
//! plus an empirical audit of the smoothing estimates.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::loopspace::{self, FourierBasis, LoopField, NormKind};
use crate::spectral::{Part, SpectralDecomposition};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SemigroupQuery {
    pub s: f64,
    pub part: Part,
}

impl SemigroupQuery {
    pub fn new(s: f64, part: Part) -> Result<Self> {
        if s < 0.0 && part != Part::Minus {
            return Err(Error::NegativeTimeOnPlus { s });
        }
        Ok(Self { s, part })
    }
}

/// Diagonal multipliers `e^{−sλ_i}` restricted to `part` (zero elsewhere).
pub fn multipliers(dec: &SpectralDecomposition, q: SemigroupQuery) -> Result<DVector<f64>> {
    let q = SemigroupQuery::new(q.s, q.part)?;
    Ok(DVector::from_iterator(
        dec.size(),
        (0..dec.size()).map(|i| {
            if dec.in_part(i, q.part) {
                (-q.s * dec.eigenvalues[i]).exp()
            } else {
                0.0
            }
        }),
    ))
}

pub fn apply(dec: &SpectralDecomposition, q: SemigroupQuery, field: &LoopField) -> Result<LoopField> {
    let m = multipliers(dec, q)?;
    let y = dec.to_eigen(field).component_mul(&m);
    Ok(dec.from_eigen(&y))
}

/// Matrix of `e^{−sA}π_part` in real Fourier coordinates.
pub fn matrix(dec: &SpectralDecomposition, s: f64, part: Part) -> Result<DMatrix<f64>> {
    let m = multipliers(dec, SemigroupQuery { s, part })?;
    let mut scaled = dec.eigenvectors.clone();
    for (j, mut col) in scaled.column_iter_mut().enumerate() {
        col *= m[j];
    }
    Ok(scaled * dec.eigenvectors.transpose())
}

fn w12_sqrt_weights(dec: &SpectralDecomposition) -> DVector<f64> {
    let n = 2 * dec.modes + 1;
    DVector::from_iterator(dec.size(), (0..dec.size()).map(|i| loopspace::w12_weight(i % n).sqrt()))
}

/// Induced operator norm of `e^{−sA}π_part` between discretized normed spaces.
///
/// Supported pairs: `from ∈ {L1, L2, W12}`, `to ∈ {L2, W12}`. For `from = L1`
/// the maximum is attained at an extreme point of the discrete L¹ unit ball,
/// the grid functions `±N·δ_i e_m`.
pub fn operator_norm(dec: &SpectralDecomposition, s: f64, part: Part, from: NormKind, to: NormKind) -> Result<f64> {
    let op = matrix(dec, s, part)?;
    let w = w12_sqrt_weights(dec);
    let out = match to {
        NormKind::L2 => op,
        NormKind::W12 => DMatrix::from_diagonal(&w) * op,
        _ => {
            return Err(Error::UnsupportedNorm {
                from: from.label(),
                to: to.label(),
            })
        }
    };
    match from {
        NormKind::L2 => Ok(spectral_norm(&out)),
        NormKind::W12 => {
            let inv = DMatrix::from_diagonal(&w.map(|x| 1.0 / x));
            Ok(spectral_norm(&(out * inv)))
        }
        NormKind::L1 => {
            let basis = FourierBasis::get(dec.modes);
            let n = basis.nodes;
            let mut best: f64 = 0.0;
            for m in 0..dec.dim {
                for i in 0..n {
                    // coordinates of N·δ_i in component m are row i of the synthesis matrix
                    let mut a = DVector::zeros(dec.size());
                    for k in 0..n {
                        a[m * n + k] = basis.synth[(i, k)];
                    }
                    best = best.max((&out * a).norm());
                }
            }
            Ok(best)
        }
        _ => Err(Error::UnsupportedNorm {
            from: from.label(),
            to: to.label(),
        }),
    }
}

fn spectral_norm(m: &DMatrix<f64>) -> f64 {
    m.singular_values().max()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SmoothingRow {
    pub s: f64,
    pub opnorm: f64,
    pub weighted_value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SmoothingReport {
    pub part: Part,
    pub from: NormKind,
    pub to: NormKind,
    pub alpha: f64,
    pub mu: f64,
    /// Empirical constant: supremum of the weighted values over the grid.
    pub constant: f64,
    /// The same supremum over the grid extended by `s_min/2, s_min/4, s_min/8`.
    pub refined_constant: f64,
    /// True when refinement toward `s → 0⁺` changes the constant by ≤ 10%.
    pub refinement_stable: bool,
    pub rows: Vec<SmoothingRow>,
}

impl SmoothingReport {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("s,opnorm,weighted_value\n");
        for r in &self.rows {
            out.push_str(&format!("{:e},{:e},{:e}\n", r.s, r.opnorm, r.weighted_value));
        }
        out
    }
}

/// Sweep `s^α e^{sμ} ‖e^{−sA}π_part‖_{from→to}` over `s_grid ⊂ (0,∞)`
/// (or `e^{|s|μ}` weights on `s ≤ 0` for the minus part).
pub fn audit_smoothing(
    dec: &SpectralDecomposition,
    s_grid: &[f64],
    alpha: f64,
    mu: f64,
    part: Part,
    from: NormKind,
    to: NormKind,
) -> Result<SmoothingReport> {
    if s_grid.is_empty() {
        return Err(Error::Grid("empty audit grid".into()));
    }
    let row = |s: f64| -> Result<SmoothingRow> {
        let opnorm = operator_norm(dec, s, part, from, to)?;
        let weight = if part == Part::Minus && s <= 0.0 {
            (-s * mu).exp()
        } else {
            s.powf(alpha) * (s * mu).exp()
        };
        Ok(SmoothingRow {
            s,
            opnorm,
            weighted_value: weight * opnorm,
        })
    };
    let rows: Vec<SmoothingRow> = s_grid.par_iter().map(|s| row(*s)).collect::<Result<_>>()?;
    let constant = rows.iter().map(|r| r.weighted_value).fold(0.0, f64::max);
    let s_min = s_grid.iter().copied().fold(f64::INFINITY, |a, b| if b.abs() < a.abs() { b } else { a });
    let extra: Vec<SmoothingRow> = [0.5, 0.25, 0.125]
        .par_iter()
        .map(|f| row(s_min * f))
        .collect::<Result<_>>()?;
    let refined_constant = extra.iter().map(|r| r.weighted_value).fold(constant, f64::max);
    Ok(SmoothingReport {
        part,
        from,
        to,
        alpha,
        mu,
        constant,
        refined_constant,
        refinement_stable: refined_constant <= 1.1 * constant,
        rows,
    })
}

/// Logarithmic grid of `count` points on `[lo, hi]`.
pub fn log_grid(lo: f64, hi: f64, count: usize) -> Vec<f64> {
    assert!(lo > 0.0 && hi > lo && count >= 2);
    let (a, b) = (lo.ln(), hi.ln());
    (0..count)
        .map(|i| (a + (b - a) * i as f64 / (count - 1) as f64).exp())
        .collect()
}

/// Semigroup constant `ĉ ≥ 1` measured on `s_grid`: the larger of
/// `sup e^{sμ}‖e^{−sA}π₊‖_{W12→W12}` and `sup e^{|s|μ}‖e^{−sA⁻}π₋‖_{W12→W12}`.
pub fn measured_constant(dec: &SpectralDecomposition, s_grid: &[f64]) -> Result<f64> {
    let plus = audit_smoothing(dec, s_grid, 0.0, dec.mu, Part::Plus, NormKind::W12, NormKind::W12)?;
    let neg: Vec<f64> = s_grid.iter().map(|s| -s).collect();
    let minus = audit_smoothing(dec, &neg, 0.0, dec.mu, Part::Minus, NormKind::W12, NormKind::W12)?;
    Ok(plus.constant.max(minus.constant).max(1.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{find_critical_loop, Chart, NewtonOptions, TorusModel};
    use crate::spectral::{assemble, decompose, JacobiOperator};
    use approx::assert_relative_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;

    fn pendulum(modes: usize) -> SpectralDecomposition {
        let model = TorusModel::pendulum(1.0);
        let x = find_critical_loop(&model, &LoopField::constant(modes, &[3.0]), NewtonOptions::default()).unwrap();
        decompose(&assemble(&Chart::new(model, x)), 0.5, 1e-8).unwrap()
    }

    #[test]
    fn minus_group_on_constants() {
        let dec = pendulum(16);
        let one = LoopField::constant(16, &[1.0]);
        let fwd = apply(&dec, SemigroupQuery::new(1.0, Part::Minus).unwrap(), &one).unwrap();
        assert_relative_eq!(fwd.coords()[0], 1f64.exp(), epsilon = 1e-13);
        let back = apply(&dec, SemigroupQuery::new(-2.0, Part::Minus).unwrap(), &one).unwrap();
        assert_relative_eq!(back.coords()[0], (-2f64).exp(), epsilon = 1e-14);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let z = crate::model::random_w12_direction(1, 16, &mut rng);
        for part in [Part::Full, Part::Plus, Part::Minus] {
            let at0 = apply(&dec, SemigroupQuery { s: 0.0, part }, &z).unwrap();
            assert!(at0.sub(&dec.project(&z, part)).norm(NormKind::L2) < 1e-13);
        }
    }

    #[test]
    fn negative_time_rejected_on_plus() {
        assert!(matches!(SemigroupQuery::new(-1.0, Part::Plus), Err(Error::NegativeTimeOnPlus { .. })));
        assert!(matches!(SemigroupQuery::new(-1.0, Part::Full), Err(Error::NegativeTimeOnPlus { .. })));
        let dec = pendulum(4);
        let z = LoopField::constant(4, &[1.0]);
        assert!(apply(&dec, SemigroupQuery { s: -0.5, part: Part::Plus }, &z).is_err());
    }

    #[test]
    fn semigroup_law_and_splitting() {
        let dec = pendulum(16);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let z = crate::model::random_w12_direction(1, 16, &mut rng);
        let (s, t) = (0.013, 0.021);
        let q = |s| SemigroupQuery::new(s, Part::Full).unwrap();
        let once = apply(&dec, q(s + t), &z).unwrap();
        let twice = apply(&dec, q(s), &apply(&dec, q(t), &z).unwrap()).unwrap();
        assert!(once.sub(&twice).norm(NormKind::L2) < 1e-10);
        let split = apply(&dec, SemigroupQuery { s, part: Part::Plus }, &z)
            .unwrap()
            .add(&apply(&dec, SemigroupQuery { s, part: Part::Minus }, &z).unwrap());
        assert!(apply(&dec, q(s), &z).unwrap().sub(&split).norm(NormKind::L2) < 1e-14);
        for part in [Part::Plus, Part::Minus] {
            let a = apply(&dec, q(s), &dec.project(&z, part)).unwrap();
            let b = dec.project(&apply(&dec, q(s), &z).unwrap(), part);
            assert!(a.sub(&b).norm(NormKind::L2) < 1e-12);
        }
    }

    #[test]
    fn operator_norms() {
        let dec = pendulum(16);
        let s = 0.2;
        let n = operator_norm(&dec, s, Part::Plus, NormKind::L2, NormKind::L2).unwrap();
        assert_relative_eq!(n, (-s * (4.0 * PI * PI - 1.0)).exp(), max_relative = 1e-10);
        let m = operator_norm(&dec, 1.0, Part::Minus, NormKind::L2, NormKind::L2).unwrap();
        assert_relative_eq!(m, 1f64.exp(), max_relative = 1e-12);
        let m = operator_norm(&dec, 1.0, Part::Minus, NormKind::L1, NormKind::L2).unwrap();
        assert_relative_eq!(m, 1f64.exp(), max_relative = 1e-12);
        assert!(operator_norm(&dec, 1.0, Part::Plus, NormKind::Linf, NormKind::L2).is_err());
        // π₊ after π₋ vanishes
        let pm = matrix(&dec, 0.0, Part::Minus).unwrap();
        let pp = matrix(&dec, 0.3, Part::Plus).unwrap();
        assert!((pp * pm).amax() < 1e-14);
    }

    #[test]
    fn smoothing_audit_on_shifted_free_operator() {
        // diag((2πj)² + 1): hyperbolic with an empty minus part
        let op = JacobiOperator {
            dim: 1,
            modes: 16,
            matrix: DMatrix::from_fn(33, 33, |i, k| {
                if i == k {
                    (2.0 * PI * crate::loopspace::wavenumber(i) as f64).powi(2) + 1.0
                } else {
                    0.0
                }
            }),
        };
        let dec = decompose(&op, 0.5, 1e-8).unwrap();
        let grid = log_grid(1e-3, 10.0, 40);
        let rep = audit_smoothing(&dec, &grid, 0.75, dec.mu, Part::Plus, NormKind::L1, NormKind::W12).unwrap();
        assert!(rep.constant.is_finite());
        assert!(rep.refinement_stable, "{} vs {}", rep.constant, rep.refined_constant);
        let l2 = audit_smoothing(&dec, &grid, 0.0, dec.mu, Part::Plus, NormKind::L2, NormKind::L2).unwrap();
        assert!(l2.constant <= 1.0 + 1e-12);
    }

    #[test]
    fn minus_decay_audit_is_finite() {
        let dec = pendulum(8);
        let neg: Vec<f64> = log_grid(1e-2, 20.0, 30).iter().map(|s| -s).collect();
        let rep = audit_smoothing(&dec, &neg, 0.0, dec.mu, Part::Minus, NormKind::W12, NormKind::W12).unwrap();
        assert!(rep.constant <= 1.0 + 1e-12);
        assert!(measured_constant(&dec, &log_grid(1e-3, 10.0, 20)).unwrap() >= 1.0);
    }
}
