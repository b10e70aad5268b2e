//! Exact per-eigenmode Duhamel quadrature for piecewise-linear forcing.
//!
//! On a step of length `h` a coordinate with eigenvalue `λ` is propagated by
//! `e^{−hλ}`; the forcing, interpolated linearly between its endpoint values,
//! is integrated against the exponential kernel in closed form through
//! `φ₁(z) = (e^z − 1)/z` and `φ₂(z) = (e^z − 1 − z)/z²`.
//!
//! Plus coordinates are swept forward from an initial value, minus coordinates
//! backward from a terminal value through the backward group. This is the
//! discrete form of the integral equations used by every solver in the crate.

use nalgebra::DVector;

use crate::spectral::SpectralDecomposition;

pub fn phi1(z: f64) -> f64 {
    if z.abs() < 1e-2 {
        // Σ z^k/(k+1)!
        1.0 + z / 2.0 * (1.0 + z / 3.0 * (1.0 + z / 4.0 * (1.0 + z / 5.0 * (1.0 + z / 6.0))))
    } else {
        z.exp_m1() / z
    }
}

pub fn phi2(z: f64) -> f64 {
    if z.abs() < 1e-2 {
        // Σ z^k/(k+2)!
        0.5 * (1.0 + z / 3.0 * (1.0 + z / 4.0 * (1.0 + z / 5.0 * (1.0 + z / 6.0 * (1.0 + z / 7.0)))))
    } else {
        (z.exp_m1() - z) / (z * z)
    }
}

/// `(decay, w_left, w_right)` of one step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepWeights {
    pub decay: f64,
    pub left: f64,
    pub right: f64,
}

/// Forward step `y(s+h) = decay·y(s) + left·f(s) + right·f(s+h)` for `y' = −λy + f`.
pub fn forward_weights(lambda: f64, h: f64) -> StepWeights {
    let z = -h * lambda;
    let p1 = phi1(z);
    let p2 = phi2(z);
    StepWeights {
        decay: z.exp(),
        left: h * (p1 - p2),
        right: h * p2,
    }
}

/// Backward step `y(s) = decay·y(s+h) − (left·f(s) + right·f(s+h))` for
/// `y' = −λy + f`, well conditioned when `λ < 0`.
pub fn backward_weights(lambda: f64, h: f64) -> StepWeights {
    let x = h * lambda;
    let p1 = phi1(x);
    let p2 = phi2(x);
    StepWeights {
        decay: x.exp(),
        left: h * p2,
        right: h * (p1 - p2),
    }
}

/// Step weights for every step of a mesh and every eigen-coordinate: forward
/// for `X⁺`, backward for `X⁻`.
#[derive(Debug, Clone)]
pub struct MeshKernels {
    pub nodes: Vec<f64>,
    pub morse_index: usize,
    decay: Vec<DVector<f64>>,
    left: Vec<DVector<f64>>,
    right: Vec<DVector<f64>>,
}

impl MeshKernels {
    pub fn new(dec: &SpectralDecomposition, nodes: &[f64]) -> Self {
        let d = dec.size();
        let k = dec.morse_index;
        let steps = nodes.len().saturating_sub(1);
        let mut decay = Vec::with_capacity(steps);
        let mut left = Vec::with_capacity(steps);
        let mut right = Vec::with_capacity(steps);
        for w in nodes.windows(2) {
            let h = w[1] - w[0];
            let mut dv = DVector::zeros(d);
            let mut lv = DVector::zeros(d);
            let mut rv = DVector::zeros(d);
            for i in 0..d {
                let sw = if i < k {
                    backward_weights(dec.eigenvalues[i], h)
                } else {
                    forward_weights(dec.eigenvalues[i], h)
                };
                dv[i] = sw.decay;
                lv[i] = sw.left;
                rv[i] = sw.right;
            }
            decay.push(dv);
            left.push(lv);
            right.push(rv);
        }
        Self {
            nodes: nodes.to_vec(),
            morse_index: k,
            decay,
            left,
            right,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Evaluate the split integral equation
    /// `y(s) = e^{−(s−s₀)A}π₊y₀ + ∫_{s₀}^s e^{−(s−σ)A}π₊f dσ
    ///        + e^{−(s−s_M)A}π₋y_M − ∫_s^{s_M} e^{−(s−σ)A}π₋f dσ`
    /// on the mesh, with `forcing` given at the nodes in eigen-coordinates.
    pub fn sweep(&self, forcing: &[DVector<f64>], plus_start: &DVector<f64>, minus_end: &DVector<f64>) -> Vec<DVector<f64>> {
        let m = self.nodes.len();
        assert_eq!(forcing.len(), m, "forcing must be sampled at every node");
        let d = plus_start.len();
        let k = self.morse_index;
        let mut out = vec![DVector::zeros(d); m];
        for i in k..d {
            out[0][i] = plus_start[i];
        }
        for j in 0..m - 1 {
            let (dec, l, r) = (&self.decay[j], &self.left[j], &self.right[j]);
            for i in k..d {
                out[j + 1][i] = dec[i] * out[j][i] + l[i] * forcing[j][i] + r[i] * forcing[j + 1][i];
            }
        }
        for i in 0..k {
            out[m - 1][i] = minus_end[i];
        }
        for j in (0..m - 1).rev() {
            let (dec, l, r) = (&self.decay[j], &self.left[j], &self.right[j]);
            for i in 0..k {
                out[j][i] = dec[i] * out[j + 1][i] - (l[i] * forcing[j][i] + r[i] * forcing[j + 1][i]);
            }
        }
        out
    }
}
