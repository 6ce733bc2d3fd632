//! Composite Gauss–Legendre quadrature on [0, 1].

use serde::{Deserialize, Serialize};

use crate::error::{Result, VcmError};

/// Panel layout of a composite Gauss–Legendre rule.
///
/// The panel count is always a power of two so that panel edges fall on
/// dyadic points; piecewise-constant wavelet products are then integrated
/// exactly.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct QuadratureSpec {
    pub panels: usize,
    pub order: usize,
}

impl Default for QuadratureSpec {
    fn default() -> Self {
        Self {
            panels: 64,
            order: 16,
        }
    }
}

impl QuadratureSpec {
    /// Rule with at least `nodes` nodes, 16 per panel.
    pub fn with_nodes(nodes: usize) -> Self {
        let order = 16;
        let panels = nodes.div_ceil(order).max(1).next_power_of_two();
        Self { panels, order }
    }

    pub fn node_count(&self) -> usize {
        self.panels * self.order
    }

    /// Same rule refined so that panel edges cover the dyadic level needed by `l` functions.
    pub fn aligned_to(&self, l: usize) -> Self {
        Self {
            panels: self.panels.max(l.next_power_of_two()),
            order: self.order,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Quadrature {
    spec: QuadratureSpec,
    nodes: Vec<f64>,
    weights: Vec<f64>,
}

impl Quadrature {
    pub fn new(spec: QuadratureSpec) -> Result<Self> {
        if spec.order == 0 || spec.panels == 0 {
            return Err(VcmError::Domain(
                "quadrature needs at least one panel and one node".into(),
            ));
        }
        if !spec.panels.is_power_of_two() {
            return Err(VcmError::Domain(format!(
                "quadrature panel count {} is not a power of two",
                spec.panels
            )));
        }
        let (x, w) = gauss_legendre(spec.order)?;
        let h = 1.0 / spec.panels as f64;
        let mut nodes = Vec::with_capacity(spec.node_count());
        let mut weights = Vec::with_capacity(spec.node_count());
        for p in 0..spec.panels {
            let a = p as f64 * h;
            for (xi, wi) in x.iter().zip(&w) {
                nodes.push(a + 0.5 * h * (xi + 1.0));
                weights.push(0.5 * h * wi);
            }
        }
        Ok(Self {
            spec,
            nodes,
            weights,
        })
    }

    pub fn spec(&self) -> QuadratureSpec {
        self.spec
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// ∫₀¹ f(t) dt.
    pub fn integrate(&self, f: impl Fn(f64) -> f64) -> f64 {
        self.nodes
            .iter()
            .zip(&self.weights)
            .map(|(&t, &w)| w * f(t))
            .sum()
    }
}

/// Gauss–Legendre nodes and weights on [-1, 1] by Newton iteration on P_n.
pub fn gauss_legendre(n: usize) -> Result<(Vec<f64>, Vec<f64>)> {
    let mut x = vec![0.0; n];
    let mut w = vec![0.0; n];
    let m = n.div_ceil(2);
    for i in 0..m {
        let mut z = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut converged = false;
        let mut dp = 0.0;
        for _ in 0..100 {
            let (p, d) = legendre_with_derivative(n, z);
            dp = d;
            let dz = p / d;
            z -= dz;
            if dz.abs() < 1e-15 {
                converged = true;
                break;
            }
        }
        if !converged {
            return Err(VcmError::Numerical(format!(
                "Gauss-Legendre root {i} of order {n} did not converge"
            )));
        }
        let (_, d) = legendre_with_derivative(n, z);
        dp = if d.is_finite() { d } else { dp };
        let wi = 2.0 / ((1.0 - z * z) * dp * dp);
        x[i] = -z;
        x[n - 1 - i] = z;
        w[i] = wi;
        w[n - 1 - i] = wi;
    }
    Ok((x, w))
}

fn legendre_with_derivative(n: usize, z: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = z;
    if n == 0 {
        return (1.0, 0.0);
    }
    for k in 2..=n {
        let kf = k as f64;
        let p2 = ((2.0 * kf - 1.0) * z * p1 - (kf - 1.0) * p0) / kf;
        p0 = p1;
        p1 = p2;
    }
    let d = n as f64 * (z * p1 - p0) / (z * z - 1.0);
    (p1, d)
}
