use gauss_quad::GaussLegendre;

use crate::error::{Error, Result};

/// Nodes and weights on an interval.
#[derive(Clone, Debug, PartialEq)]
pub struct Rule {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

impl Rule {
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn integrate(&self, f: impl Fn(f64) -> f64) -> f64 {
        self.nodes
            .iter()
            .zip(&self.weights)
            .map(|(x, w)| w * f(*x))
            .sum()
    }

    pub fn pairs(&self) -> impl Iterator<Item = (f64, f64)> + '_ {
        self.nodes.iter().copied().zip(self.weights.iter().copied())
    }
}

/// `n`-point Gauss–Legendre rule on `[a, b]`, nodes ascending.
pub fn gauss_legendre(n: usize, a: f64, b: f64) -> Result<Rule> {
    if n == 0 || !(a.is_finite() && b.is_finite()) {
        return Err(Error::InvalidParam(format!(
            "Gauss-Legendre rule needs n >= 1 and finite bounds (n = {n})"
        )));
    }
    let half = 0.5 * (b - a);
    let mid = 0.5 * (b + a);
    if n == 1 {
        return Ok(Rule {
            nodes: vec![mid],
            weights: vec![b - a],
        });
    }
    let gl = GaussLegendre::new(n.try_into().map_err(|_| {
        Error::InvalidParam(format!("Gauss-Legendre degree {n} too large"))
    })?)
    .map_err(|e| Error::InvalidParam(e.to_string()))?;
    let mut pairs: Vec<(f64, f64)> = gl.as_node_weight_pairs().to_vec();
    pairs.sort_by(|x, y| x.0.total_cmp(&y.0));
    Ok(Rule {
        nodes: pairs.iter().map(|p| mid + half * p.0).collect(),
        weights: pairs.iter().map(|p| half * p.1).collect(),
    })
}

/// Composite trapezoid rule with `n + 1` equispaced nodes on `[a, b]`.
pub fn trapezoid(n: usize, a: f64, b: f64) -> Result<Rule> {
    if n == 0 {
        return Err(Error::InvalidParam("trapezoid rule needs n >= 1".into()));
    }
    let h = (b - a) / n as f64;
    let nodes = (0..=n).map(|j| a + h * j as f64).collect();
    let weights = (0..=n)
        .map(|j| if j == 0 || j == n { 0.5 * h } else { h })
        .collect();
    Ok(Rule { nodes, weights })
}

/// Tensor-product Gauss–Legendre grid on `[0,1]²`.
pub fn unit_square(ns: usize, nk: usize) -> Result<(Rule, Rule)> {
    Ok((gauss_legendre(ns, 0.0, 1.0)?, gauss_legendre(nk, 0.0, 1.0)?))
}
