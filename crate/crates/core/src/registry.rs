//! Built-in reference instances.

use serde::Serialize;

use crate::space::{CurvatureField, Edge, Space, SpaceFile};
use crate::{Error, Result};

/// Nodes of the reference segment discretization (`h = 0.05` on `[-3, 3]`).
pub const REFERENCE_NODES: usize = 121;

/// A space with its curvature field and a default pair of probability vectors.
#[derive(Clone, Debug)]
pub struct Instance {
    pub name: String,
    pub description: String,
    pub space: Space,
    pub field: CurvatureField,
    pub mu: Vec<f64>,
    pub nu: Vec<f64>,
}

#[derive(Clone, Debug, Serialize)]
pub struct InstanceDump {
    pub name: String,
    pub description: String,
    pub space: SpaceFile,
    pub mu: Vec<f64>,
    pub nu: Vec<f64>,
}

impl Instance {
    pub fn dump(&self) -> InstanceDump {
        InstanceDump {
            name: self.name.clone(),
            description: self.description.clone(),
            space: self.space.to_file(Some(&self.field.k)),
            mu: self.mu.clone(),
            nu: self.nu.clone(),
        }
    }
}

pub const NAMES: [&str; 6] = ["two-state", "three-chain", "four-cycle", "ou-constK", "ou-variable", "gauss-pair-1d"];

/// Names and one-line descriptions of the built-in instances.
pub fn list() -> Vec<(&'static str, &'static str)> {
    vec![
        ("two-state", "two nodes, unit edge and masses, k = 0.5"),
        ("three-chain", "path 0-1-2, unit edges and masses, k = (0, 1, 0)"),
        ("four-cycle", "4-cycle, unit edges and masses, k = (0, 1, 0, 3); two geodesics between opposite corners"),
        ("ou-constK", "segment [-3, 3], V = x^2/2, k = 1"),
        ("ou-variable", "segment [-3, 3], V = x^2/2 + x^4/40, k = V'' = 1 + 0.3 x^2"),
        ("gauss-pair-1d", "ou-constK with discretized Gaussians N(-1, 0.25) and N(1.2, 0.49)"),
    ]
}

fn dirac(n: usize, x: usize) -> Vec<f64> {
    let mut v = vec![0.0; n];
    v[x] = 1.0;
    v
}

fn unit_graph(n: usize, pairs: &[(usize, usize)]) -> Result<Space> {
    let edges = pairs.iter().map(|&(i, j)| Edge { i, j, length: 1.0, weight: 1.0 }).collect();
    Space::graph(n, edges, vec![1.0; n])
}

/// Discretized normal density as a probability vector over the grid.
pub fn gaussian_masses(space: &Space, mean: f64, sd: f64) -> Result<Vec<f64>> {
    let x = space.coordinates().ok_or(Error::NotSegment("gaussian_masses"))?;
    let w: Vec<f64> = x.iter().map(|v| (-(v - mean).powi(2) / (2.0 * sd * sd)).exp()).collect();
    let total: f64 = w.iter().sum();
    Ok(w.into_iter().map(|v| v / total).collect())
}

/// Builds a registry instance; segment instances accept a node count override.
pub fn build(name: &str, nodes: Option<usize>) -> Result<Instance> {
    let seg_nodes = nodes.unwrap_or(REFERENCE_NODES);
    let (space, k, mu, nu) = match name {
        "two-state" => {
            let s = unit_graph(2, &[(0, 1)])?;
            (s, vec![0.5; 2], dirac(2, 0), dirac(2, 1))
        }
        "three-chain" => {
            let s = unit_graph(3, &[(0, 1), (1, 2)])?;
            (s, vec![0.0, 1.0, 0.0], dirac(3, 0), dirac(3, 2))
        }
        "four-cycle" => {
            let s = unit_graph(4, &[(0, 1), (1, 2), (2, 3), (3, 0)])?;
            (s, vec![0.0, 1.0, 0.0, 3.0], dirac(4, 0), dirac(4, 2))
        }
        "ou-constK" | "gauss-pair-1d" => {
            let s = Space::segment_fn(-3.0, 3.0, seg_nodes, |x| x * x / 2.0)?;
            let n = s.len();
            let (mu, nu) = if name == "gauss-pair-1d" {
                (gaussian_masses(&s, -1.0, 0.5)?, gaussian_masses(&s, 1.2, 0.7)?)
            } else {
                (dirac(n, n / 4), dirac(n, 3 * n / 4))
            };
            (s, vec![1.0; n], mu, nu)
        }
        "ou-variable" => {
            let s = Space::segment_fn(-3.0, 3.0, seg_nodes, |x| x * x / 2.0 + x.powi(4) / 40.0)?;
            let x = s.coordinates().unwrap();
            let k = x.iter().map(|v| 1.0 + 0.3 * v * v).collect();
            let n = s.len();
            (s, k, dirac(n, n / 4), dirac(n, 3 * n / 4))
        }
        other => return Err(Error::Config(format!("unknown registry instance {other:?}"))),
    };
    let field = CurvatureField::new(&space, k)?;
    let description = list().into_iter().find(|(n, _)| *n == name).map(|(_, d)| d.to_string()).unwrap_or_default();
    Ok(Instance { name: name.to_string(), description, space, field, mu, nu })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn all_instances_load_and_validate() {
        assert!(list().len() >= 6);
        assert!(list().iter().any(|(n, _)| *n == "ou-constK"));
        for name in NAMES {
            let inst = build(name, None).unwrap();
            inst.space.validate().unwrap();
            assert!((inst.mu.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            assert!((inst.nu.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
        assert!(build("nope", None).is_err());
    }

    #[test]
    fn ou_variable_curvature_is_second_derivative() {
        let inst = build("ou-variable", Some(61)).unwrap();
        assert_eq!(inst.space.spacing(), Some(0.1));
        assert!(inst.field.lower_bound() >= 1.0 - 1e-12);
    }
}
