//! Finite metric measure spaces with a symmetric Markov generator, their
//! shortest-path geodesics and the pair-averaged curvature tables.

use std::collections::BinaryHeap;
use std::cmp::Ordering;
use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Maximum number of geodesics enumerated per pair.
pub const GEODESIC_CAP: usize = 10_000;
/// Largest space accepted by the dense routines.
pub const MAX_NODES: usize = 2000;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Edge {
    pub i: usize,
    pub j: usize,
    pub length: f64,
    pub weight: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum SpaceKind {
    Graph,
    Segment1d { a: f64, b: f64, h: f64, potential: Vec<f64> },
}

/// A finite metric measure space `(X, d, m)` with an `m`-symmetric generator `L`.
#[derive(Clone, Debug)]
pub struct Space {
    n: usize,
    metric: DMatrix<f64>,
    measure: Vec<f64>,
    generator: DMatrix<f64>,
    edges: Vec<Edge>,
    neighbors: Vec<Vec<(usize, f64)>>,
    rates: Vec<Vec<(usize, f64)>>,
    kind: SpaceKind,
}

#[derive(PartialEq)]
struct HeapItem(f64, usize);
impl Eq for HeapItem {}
impl PartialOrd for HeapItem {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for HeapItem {
    fn cmp(&self, other: &Self) -> Ordering {
        other.0.total_cmp(&self.0).then_with(|| other.1.cmp(&self.1))
    }
}

fn dijkstra(n: usize, neighbors: &[Vec<(usize, f64)>], src: usize) -> Vec<f64> {
    let mut dist = vec![f64::INFINITY; n];
    dist[src] = 0.0;
    let mut heap = BinaryHeap::new();
    heap.push(HeapItem(0.0, src));
    while let Some(HeapItem(d, u)) = heap.pop() {
        if d > dist[u] {
            continue;
        }
        for &(v, len) in &neighbors[u] {
            let nd = d + len;
            if nd < dist[v] {
                dist[v] = nd;
                heap.push(HeapItem(nd, v));
            }
        }
    }
    dist
}

impl Space {
    /// Weighted graph: `L_ij = w_ij / m_i`, metric = shortest path over edge lengths.
    pub fn graph(n: usize, edges: Vec<Edge>, measure: Vec<f64>) -> Result<Self> {
        Self::build(n, edges, measure, SpaceKind::Graph, None)
    }

    /// Uniform grid on `[a, b]` with potential samples `V`; zero-flux boundary.
    pub fn segment(a: f64, b: f64, potential: Vec<f64>) -> Result<Self> {
        let n = potential.len();
        if n < 2 || !(b > a) {
            return Err(Error::InvalidSpace("segment needs n >= 2 and a < b".into()));
        }
        if potential.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidSpace("non-finite potential".into()));
        }
        let h = (b - a) / (n - 1) as f64;
        let measure: Vec<f64> = potential.iter().map(|v| h * (-v).exp()).collect();
        let edges = (0..n - 1)
            .map(|i| Edge {
                i,
                j: i + 1,
                length: h,
                weight: (-(potential[i] + potential[i + 1]) / 2.0).exp() / h,
            })
            .collect();
        let coords: Vec<f64> = (0..n).map(|i| a + i as f64 * h).collect();
        let kind = SpaceKind::Segment1d { a, b, h, potential };
        Self::build(n, edges, measure, kind, Some(coords))
    }

    /// Segment with `n` nodes and potential given as a function of position.
    pub fn segment_fn(a: f64, b: f64, n: usize, v: impl Fn(f64) -> f64) -> Result<Self> {
        if n < 2 {
            return Err(Error::InvalidSpace("segment needs n >= 2".into()));
        }
        let h = (b - a) / (n - 1) as f64;
        Self::segment(a, b, (0..n).map(|i| v(a + i as f64 * h)).collect())
    }

    fn build(
        n: usize,
        edges: Vec<Edge>,
        measure: Vec<f64>,
        kind: SpaceKind,
        coords: Option<Vec<f64>>,
    ) -> Result<Self> {
        if n == 0 || n > MAX_NODES {
            return Err(Error::InvalidSpace(format!("node count {n} outside 1..={MAX_NODES}")));
        }
        if measure.len() != n {
            return Err(Error::InvalidSpace("measure length differs from node count".into()));
        }
        if measure.iter().any(|&m| !(m > 0.0) || !m.is_finite()) {
            return Err(Error::InvalidSpace("measure must be strictly positive".into()));
        }
        let mut generator = DMatrix::zeros(n, n);
        let mut neighbors = vec![Vec::new(); n];
        for e in &edges {
            if e.i >= n || e.j >= n || e.i == e.j {
                return Err(Error::InvalidSpace(format!("bad edge ({}, {})", e.i, e.j)));
            }
            if !(e.length > 0.0) || !e.length.is_finite() || !(e.weight >= 0.0) || !e.weight.is_finite() {
                return Err(Error::InvalidSpace(format!("bad edge data on ({}, {})", e.i, e.j)));
            }
            generator[(e.i, e.j)] += e.weight / measure[e.i];
            generator[(e.j, e.i)] += e.weight / measure[e.j];
            neighbors[e.i].push((e.j, e.length));
            neighbors[e.j].push((e.i, e.length));
        }
        for i in 0..n {
            let s: f64 = (0..n).filter(|&j| j != i).map(|j| generator[(i, j)]).sum();
            generator[(i, i)] = -s;
        }
        let mut metric = DMatrix::zeros(n, n);
        match coords {
            Some(x) => {
                for i in 0..n {
                    for j in 0..n {
                        metric[(i, j)] = (x[i] - x[j]).abs();
                    }
                }
            }
            None => {
                for i in 0..n {
                    let d = dijkstra(n, &neighbors, i);
                    for j in 0..n {
                        metric[(i, j)] = d[j];
                    }
                }
                for i in 0..n {
                    for j in 0..i {
                        let v = 0.5 * (metric[(i, j)] + metric[(j, i)]);
                        metric[(i, j)] = v;
                        metric[(j, i)] = v;
                    }
                }
            }
        }
        let rates = (0..n)
            .map(|i| (0..n).filter(|&j| j != i && generator[(i, j)] > 0.0).map(|j| (j, generator[(i, j)])).collect())
            .collect();
        let space = Space { n, metric, measure, generator, edges, neighbors, rates, kind };
        space.validate()?;
        Ok(space)
    }

    /// Checks metric axioms, zero row sums, nonnegative rates and `m`-symmetry.
    pub fn validate(&self) -> Result<()> {
        let n = self.n;
        let scale = self.generator.iter().fold(0.0f64, |a, v| a.max(v.abs())).max(f64::MIN_POSITIVE);
        for i in 0..n {
            let mut row = 0.0;
            for j in 0..n {
                let l = self.generator[(i, j)];
                if i != j && l < 0.0 {
                    return Err(Error::InvalidSpace(format!("negative rate at ({i}, {j})")));
                }
                row += l;
                let a = self.measure[i] * l;
                let b = self.measure[j] * self.generator[(j, i)];
                if (a - b).abs() > 1e-12 * scale * self.measure[i].max(self.measure[j]) {
                    return Err(Error::InvalidSpace(format!("generator not m-symmetric at ({i}, {j})")));
                }
            }
            if row.abs() > 1e-12 * scale * n as f64 {
                return Err(Error::InvalidSpace(format!("row {i} does not sum to zero")));
            }
        }
        let dmax = self.metric.iter().fold(0.0f64, |a, &v| if v.is_finite() { a.max(v) } else { a });
        let tol = 1e-12 * dmax.max(1.0);
        for i in 0..n {
            if self.metric[(i, i)] != 0.0 {
                return Err(Error::InvalidSpace("metric has nonzero diagonal".into()));
            }
            for j in 0..n {
                let dij = self.metric[(i, j)];
                if !(dij >= 0.0) || dij != self.metric[(j, i)] {
                    return Err(Error::InvalidSpace(format!("metric not symmetric/nonnegative at ({i}, {j})")));
                }
                if i != j && dij == 0.0 {
                    return Err(Error::InvalidSpace(format!("distinct nodes {i}, {j} at distance 0")));
                }
            }
        }
        if n <= 1000 && self.metric.iter().all(|v| v.is_finite()) {
            for k in 0..n {
                for i in 0..n {
                    let dik = self.metric[(i, k)];
                    for j in 0..n {
                        if self.metric[(i, j)] > dik + self.metric[(k, j)] + tol {
                            return Err(Error::InvalidSpace(format!("triangle inequality fails at ({i}, {k}, {j})")));
                        }
                    }
                }
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn metric(&self) -> &DMatrix<f64> {
        &self.metric
    }

    pub fn d(&self, x: usize, y: usize) -> f64 {
        self.metric[(x, y)]
    }

    pub fn measure(&self) -> &[f64] {
        &self.measure
    }

    pub fn total_mass(&self) -> f64 {
        self.measure.iter().sum()
    }

    pub fn generator(&self) -> &DMatrix<f64> {
        &self.generator
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    /// Graph neighbours with edge lengths.
    pub fn neighbors(&self, x: usize) -> &[(usize, f64)] {
        &self.neighbors[x]
    }

    /// Positive off-diagonal generator entries `(y, L_xy)` of row `x`.
    pub fn rates(&self, x: usize) -> &[(usize, f64)] {
        &self.rates[x]
    }

    pub fn kind(&self) -> &SpaceKind {
        &self.kind
    }

    pub fn is_segment(&self) -> bool {
        matches!(self.kind, SpaceKind::Segment1d { .. })
    }

    /// Grid spacing of a segment space.
    pub fn spacing(&self) -> Option<f64> {
        match self.kind {
            SpaceKind::Segment1d { h, .. } => Some(h),
            SpaceKind::Graph => None,
        }
    }

    /// Node positions of a segment space.
    pub fn coordinates(&self) -> Option<Vec<f64>> {
        match self.kind {
            SpaceKind::Segment1d { a, h, .. } => Some((0..self.n).map(|i| a + i as f64 * h).collect()),
            SpaceKind::Graph => None,
        }
    }

    /// `∫ f dm`.
    pub fn integrate(&self, f: &[f64]) -> f64 {
        f.iter().zip(&self.measure).map(|(a, b)| a * b).sum()
    }

    pub fn is_connected(&self) -> bool {
        self.metric.iter().all(|v| v.is_finite())
    }

    /// All shortest paths from `x` to `y` with constant-speed parameterization.
    pub fn shortest_path_geodesics(&self, x: usize, y: usize) -> Result<Vec<Geodesic>> {
        self.check_node(x)?;
        self.check_node(y)?;
        let total = self.metric[(x, y)];
        if !total.is_finite() {
            return Err(Error::NoGeodesic { x, y });
        }
        if x == y {
            return Ok(vec![Geodesic { nodes: vec![x], s: vec![0.0], length: 0.0 }]);
        }
        let tol = 1e-9 * total.max(1.0);
        let mut out = Vec::new();
        let mut stack: Vec<(usize, usize)> = vec![(x, 0)];
        let mut path = vec![x];
        // Depth-first traversal of the shortest-path DAG towards y.
        while let Some(&(u, _)) = stack.last() {
            let top = stack.len() - 1;
            if u == y {
                if out.len() == GEODESIC_CAP {
                    return Err(Error::GeodesicCap { x, y, cap: GEODESIC_CAP });
                }
                out.push(self.geodesic_from_nodes(&path));
                stack.pop();
                path.pop();
                continue;
            }
            let nb = &self.neighbors[u];
            let mut advanced = false;
            while stack[top].1 < nb.len() {
                let (v, len) = nb[stack[top].1];
                stack[top].1 += 1;
                let dxu = self.metric[(x, u)];
                if (dxu + len + self.metric[(v, y)] - total).abs() <= tol
                    && (dxu + len - self.metric[(x, v)]).abs() <= tol
                {
                    stack.push((v, 0));
                    path.push(v);
                    advanced = true;
                    break;
                }
            }
            if !advanced {
                stack.pop();
                path.pop();
            }
        }
        if out.is_empty() {
            return Err(Error::NoGeodesic { x, y });
        }
        Ok(out)
    }

    fn geodesic_from_nodes(&self, nodes: &[usize]) -> Geodesic {
        let mut cum = vec![0.0];
        for w in nodes.windows(2) {
            let len = self.neighbors[w[0]]
                .iter()
                .filter(|(v, _)| *v == w[1])
                .map(|(_, l)| *l)
                .fold(f64::INFINITY, f64::min);
            cum.push(cum.last().unwrap() + len);
        }
        let length = *cum.last().unwrap();
        let s = cum.iter().map(|c| c / length).collect();
        Geodesic { nodes: nodes.to_vec(), s, length }
    }

    pub(crate) fn check_node(&self, x: usize) -> Result<()> {
        if x >= self.n {
            return Err(Error::arg(format!("node {x} out of range (n = {})", self.n)));
        }
        Ok(())
    }

    pub(crate) fn check_fn(&self, f: &[f64], what: &str) -> Result<()> {
        if f.len() != self.n {
            return Err(Error::arg(format!("{what} has length {} but space has {} nodes", f.len(), self.n)));
        }
        Ok(())
    }

    /// Serializable description in the loader format.
    pub fn to_file(&self, curvature: Option<&[f64]>) -> SpaceFile {
        match &self.kind {
            SpaceKind::Graph => SpaceFile {
                kind: "graph".into(),
                nodes: self.n,
                edges: self.edges.clone(),
                measure: Some(self.measure.clone()),
                potential: None,
                curvature: curvature.map(<[f64]>::to_vec),
                a: None,
                b: None,
            },
            SpaceKind::Segment1d { a, b, potential, .. } => SpaceFile {
                kind: "segment1d".into(),
                nodes: self.n,
                edges: Vec::new(),
                measure: None,
                potential: Some(potential.clone()),
                curvature: curvature.map(<[f64]>::to_vec),
                a: Some(*a),
                b: Some(*b),
            },
        }
    }
}

/// On-disk JSON description of a space.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpaceFile {
    pub kind: String,
    pub nodes: usize,
    #[serde(default)]
    pub edges: Vec<Edge>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub measure: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub potential: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub curvature: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub a: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub b: Option<f64>,
}

impl SpaceFile {
    /// Builds and validates the space; returns the optional curvature samples.
    pub fn into_space(self) -> Result<(Space, Option<Vec<f64>>)> {
        let space = match self.kind.as_str() {
            "graph" => {
                let measure = self.measure.ok_or_else(|| Error::InvalidSpace("graph needs a measure".into()))?;
                if self.potential.is_some() {
                    return Err(Error::InvalidSpace("graph spaces take no potential".into()));
                }
                Space::graph(self.nodes, self.edges, measure)?
            }
            "segment1d" => {
                let potential = self.potential.ok_or_else(|| Error::InvalidSpace("segment1d needs a potential".into()))?;
                if potential.len() != self.nodes {
                    return Err(Error::InvalidSpace("potential length differs from node count".into()));
                }
                let a = self.a.unwrap_or(-3.0);
                let b = self.b.unwrap_or(3.0);
                let space = Space::segment(a, b, potential)?;
                if let Some(m) = &self.measure {
                    let ok = m.len() == space.len()
                        && m.iter().zip(space.measure()).all(|(u, v)| (u - v).abs() <= 1e-12 * v.abs().max(1.0));
                    if !ok {
                        return Err(Error::InvalidSpace("measure inconsistent with potential".into()));
                    }
                }
                space
            }
            other => return Err(Error::InvalidSpace(format!("unknown kind {other:?}"))),
        };
        if let Some(k) = &self.curvature {
            if k.len() != space.len() || k.iter().any(|v| !v.is_finite()) {
                return Err(Error::InvalidSpace("curvature must be finite with one value per node".into()));
            }
        }
        Ok((space, self.curvature))
    }
}

/// Reads and validates a JSON space description.
pub fn load_space(path: &Path) -> Result<(Space, Option<Vec<f64>>)> {
    let text = std::fs::read_to_string(path)?;
    let file: SpaceFile = serde_json::from_str(&text)?;
    file.into_space()
}

/// A shortest path with arc-length coordinates `s ∈ [0, 1]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Geodesic {
    pub nodes: Vec<usize>,
    pub s: Vec<f64>,
    pub length: f64,
}

impl Geodesic {
    /// Trapezoid approximation of `∫₀¹ g(γ_s) ds` from node samples.
    pub fn average(&self, g: &[f64]) -> f64 {
        if self.nodes.len() == 1 {
            return g[self.nodes[0]];
        }
        self.nodes
            .windows(2)
            .zip(self.s.windows(2))
            .map(|(n, s)| (s[1] - s[0]) * 0.5 * (g[n[0]] + g[n[1]]))
            .sum()
    }
}

/// Dense symmetric table indexed by node pairs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PairTable {
    n: usize,
    data: Vec<f64>,
}

impl PairTable {
    pub fn from_fn(n: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(n * n);
        for i in 0..n {
            for j in 0..n {
                data.push(f(i, j));
            }
        }
        PairTable { n, data }
    }

    pub fn constant(n: usize, value: f64) -> Self {
        PairTable { n, data: vec![value; n * n] }
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.n + j]
    }

    pub fn values(&self) -> &[f64] {
        &self.data
    }

    pub fn min(&self) -> f64 {
        self.data.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.data.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        PairTable { n: self.n, data: self.data.iter().map(|&v| f(v)).collect() }
    }
}

/// Node curvature `k` with the cached geodesic averages `k̂` (min) and `k̄` (max).
#[derive(Clone, Debug)]
pub struct CurvatureField {
    pub k: Vec<f64>,
    k_hat: PairTable,
    k_bar: PairTable,
}

impl CurvatureField {
    pub fn new(space: &Space, k: Vec<f64>) -> Result<Self> {
        space.check_fn(&k, "curvature")?;
        if k.iter().any(|v| !v.is_finite()) {
            return Err(Error::arg("curvature must be finite"));
        }
        let (k_hat, k_bar) = geodesic_extremes(space, &k)?;
        Ok(CurvatureField { k, k_hat, k_bar })
    }

    pub fn constant(space: &Space, value: f64) -> Result<Self> {
        Self::new(space, vec![value; space.len()])
    }

    /// Global lower bound `K = min k`.
    pub fn lower_bound(&self) -> f64 {
        self.k.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn k_hat(&self, x: usize, y: usize) -> f64 {
        self.k_hat.get(x, y)
    }

    pub fn k_bar(&self, x: usize, y: usize) -> f64 {
        self.k_bar.get(x, y)
    }

    pub fn k_hat_table(&self) -> &PairTable {
        &self.k_hat
    }

    pub fn k_bar_table(&self) -> &PairTable {
        &self.k_bar
    }

    /// Field with `k` shifted by `c`.
    pub fn shifted(&self, c: f64) -> Self {
        CurvatureField {
            k: self.k.iter().map(|v| v + c).collect(),
            k_hat: self.k_hat.map(|v| v + c),
            k_bar: self.k_bar.map(|v| v + c),
        }
    }

    /// Lipschitz approximant `k̂ₙ(x,y) = min over (x',y') of min(k̂(x',y'), n) + n·|(x,y)-(x',y')|`.
    pub fn k_hat_approx(&self, space: &Space, n: u32) -> Result<PairTable> {
        if n == 0 {
            return Err(Error::arg("approximation index must be >= 1"));
        }
        let nn = space.len();
        let level = n as f64;
        let d = space.metric();
        let capped: Vec<f64> = self.k_hat.values().iter().map(|v| v.min(level)).collect();
        Ok(PairTable::from_fn(nn, |x, y| {
            let mut best = f64::INFINITY;
            for xp in 0..nn {
                let dx = d[(x, xp)];
                let dx2 = dx * dx;
                for yp in 0..nn {
                    let dy = d[(y, yp)];
                    let v = capped[xp * nn + yp] + level * (dx2 + dy * dy).sqrt();
                    if v < best {
                        best = v;
                    }
                }
            }
            best
        }))
    }

    /// Endpoint-relaxed variant: minimum of `k̂` over closed `eps`-balls around both endpoints.
    pub fn k_hat_eps(&self, space: &Space, eps: f64) -> PairTable {
        let n = space.len();
        let d = space.metric();
        PairTable::from_fn(n, |x, y| {
            let mut best = f64::INFINITY;
            for xp in (0..n).filter(|&xp| d[(x, xp)] <= eps) {
                for yp in (0..n).filter(|&yp| d[(y, yp)] <= eps) {
                    best = best.min(self.k_hat.get(xp, yp));
                }
            }
            best
        })
    }
}

fn geodesic_extremes(space: &Space, k: &[f64]) -> Result<(PairTable, PairTable)> {
    let n = space.len();
    // Averages stay in the range of k; clamping removes rounding drift.
    let kmin = k.iter().copied().fold(f64::INFINITY, f64::min);
    let kmax = k.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if let SpaceKind::Segment1d { h, .. } = space.kind() {
        // Unique geodesics: prefix sums of the trapezoid integral.
        let mut prefix = vec![0.0; n];
        for i in 1..n {
            prefix[i] = prefix[i - 1] + h * 0.5 * (k[i - 1] + k[i]);
        }
        let t = PairTable::from_fn(n, |x, y| {
            if x == y {
                k[x]
            } else {
                let (a, b) = if x < y { (x, y) } else { (y, x) };
                ((prefix[b] - prefix[a]) / ((b - a) as f64 * h)).clamp(kmin, kmax)
            }
        });
        return Ok((t.clone(), t));
    }
    let mut lo = vec![0.0; n * n];
    let mut hi = vec![0.0; n * n];
    for x in 0..n {
        for y in x..n {
            let mut mn = f64::INFINITY;
            let mut mx = f64::NEG_INFINITY;
            for g in space.shortest_path_geodesics(x, y)? {
                let v = g.average(k).clamp(kmin, kmax);
                mn = mn.min(v);
                mx = mx.max(v);
            }
            lo[x * n + y] = mn;
            lo[y * n + x] = mn;
            hi[x * n + y] = mx;
            hi[y * n + x] = mx;
        }
    }
    Ok((PairTable { n, data: lo }, PairTable { n, data: hi }))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit_graph(n: usize, pairs: &[(usize, usize)]) -> Space {
        let edges = pairs.iter().map(|&(i, j)| Edge { i, j, length: 1.0, weight: 1.0 }).collect();
        Space::graph(n, edges, vec![1.0; n]).unwrap()
    }

    #[test]
    fn path_graph_geodesic() {
        let s = unit_graph(3, &[(0, 1), (1, 2)]);
        let g = s.shortest_path_geodesics(0, 2).unwrap();
        assert_eq!(g.len(), 1);
        assert_eq!(g[0].nodes, vec![0, 1, 2]);
        assert_eq!(g[0].length, 2.0);
        assert_eq!(g[0].s, vec![0.0, 0.5, 1.0]);
    }

    #[test]
    fn degenerate_geodesic() {
        let s = unit_graph(3, &[(0, 1), (1, 2)]);
        let g = s.shortest_path_geodesics(1, 1).unwrap();
        assert_eq!(g.len(), 1);
        assert_eq!(g[0].length, 0.0);
    }

    #[test]
    fn four_cycle_has_two_geodesics() {
        let s = unit_graph(4, &[(0, 1), (1, 2), (2, 3), (3, 0)]);
        let mut g = s.shortest_path_geodesics(0, 2).unwrap();
        g.sort_by(|a, b| a.nodes.cmp(&b.nodes));
        assert_eq!(g.len(), 2);
        assert_eq!(g[0].nodes, vec![0, 1, 2]);
        assert_eq!(g[1].nodes, vec![0, 3, 2]);
        assert!(g.iter().all(|g| g.length == 2.0));
    }

    #[test]
    fn disconnected_pair_errors() {
        let s = unit_graph(3, &[(0, 1)]);
        assert!(matches!(s.shortest_path_geodesics(0, 2), Err(Error::NoGeodesic { .. })));
        assert!(CurvatureField::constant(&s, 1.0).is_err());
    }

    #[test]
    fn geodesic_cap_is_an_error() {
        // A chain of 14 diamonds has 2^14 > 10^4 shortest paths between its ends.
        let mut pairs = Vec::new();
        let mut next = 1;
        let mut hub = 0;
        for _ in 0..14 {
            let (u, v, w) = (next, next + 1, next + 2);
            pairs.extend([(hub, u), (hub, v), (u, w), (v, w)]);
            hub = w;
            next += 3;
        }
        let s = unit_graph(next, &pairs);
        assert!(matches!(s.shortest_path_geodesics(0, hub), Err(Error::GeodesicCap { .. })));
    }

    #[test]
    fn constant_curvature_tables() {
        let s = unit_graph(4, &[(0, 1), (1, 2), (2, 3), (3, 0)]);
        let f = CurvatureField::constant(&s, 0.7).unwrap();
        for x in 0..4 {
            for y in 0..4 {
                assert!((f.k_hat(x, y) - 0.7).abs() < 1e-15);
                assert!((f.k_bar(x, y) - 0.7).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn four_cycle_hat_and_bar() {
        let s = unit_graph(4, &[(0, 1), (1, 2), (2, 3), (3, 0)]);
        let f = CurvatureField::new(&s, vec![0.0, 1.0, 0.0, 3.0]).unwrap();
        // Independent oracle: trapezoid by hand on 0-1-2 and 0-3-2.
        let via1 = 0.5 * (0.5 * (0.0 + 1.0)) + 0.5 * (0.5 * (1.0 + 0.0));
        let via3 = 0.5 * (0.5 * (0.0 + 3.0)) + 0.5 * (0.5 * (3.0 + 0.0));
        assert!((f.k_hat(0, 2) - via1).abs() < 1e-15);
        assert!((f.k_bar(0, 2) - via3).abs() < 1e-15);
        assert!((f.k_hat(2, 0) - via1).abs() < 1e-15);
    }

    #[test]
    fn diagonal_is_k() {
        let s = unit_graph(3, &[(0, 1), (1, 2)]);
        let f = CurvatureField::new(&s, vec![0.3, -1.0, 2.0]).unwrap();
        for x in 0..3 {
            assert_eq!(f.k_hat(x, x), f.k[x]);
            assert_eq!(f.k_bar(x, x), f.k[x]);
        }
    }

    #[test]
    fn segment_linear_k_average() {
        let s = Space::segment_fn(0.0, 1.0, 11, |_| 0.0).unwrap();
        let k = s.coordinates().unwrap();
        let f = CurvatureField::new(&s, k).unwrap();
        assert!((f.k_hat(0, 10) - 0.5).abs() < 1e-14);
        assert!((f.k_hat(2, 6) - 0.4).abs() < 1e-14);
    }

    #[test]
    fn segment_generator_rates() {
        let v = |x: f64| x * x / 2.0;
        let s = Space::segment_fn(-1.0, 1.0, 5, v).unwrap();
        let h = 0.5;
        let x = s.coordinates().unwrap();
        let l = s.generator();
        for i in 0..4 {
            let up = (-(v(x[i + 1]) - v(x[i])) / 2.0).exp() / (h * h);
            assert!((l[(i, i + 1)] - up).abs() < 1e-12);
            let down = (-(v(x[i]) - v(x[i + 1])) / 2.0).exp() / (h * h);
            assert!((l[(i + 1, i)] - down).abs() < 1e-12);
        }
        assert_eq!(s.d(0, 4), 2.0);
    }

    #[test]
    fn approx_constant_case() {
        let s = unit_graph(3, &[(0, 1), (1, 2)]);
        let f = CurvatureField::constant(&s, 1.5).unwrap();
        let t = f.k_hat_approx(&s, 2).unwrap();
        assert!(t.values().iter().all(|v| (v - 1.5).abs() < 1e-15));
    }

    #[test]
    fn approx_two_point_brute_force() {
        let s = Space::graph(2, vec![Edge { i: 0, j: 1, length: 1.0, weight: 1.0 }], vec![1.0, 1.0]).unwrap();
        let f = CurvatureField::new(&s, vec![0.0, 10.0]).unwrap();
        let t = f.k_hat_approx(&s, 5).unwrap();
        // Oracle: the four candidates for the (1,1) entry.
        let hat = |a: usize, b: usize| f.k_hat(a, b).min(5.0);
        let cands = [
            hat(1, 1),
            hat(0, 1) + 5.0,
            hat(1, 0) + 5.0,
            hat(0, 0) + 5.0 * 2f64.sqrt(),
        ];
        let want = cands.iter().copied().fold(f64::INFINITY, f64::min);
        assert!((t.get(1, 1) - want).abs() < 1e-14);
        assert!(t.get(1, 1) < 10.0);
    }

    #[test]
    fn approx_reaches_fixed_point() {
        let s = unit_graph(3, &[(0, 1), (1, 2)]);
        let f = CurvatureField::new(&s, vec![0.0, 1.0, 0.5]).unwrap();
        let t = f.k_hat_approx(&s, 50).unwrap();
        for x in 0..3 {
            for y in 0..3 {
                assert!((t.get(x, y) - f.k_hat(x, y)).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn eps_variant_at_zero_is_identity() {
        let s = unit_graph(4, &[(0, 1), (1, 2), (2, 3), (3, 0)]);
        let f = CurvatureField::new(&s, vec![0.0, 1.0, 0.0, 3.0]).unwrap();
        assert_eq!(&f.k_hat_eps(&s, 0.0), f.k_hat_table());
        let relaxed = f.k_hat_eps(&s, 1.0);
        assert!(relaxed.values().iter().zip(f.k_hat_table().values()).all(|(a, b)| a <= b));
    }

    #[test]
    fn loader_rejects_asymmetric_and_bad_inputs() {
        let bad = r#"{"kind":"graph","nodes":2,"edges":[{"i":0,"j":1,"length":1.0,"weight":-1.0}],"measure":[1,1]}"#;
        assert!(serde_json::from_str::<SpaceFile>(bad).unwrap().into_space().is_err());
        let bad = r#"{"kind":"graph","nodes":2,"edges":[{"i":0,"j":1,"length":1.0,"weight":1.0}],"measure":[1,0]}"#;
        assert!(serde_json::from_str::<SpaceFile>(bad).unwrap().into_space().is_err());
        let bad = r#"{"kind":"torus","nodes":2}"#;
        assert!(serde_json::from_str::<SpaceFile>(bad).unwrap().into_space().is_err());
        let ok = r#"{"kind":"graph","nodes":2,"edges":[{"i":0,"j":1,"length":1.0,"weight":1.0}],"measure":[1,2],"curvature":[0.5,0.5]}"#;
        let (s, k) = serde_json::from_str::<SpaceFile>(ok).unwrap().into_space().unwrap();
        assert_eq!(s.len(), 2);
        assert_eq!(k.unwrap(), vec![0.5, 0.5]);
    }

    #[test]
    fn round_trip_segment_file() {
        let s = Space::segment_fn(-1.0, 1.0, 9, |x| x * x).unwrap();
        let file = s.to_file(Some(&[1.0; 9]));
        let text = serde_json::to_string(&file).unwrap();
        let (s2, _) = serde_json::from_str::<SpaceFile>(&text).unwrap().into_space().unwrap();
        assert_eq!(s2.measure(), s.measure());
    }
}
