//! Multi-component D2D communication graphs.
//!
//! Devices `0..n` are laid out component by component: component `c` owns a
//! contiguous index range, and every edge stays inside its component. From a
//! [`Topology`] we derive the Metropolis–Hastings [`MixingMatrix`], the
//! [`ComponentProjector`] `Π_C` and the spectral [`MixingParam`] `p`.

use std::collections::{HashSet, VecDeque};
use std::fmt;

use ndarray::{Array1, Array2};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::linalg::{gram, psd_top_eigenvalue, EIGEN_MAX_ITER, EIGEN_TOL};
use crate::rng::{stream, Domain};

const REGULAR_RESTARTS: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum TopologyKind {
    Ring,
    Grid2D,
    Complete,
    RandomRegular { degree: usize },
}

impl TopologyKind {
    pub fn supports_resampling(&self) -> bool {
        matches!(self, TopologyKind::RandomRegular { .. })
    }
}

impl fmt::Display for TopologyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TopologyKind::Ring => write!(f, "ring"),
            TopologyKind::Grid2D => write!(f, "grid"),
            TopologyKind::Complete => write!(f, "complete"),
            TopologyKind::RandomRegular { degree } => write!(f, "regular{degree}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Topology {
    n: usize,
    kind: TopologyKind,
    components: Vec<Vec<usize>>,
    /// Per component, sorted `(i, j)` pairs with `i < j`, global indices.
    edges: Vec<Vec<(usize, usize)>>,
    component_of: Vec<usize>,
}

impl Topology {
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn kind(&self) -> TopologyKind {
        self.kind
    }

    pub fn components(&self) -> &[Vec<usize>] {
        &self.components
    }

    pub fn num_components(&self) -> usize {
        self.components.len()
    }

    pub fn component_sizes(&self) -> Vec<usize> {
        self.components.iter().map(Vec::len).collect()
    }

    pub fn component_of(&self, device: usize) -> usize {
        self.component_of[device]
    }

    pub fn edges(&self, component: usize) -> &[(usize, usize)] {
        &self.edges[component]
    }

    pub fn all_edges(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.edges.iter().flatten().copied()
    }

    pub fn degrees(&self) -> Vec<usize> {
        let mut deg = vec![0; self.n];
        for (i, j) in self.all_edges() {
            deg[i] += 1;
            deg[j] += 1;
        }
        deg
    }

    /// Checks the partition, locality and connectivity invariants.
    pub fn check_invariants(&self) -> Result<()> {
        let mut seen = vec![false; self.n];
        for comp in &self.components {
            for &i in comp {
                if i >= self.n || seen[i] {
                    return Err(Error::InvalidConfig(format!(
                        "device {i} is out of range or in two components"
                    )));
                }
                seen[i] = true;
            }
        }
        if seen.iter().any(|s| !s) {
            return Err(Error::InvalidConfig("components do not cover every device".into()));
        }
        for (c, comp) in self.components.iter().enumerate() {
            for &(i, j) in &self.edges[c] {
                if self.component_of[i] != c || self.component_of[j] != c {
                    return Err(Error::InvalidConfig(format!("edge ({i}, {j}) leaves component {c}")));
                }
            }
            let offset = comp[0];
            let local: Vec<(usize, usize)> = self.edges[c].iter().map(|&(i, j)| (i - offset, j - offset)).collect();
            if !is_connected(comp.len(), &local) {
                return Err(Error::InvalidConfig(format!("component {c} is not connected")));
            }
        }
        Ok(())
    }
}

/// Builds a topology with one connected graph of `kind` per component.
///
/// Deterministic in `seed`; only [`TopologyKind::RandomRegular`] consumes
/// randomness.
pub fn build_topology(kind: TopologyKind, component_sizes: &[usize], seed: u64) -> Result<Topology> {
    realize(kind, component_sizes, seed, 0)
}

/// Fresh edge realization for `round`. Fixed kinds come back unchanged.
pub fn resample_topology(t: &Topology, round: usize, seed: u64) -> Result<Topology> {
    if !t.kind.supports_resampling() {
        return Ok(t.clone());
    }
    realize(t.kind, &t.component_sizes(), seed, round as u64)
}

fn realize(kind: TopologyKind, sizes: &[usize], seed: u64, round: u64) -> Result<Topology> {
    if sizes.is_empty() {
        return Err(Error::InvalidConfig("at least one component is required".into()));
    }
    let n: usize = sizes.iter().sum();
    let mut components = Vec::with_capacity(sizes.len());
    let mut edges = Vec::with_capacity(sizes.len());
    let mut component_of = Vec::with_capacity(n);
    let mut offset = 0;
    for (c, &size) in sizes.iter().enumerate() {
        if size == 0 {
            return Err(Error::InvalidComponentSize {
                kind: kind.to_string(),
                size,
                reason: "components must be nonempty".into(),
            });
        }
        let local = match kind {
            TopologyKind::Ring => ring_edges(size)?,
            TopologyKind::Grid2D => grid_edges(size)?,
            TopologyKind::Complete => complete_edges(size),
            TopologyKind::RandomRegular { degree } => {
                let mut rng = stream(seed, Domain::Topology, c as u64, round);
                random_regular_edges(size, degree, &mut rng)?
            }
        };
        let mut global: Vec<(usize, usize)> = local
            .into_iter()
            .map(|(i, j)| {
                let (a, b) = (i.min(j), i.max(j));
                (a + offset, b + offset)
            })
            .collect();
        global.sort_unstable();
        components.push((offset..offset + size).collect());
        edges.push(global);
        component_of.extend(std::iter::repeat_n(c, size));
        offset += size;
    }
    Ok(Topology {
        n,
        kind,
        components,
        edges,
        component_of,
    })
}

fn ring_edges(size: usize) -> Result<Vec<(usize, usize)>> {
    if size < 3 {
        return Err(Error::InvalidComponentSize {
            kind: "ring".into(),
            size,
            reason: "a ring needs at least 3 devices".into(),
        });
    }
    Ok((0..size).map(|i| (i, (i + 1) % size)).collect())
}

/// Most-square factorization `rows × cols` with `rows ≤ cols`.
pub fn grid_shape(size: usize) -> Result<(usize, usize)> {
    let mut rows = 1;
    let mut r = 1;
    while r * r <= size {
        if size.is_multiple_of(r) {
            rows = r;
        }
        r += 1;
    }
    if rows == 1 && size > 3 {
        return Err(Error::InvalidComponentSize {
            kind: "grid".into(),
            size,
            reason: "prime sizes above 3 have no two-dimensional grid".into(),
        });
    }
    Ok((rows, size / rows))
}

fn grid_edges(size: usize) -> Result<Vec<(usize, usize)>> {
    let (rows, cols) = grid_shape(size)?;
    let mut edges = Vec::new();
    for r in 0..rows {
        for c in 0..cols {
            let v = r * cols + c;
            if c + 1 < cols {
                edges.push((v, v + 1));
            }
            if r + 1 < rows {
                edges.push((v, v + cols));
            }
        }
    }
    Ok(edges)
}

fn complete_edges(size: usize) -> Vec<(usize, usize)> {
    (0..size).flat_map(|i| (i + 1..size).map(move |j| (i, j))).collect()
}

/// Connected simple `degree`-regular graph on `size` vertices.
///
/// Pairing model: stubs are matched one pair at a time, rejecting pairs that
/// would create a self-loop or a repeated edge; a dead end or a disconnected
/// result restarts the construction, up to [`REGULAR_RESTARTS`] times.
fn random_regular_edges(size: usize, degree: usize, rng: &mut ChaCha8Rng) -> Result<Vec<(usize, usize)>> {
    let invalid = |reason: String| Error::InvalidComponentSize {
        kind: format!("regular{degree}"),
        size,
        reason,
    };
    if size == 1 && degree == 0 {
        return Ok(Vec::new());
    }
    if degree >= size {
        return Err(invalid(format!("degree {degree} must be below the component size")));
    }
    if !(size * degree).is_multiple_of(2) {
        return Err(invalid("size × degree must be even".into()));
    }
    if degree == 0 || (degree == 1 && size > 2) {
        return Err(invalid(format!(
            "a {degree}-regular graph on {size} vertices is disconnected"
        )));
    }
    for _ in 0..REGULAR_RESTARTS {
        if let Some(edges) = try_pairing(size, degree, rng) {
            if is_connected(size, &edges) {
                return Ok(edges);
            }
        }
    }
    Err(invalid(format!(
        "no connected realization found after {REGULAR_RESTARTS} restarts"
    )))
}

fn try_pairing(size: usize, degree: usize, rng: &mut ChaCha8Rng) -> Option<Vec<(usize, usize)>> {
    let mut stubs: Vec<usize> = (0..size).flat_map(|v| std::iter::repeat_n(v, degree)).collect();
    let mut adjacent: Vec<HashSet<usize>> = vec![HashSet::new(); size];
    let mut edges = Vec::with_capacity(size * degree / 2);
    let ok = |adj: &[HashSet<usize>], u: usize, v: usize| u != v && !adj[u].contains(&v);

    while !stubs.is_empty() {
        let len = stubs.len();
        let mut chosen = None;
        for _ in 0..64 {
            let a = rng.gen_range(0..len);
            let b = rng.gen_range(0..len);
            if a != b && ok(&adjacent, stubs[a], stubs[b]) {
                chosen = Some((a, b));
                break;
            }
        }
        if chosen.is_none() {
            let candidates: Vec<(usize, usize)> = (0..len)
                .flat_map(|a| (a + 1..len).map(move |b| (a, b)))
                .filter(|&(a, b)| ok(&adjacent, stubs[a], stubs[b]))
                .collect();
            if candidates.is_empty() {
                return None;
            }
            chosen = Some(candidates[rng.gen_range(0..candidates.len())]);
        }
        let (a, b) = chosen?;
        let (u, v) = (stubs[a], stubs[b]);
        adjacent[u].insert(v);
        adjacent[v].insert(u);
        edges.push((u.min(v), u.max(v)));
        let (hi, lo) = (a.max(b), a.min(b));
        stubs.swap_remove(hi);
        stubs.swap_remove(lo);
    }
    Some(edges)
}

/// Breadth-first connectivity test on local indices.
pub fn is_connected(size: usize, edges: &[(usize, usize)]) -> bool {
    if size <= 1 {
        return true;
    }
    let mut adj = vec![Vec::new(); size];
    for &(i, j) in edges {
        adj[i].push(j);
        adj[j].push(i);
    }
    let mut seen = vec![false; size];
    let mut queue = VecDeque::from([0]);
    seen[0] = true;
    let mut count = 1;
    while let Some(u) = queue.pop_front() {
        for &v in &adj[u] {
            if !seen[v] {
                seen[v] = true;
                count += 1;
                queue.push_back(v);
            }
        }
    }
    count == size
}

/// Doubly stochastic, symmetric, block-diagonal D2D averaging matrix `W`.
#[derive(Debug, Clone, PartialEq)]
pub struct MixingMatrix {
    entries: Array2<f64>,
    components: Vec<Vec<usize>>,
}

impl MixingMatrix {
    pub fn entries(&self) -> &Array2<f64> {
        &self.entries
    }

    pub fn components(&self) -> &[Vec<usize>] {
        &self.components
    }

    pub fn n(&self) -> usize {
        self.entries.nrows()
    }

    /// Diagonal block `W_c`.
    pub fn block(&self, c: usize) -> Array2<f64> {
        let idx = &self.components[c];
        Array2::from_shape_fn((idx.len(), idx.len()), |(a, b)| self.entries[[idx[a], idx[b]]])
    }
}

/// Metropolis–Hastings weights `w_ij = min{1/(deg(i)+1), 1/(deg(j)+1)}` on
/// edges, self-weight `1 − Σ_{j≠i} w_ij`.
pub fn metropolis_weights(t: &Topology) -> MixingMatrix {
    let n = t.n();
    let deg = t.degrees();
    let mut w = Array2::zeros((n, n));
    for (i, j) in t.all_edges() {
        let wij = (1.0 / (deg[i] + 1) as f64).min(1.0 / (deg[j] + 1) as f64);
        w[[i, j]] = wij;
        w[[j, i]] = wij;
    }
    for i in 0..n {
        let off: f64 = (0..n).filter(|&j| j != i).map(|j| w[[i, j]]).sum();
        w[[i, i]] = 1.0 - off;
    }
    MixingMatrix {
        entries: w,
        components: t.components().to_vec(),
    }
}

/// Component projector `Π_C`: `1/n_c` inside each component block.
#[derive(Debug, Clone, PartialEq)]
pub struct ComponentProjector {
    entries: Array2<f64>,
    components: Vec<Vec<usize>>,
    component_of: Vec<usize>,
}

impl ComponentProjector {
    pub fn from_components(components: &[Vec<usize>]) -> Self {
        let n: usize = components.iter().map(Vec::len).sum();
        let mut entries = Array2::zeros((n, n));
        let mut component_of = vec![0; n];
        for (c, comp) in components.iter().enumerate() {
            let v = 1.0 / comp.len() as f64;
            for &i in comp {
                component_of[i] = c;
                for &j in comp {
                    entries[[i, j]] = v;
                }
            }
        }
        Self {
            entries,
            components: components.to_vec(),
            component_of,
        }
    }

    pub fn entries(&self) -> &Array2<f64> {
        &self.entries
    }

    pub fn components(&self) -> &[Vec<usize>] {
        &self.components
    }

    pub fn component_of(&self, device: usize) -> usize {
        self.component_of[device]
    }

    pub fn n(&self) -> usize {
        self.component_of.len()
    }

    /// Global averaging projector `Π = (1/n)·11ᵀ`.
    pub fn global(&self) -> Array2<f64> {
        global_projector(self.n())
    }
}

pub fn component_projector(t: &Topology) -> ComponentProjector {
    ComponentProjector::from_components(t.components())
}

pub fn global_projector(n: usize) -> Array2<f64> {
    Array2::from_elem((n, n), 1.0 / n as f64)
}

#[derive(Debug, Clone, PartialEq)]
pub struct MixingParam {
    pub p: f64,
    pub per_component: Vec<f64>,
}

/// `p_c = 1 − λ₂(W_cᵀ W_c)` per block and the size-weighted aggregate
/// `p = Σ p_c (n_c − 1) / Σ (n_c − 1)`.
///
/// Singleton components get `p_c = 1`; their weight in the aggregate is zero.
pub fn spectral_mixing_parameter(w: &MixingMatrix) -> Result<MixingParam> {
    let mut per_component = Vec::with_capacity(w.components().len());
    for c in 0..w.components().len() {
        let block = w.block(c);
        let size = block.nrows();
        if size == 1 {
            per_component.push(1.0);
            continue;
        }
        for a in 0..size {
            for b in 0..a {
                if (block[[a, b]] - block[[b, a]]).abs() > 1e-12 {
                    return Err(Error::InvalidConfig(format!("mixing block {c} is not symmetric")));
                }
            }
        }
        let m = gram(block.view());
        let ones = Array1::ones(size);
        let lambda2 = psd_top_eigenvalue(m.view(), Some(&ones), EIGEN_TOL, EIGEN_MAX_ITER)?;
        per_component.push(1.0 - lambda2);
    }
    let p = aggregate_mixing(&per_component, &w.components().iter().map(Vec::len).collect::<Vec<_>>());
    Ok(MixingParam { p, per_component })
}

/// Weighted mean of per-component parameters with weights `n_c − 1`.
pub fn aggregate_mixing(per_component: &[f64], sizes: &[usize]) -> f64 {
    let num: f64 = per_component
        .iter()
        .zip(sizes)
        .map(|(pc, &nc)| pc * (nc - 1) as f64)
        .sum();
    let den: f64 = sizes.iter().map(|&nc| (nc - 1) as f64).sum();
    if den == 0.0 {
        1.0
    } else {
        num / den
    }
}
