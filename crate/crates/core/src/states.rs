//! Reference states: qudit graph states, Schmidt states and generalized W states.

use std::collections::VecDeque;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{
    apply_local, gen_pauli_x, gen_pauli_z, identity, kron, mat_power, omega_pow, CMatrix, CVector, StateVector, C64,
};

/// Undirected multigraph with edge multiplicities taken mod `d`.
///
/// Vertex 0 is the trusted party.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "GraphSpec", into = "GraphSpec")]
pub struct Multigraph {
    d: usize,
    gamma: Vec<Vec<u32>>,
    connected: bool,
}

/// JSON shape of a multigraph: `{"d", "vertices", "edges": [[i, j, gamma?], ...]}`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct GraphSpec {
    pub d: usize,
    pub vertices: usize,
    pub edges: Vec<Vec<u64>>,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub allow_disconnected: bool,
}

impl TryFrom<GraphSpec> for Multigraph {
    type Error = Error;

    fn try_from(spec: GraphSpec) -> Result<Self> {
        let mut edges = Vec::with_capacity(spec.edges.len());
        for e in &spec.edges {
            let (i, j, g) = match e.as_slice() {
                [i, j] => (*i, *j, 1),
                [i, j, g] => (*i, *j, *g),
                _ => return Err(Error::InvalidGraph(format!("edge {e:?} must be [i, j] or [i, j, gamma]"))),
            };
            let g = u32::try_from(g).map_err(|_| Error::InvalidGraph(format!("multiplicity {g} too large")))?;
            edges.push((i as usize, j as usize, g));
        }
        if spec.allow_disconnected {
            Multigraph::with_disconnected(spec.d, spec.vertices, &edges)
        } else {
            Multigraph::new(spec.d, spec.vertices, &edges)
        }
    }
}

impl From<Multigraph> for GraphSpec {
    fn from(g: Multigraph) -> Self {
        GraphSpec {
            d: g.d,
            vertices: g.n_vertices(),
            edges: g.edges().into_iter().map(|(i, j, m)| vec![i as u64, j as u64, m as u64]).collect(),
            allow_disconnected: !g.connected,
        }
    }
}

impl Multigraph {
    /// Builds a connected multigraph. Multiplicities must lie in `1..d`.
    pub fn new(d: usize, n: usize, edges: &[(usize, usize, u32)]) -> Result<Self> {
        let g = Self::build(d, n, edges)?;
        if !g.connected {
            return Err(Error::InvalidGraph("graph is not connected".into()));
        }
        Ok(g)
    }

    /// Same as [`Multigraph::new`] but accepts disconnected graphs, which are
    /// then marked as not certifiable.
    pub fn with_disconnected(d: usize, n: usize, edges: &[(usize, usize, u32)]) -> Result<Self> {
        Self::build(d, n, edges)
    }

    fn build(d: usize, n: usize, edges: &[(usize, usize, u32)]) -> Result<Self> {
        if d < 2 {
            return Err(Error::InvalidDimension(d));
        }
        if n < 2 {
            return Err(Error::InvalidGraph(format!("need at least 2 vertices, got {n}")));
        }
        let mut gamma = vec![vec![0u32; n]; n];
        for &(i, j, g) in edges {
            if i >= n || j >= n {
                return Err(Error::InvalidGraph(format!("edge ({i}, {j}) out of range for {n} vertices")));
            }
            if i == j {
                return Err(Error::InvalidGraph(format!("self-loop at vertex {i}")));
            }
            if g == 0 || g as usize >= d {
                return Err(Error::InvalidGraph(format!(
                    "multiplicity {g} on edge ({i}, {j}) must lie in 1..{}",
                    d - 1
                )));
            }
            if gamma[i][j] != 0 {
                return Err(Error::InvalidGraph(format!("duplicate edge ({i}, {j})")));
            }
            gamma[i][j] = g;
            gamma[j][i] = g;
        }
        let connected = is_connected(&gamma);
        Ok(Self { d, gamma, connected })
    }

    pub fn single_edge(d: usize) -> Result<Self> {
        Self::new(d, 2, &[(0, 1, 1)])
    }

    pub fn triangle(d: usize) -> Result<Self> {
        Self::new(d, 3, &[(0, 1, 1), (0, 2, 1), (1, 2, 1)])
    }

    pub fn ring(d: usize, n: usize) -> Result<Self> {
        if n < 3 {
            return Err(Error::InvalidGraph(format!("ring needs at least 3 vertices, got {n}")));
        }
        let edges: Vec<_> = (0..n).map(|i| (i.min((i + 1) % n), i.max((i + 1) % n), 1)).collect();
        Self::new(d, n, &edges)
    }

    /// Star centred at the trusted vertex 0.
    pub fn star(d: usize, n: usize) -> Result<Self> {
        let edges: Vec<_> = (1..n).map(|j| (0, j, 1)).collect();
        Self::new(d, n, &edges)
    }

    /// Random connected multigraph: a random spanning tree plus extra edges,
    /// each edge with a uniform multiplicity in `1..d`.
    pub fn random_connected<R: Rng + ?Sized>(d: usize, n: usize, extra_edge_prob: f64, rng: &mut R) -> Result<Self> {
        if n < 2 {
            return Err(Error::InvalidGraph(format!("need at least 2 vertices, got {n}")));
        }
        if d < 2 {
            return Err(Error::InvalidDimension(d));
        }
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(rng);
        let mut present = vec![vec![false; n]; n];
        let mut edges = Vec::new();
        for k in 1..n {
            let parent = order[rng.random_range(0..k)];
            let (i, j) = (order[k].min(parent), order[k].max(parent));
            present[i][j] = true;
            edges.push((i, j, rng.random_range(1..d as u32)));
        }
        for i in 0..n {
            for j in i + 1..n {
                if !present[i][j] && rng.random_bool(extra_edge_prob) {
                    edges.push((i, j, rng.random_range(1..d as u32)));
                }
            }
        }
        Self::new(d, n, &edges)
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn n_vertices(&self) -> usize {
        self.gamma.len()
    }

    pub fn gamma(&self, i: usize, j: usize) -> u32 {
        self.gamma[i][j]
    }

    pub fn is_connected(&self) -> bool {
        self.connected
    }

    /// Self-testing applies to connected graphs only.
    pub fn is_certifiable(&self) -> bool {
        self.connected
    }

    pub fn neighbors(&self, i: usize) -> Vec<usize> {
        (0..self.n_vertices()).filter(|&j| self.gamma[i][j] != 0).collect()
    }

    pub fn degree(&self, i: usize) -> usize {
        self.gamma[i].iter().filter(|&&g| g != 0).count()
    }

    /// Edges `(i, j, γ)` with `i < j`, in lexicographic order.
    pub fn edges(&self) -> Vec<(usize, usize, u32)> {
        let n = self.n_vertices();
        let mut out = Vec::new();
        for i in 0..n {
            for j in i + 1..n {
                if self.gamma[i][j] != 0 {
                    out.push((i, j, self.gamma[i][j]));
                }
            }
        }
        out
    }
}

fn is_connected(gamma: &[Vec<u32>]) -> bool {
    let n = gamma.len();
    let mut seen = vec![false; n];
    let mut queue = VecDeque::from([0]);
    seen[0] = true;
    while let Some(i) = queue.pop_front() {
        for j in 0..n {
            if gamma[i][j] != 0 && !seen[j] {
                seen[j] = true;
                queue.push_back(j);
            }
        }
    }
    seen.into_iter().all(|s| s)
}

fn check_alpha(alpha: &[f64]) -> Result<()> {
    if alpha.iter().any(|&a| !a.is_finite() || a <= 0.0) {
        return Err(Error::InvalidParams(format!("coefficients must be positive, got {alpha:?}")));
    }
    let norm: f64 = alpha.iter().map(|a| a * a).sum();
    if (norm - 1.0).abs() > 1e-10 {
        return Err(Error::InvalidParams(format!("squared coefficients sum to {norm}, expected 1")));
    }
    Ok(())
}

fn normalize(raw: &[f64]) -> Vec<f64> {
    let norm = raw.iter().map(|a| a * a).sum::<f64>().sqrt();
    raw.iter().map(|a| a / norm).collect()
}

/// Parameters of the `N`-party Schmidt state `Σ_i α_i |i⟩^{⊗N}`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SchmidtParams {
    pub d: usize,
    pub n: usize,
    pub alpha: Vec<f64>,
}

impl SchmidtParams {
    pub fn new(d: usize, n: usize, alpha: Vec<f64>) -> Result<Self> {
        if d < 2 {
            return Err(Error::InvalidDimension(d));
        }
        if n < 2 {
            return Err(Error::InvalidParams(format!("need at least 2 parties, got {n}")));
        }
        if alpha.len() != d {
            return Err(Error::InvalidParams(format!("expected {d} coefficients, got {}", alpha.len())));
        }
        check_alpha(&alpha)?;
        Ok(Self { d, n, alpha })
    }

    /// Rescales `raw` to unit norm before validating.
    pub fn normalized(d: usize, n: usize, raw: &[f64]) -> Result<Self> {
        if raw.iter().any(|&a| a.is_nan() || a <= 0.0) {
            return Err(Error::InvalidParams(format!("coefficients must be positive, got {raw:?}")));
        }
        Self::new(d, n, normalize(raw))
    }

    pub fn equal(d: usize, n: usize) -> Result<Self> {
        Self::new(d, n, vec![1.0 / (d as f64).sqrt(); d])
    }

    /// Coefficients drawn uniformly from `[0.3, 1]` and normalized.
    pub fn random<R: Rng + ?Sized>(d: usize, n: usize, rng: &mut R) -> Result<Self> {
        let raw: Vec<f64> = (0..d).map(|_| rng.random_range(0.3..=1.0)).collect();
        Self::normalized(d, n, &raw)
    }
}

/// Parameters of the `N`-qubit generalized W state.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WParams {
    pub n: usize,
    pub alpha: Vec<f64>,
}

impl WParams {
    pub fn new(alpha: Vec<f64>) -> Result<Self> {
        let n = alpha.len();
        if n < 2 {
            return Err(Error::InvalidParams(format!("need at least 2 parties, got {n}")));
        }
        check_alpha(&alpha)?;
        Ok(Self { n, alpha })
    }

    pub fn normalized(raw: &[f64]) -> Result<Self> {
        if raw.iter().any(|&a| a.is_nan() || a <= 0.0) {
            return Err(Error::InvalidParams(format!("coefficients must be positive, got {raw:?}")));
        }
        Self::new(normalize(raw))
    }

    pub fn equal(n: usize) -> Result<Self> {
        Self::new(vec![1.0 / (n as f64).sqrt(); n])
    }

    pub fn random<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Result<Self> {
        let raw: Vec<f64> = (0..n).map(|_| rng.random_range(0.3..=1.0)).collect();
        Self::normalized(&raw)
    }
}

/// Base-`d` digits of `index`, most significant first.
pub(crate) fn digits(mut index: usize, d: usize, n: usize) -> Vec<usize> {
    let mut out = vec![0; n];
    for slot in (0..n).rev() {
        out[slot] = index % d;
        index /= d;
    }
    out
}

/// `Π_{i<j} CZ_{ij}^{γ_ij} |+⟩^{⊗N}`.
pub fn graph_state(g: &Multigraph) -> Result<StateVector> {
    if !g.is_connected() {
        return Err(Error::InvalidGraph("graph state requested for a disconnected graph".into()));
    }
    Ok(graph_state_unchecked(g))
}

/// Graph state without the connectivity requirement.
pub fn graph_state_unchecked(g: &Multigraph) -> StateVector {
    let (d, n) = (g.d(), g.n_vertices());
    let dim = d.pow(n as u32);
    let edges = g.edges();
    let norm = (dim as f64).sqrt().recip();
    let amps = CVector::from_fn(dim, |idx, _| {
        let q = digits(idx, d, n);
        let phase = edges.iter().fold(0usize, |acc, &(i, j, m)| (acc + m as usize * q[i] * q[j]) % d);
        omega_pow(d, phase as i64) * norm
    });
    StateVector::new(amps).expect("graph state is normalized")
}

/// Per-slot factors of `S_i(G)`: `X` on vertex `i`, `Z^{γ_ij}` on its neighbours.
pub fn stabilizer_factors(g: &Multigraph, i: usize) -> Result<Vec<CMatrix>> {
    let n = g.n_vertices();
    if i >= n {
        return Err(Error::IndexOutOfRange { index: i, len: n });
    }
    let d = g.d();
    let z = gen_pauli_z(d)?;
    let x = gen_pauli_x(d)?;
    (0..n)
        .map(|j| {
            if j == i {
                Ok(x.clone())
            } else if g.gamma(i, j) != 0 {
                mat_power(&z, g.gamma(i, j) as i64)
            } else {
                Ok(identity(d))
            }
        })
        .collect()
}

pub fn stabilizer(g: &Multigraph, i: usize) -> Result<CMatrix> {
    kron(&stabilizer_factors(g, i)?)
}

/// Outcome of a stabilization check.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct StabilizationCheck {
    pub stabilized: bool,
    pub residuals: Vec<f64>,
}

impl StabilizationCheck {
    fn from_residuals(residuals: Vec<f64>, tol: f64) -> Self {
        Self { stabilized: residuals.iter().all(|&r| r <= tol), residuals }
    }

    pub fn max_residual(&self) -> f64 {
        self.residuals.iter().copied().fold(0.0, f64::max)
    }
}

/// Checks `‖S ψ − ψ‖₂ ≤ tol` for every operator.
pub fn verify_stabilized(psi: &StateVector, ops: &[CMatrix], tol: f64) -> Result<StabilizationCheck> {
    let v = psi.amplitudes();
    let residuals = ops
        .iter()
        .map(|op| {
            if op.nrows() != v.len() || op.ncols() != v.len() {
                return Err(Error::DimensionMismatch(format!(
                    "operator {:?} on state of dimension {}",
                    op.shape(),
                    v.len()
                )));
            }
            Ok((op * v - v).norm())
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(StabilizationCheck::from_residuals(residuals, tol))
}

/// Same check with operators given as tensor factors, applied slot by slot.
pub fn verify_stabilized_local(
    psi: &StateVector,
    dims: &[usize],
    ops: &[Vec<CMatrix>],
    tol: f64,
) -> Result<StabilizationCheck> {
    let v = psi.amplitudes();
    let mut residuals = Vec::with_capacity(ops.len());
    for factors in ops {
        if factors.len() != dims.len() {
            return Err(Error::DimensionMismatch(format!("{} factors for {} subsystems", factors.len(), dims.len())));
        }
        let mut w = v.clone();
        for (slot, f) in factors.iter().enumerate() {
            if *f != identity(dims[slot]) {
                w = apply_local(&w, dims, slot, f)?;
            }
        }
        residuals.push((w - v).norm());
    }
    Ok(StabilizationCheck::from_residuals(residuals, tol))
}

/// Checks all stabilizers of `g` on its graph state using local application.
pub fn graph_stabilizer_check(g: &Multigraph, tol: f64) -> Result<StabilizationCheck> {
    let psi = graph_state(g)?;
    let dims = vec![g.d(); g.n_vertices()];
    let ops = (0..g.n_vertices()).map(|i| stabilizer_factors(g, i)).collect::<Result<Vec<_>>>()?;
    verify_stabilized_local(&psi, &dims, &ops, tol)
}

/// `Σ_i α_i |i⟩^{⊗N}`.
pub fn schmidt_state(p: &SchmidtParams) -> Result<StateVector> {
    let p = SchmidtParams::new(p.d, p.n, p.alpha.clone())?;
    let dim = p.d.pow(p.n as u32);
    let stride = (dim - 1) / (p.d - 1);
    let mut amps = CVector::zeros(dim);
    for (i, &a) in p.alpha.iter().enumerate() {
        amps[i * stride] = C64::new(a, 0.0);
    }
    StateVector::new(amps)
}

/// Basis index of the single excitation on party `l` among `n` qubits.
pub fn w_index(n: usize, l: usize) -> usize {
    1 << (n - 1 - l)
}

/// `Σ_l α_l |0…1_l…0⟩` with party 0 the most significant qubit.
pub fn w_state(p: &WParams) -> Result<StateVector> {
    let p = WParams::new(p.alpha.clone())?;
    let mut amps = CVector::zeros(1 << p.n);
    for (l, &a) in p.alpha.iter().enumerate() {
        amps[w_index(p.n, l)] = C64::new(a, 0.0);
    }
    StateVector::new(amps)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{max_diff, reduced_density, DEFAULT_TOL};
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn r(x: f64) -> C64 {
        C64::new(x, 0.0)
    }

    #[test]
    fn single_edge_qubit_amplitudes() {
        let psi = graph_state(&Multigraph::single_edge(2).unwrap()).unwrap();
        let expected = [0.5, 0.5, 0.5, -0.5];
        for (a, e) in psi.amplitudes().iter().zip(expected) {
            assert!((a - r(e)).norm() < 1e-15);
        }
    }

    #[test]
    fn star_graph_is_stabilized_ghz_class() {
        for n in 3..=5 {
            let g = Multigraph::star(2, n).unwrap();
            let check = graph_stabilizer_check(&g, 1e-10).unwrap();
            assert!(check.stabilized, "{check:?}");
            // Hadamards on the leaves map (|0⟩|+…+⟩ + |1⟩|−…−⟩)/√2 to GHZ
            let psi = graph_state(&g).unwrap();
            let h = CMatrix::from_row_slice(2, 2, &[r(1.0), r(1.0), r(1.0), r(-1.0)]).unscale(2f64.sqrt());
            let dims = vec![2; n];
            let mut v = psi.into_inner();
            for slot in 1..n {
                v = apply_local(&v, &dims, slot, &h).unwrap();
            }
            let dim = 1 << n;
            let mut ghz = CVector::zeros(dim);
            ghz[0] = r(0.5f64.sqrt());
            ghz[dim - 1] = r(0.5f64.sqrt());
            let overlap = ghz.dotc(&v).norm();
            assert!((overlap - 1.0).abs() < 1e-12, "n={n} overlap={overlap}");
        }
    }

    #[test]
    fn disconnected_graphs_rejected() {
        assert!(matches!(Multigraph::new(2, 3, &[(0, 1, 1)]), Err(Error::InvalidGraph(_))));
        assert!(Multigraph::new(2, 2, &[]).is_err());
        let g = Multigraph::with_disconnected(2, 3, &[(0, 1, 1)]).unwrap();
        assert!(!g.is_certifiable());
        assert!(graph_state(&g).is_err());
        assert!(Multigraph::new(3, 2, &[(0, 1, 3)]).is_err());
        assert!(Multigraph::new(3, 2, &[(0, 0, 1)]).is_err());
        assert!(Multigraph::new(3, 2, &[(0, 1, 1), (1, 0, 2)]).is_err());
    }

    #[test]
    fn stabilizer_examples() {
        let z2 = gen_pauli_z(2).unwrap();
        let x2 = gen_pauli_x(2).unwrap();
        let s = stabilizer(&Multigraph::single_edge(2).unwrap(), 0).unwrap();
        assert_eq!(s, kron([&x2, &z2]).unwrap());
        let s = stabilizer(&Multigraph::triangle(2).unwrap(), 1).unwrap();
        assert_eq!(s, kron([&z2, &x2, &z2]).unwrap());
        let g = Multigraph::new(3, 2, &[(0, 1, 2)]).unwrap();
        let z3 = gen_pauli_z(3).unwrap();
        let expected = kron([&gen_pauli_x(3).unwrap(), &(&z3 * &z3)]).unwrap();
        assert!(max_diff(&stabilizer(&g, 0).unwrap(), &expected) < 1e-15);
        assert!(matches!(stabilizer(&g, 2), Err(Error::IndexOutOfRange { .. })));
    }

    #[test]
    fn verify_stabilized_examples() {
        let g = Multigraph::triangle(3).unwrap();
        let psi = graph_state(&g).unwrap();
        let ops: Vec<_> = (0..3).map(|i| stabilizer(&g, i).unwrap()).collect();
        let check = verify_stabilized(&psi, &ops, 1e-10).unwrap();
        assert!(check.stabilized && check.max_residual() < 1e-10);

        let ket00 = StateVector::basis(4, 0).unwrap();
        let xz = kron([&gen_pauli_x(2).unwrap(), &gen_pauli_z(2).unwrap()]).unwrap();
        let check = verify_stabilized(&ket00, &[xz], 1e-10).unwrap();
        assert!(!check.stabilized);
        assert!((check.residuals[0] - 2f64.sqrt()).abs() < 1e-14);

        let check = verify_stabilized(&ket00, &[identity(4)], 1e-10).unwrap();
        assert!(check.stabilized);
        assert!(verify_stabilized(&ket00, &[identity(3)], 1e-10).is_err());
    }

    #[test]
    fn schmidt_state_examples() {
        let bell = schmidt_state(&SchmidtParams::equal(2, 2).unwrap()).unwrap();
        let s = 0.5f64.sqrt();
        assert!(max_diff_vec(bell.amplitudes(), &[s, 0.0, 0.0, s]) < 1e-15);
        let ghz = schmidt_state(&SchmidtParams::equal(2, 3).unwrap()).unwrap();
        assert!((ghz.amplitudes()[0] - r(s)).norm() < 1e-15);
        assert!((ghz.amplitudes()[7] - r(s)).norm() < 1e-15);

        let t = 0.6 / 2f64.sqrt();
        let p = SchmidtParams::new(3, 2, vec![0.8, t, t]).unwrap();
        let psi = schmidt_state(&p).unwrap();
        for (idx, a) in psi.amplitudes().iter().enumerate() {
            let expected = match idx {
                0 => 0.8,
                4 | 8 => t,
                _ => 0.0,
            };
            assert!((a - r(expected)).norm() < 1e-15);
        }
        assert!(SchmidtParams::new(2, 2, vec![1.0, 0.0]).is_err());
        assert!(SchmidtParams::new(2, 2, vec![0.5, 0.5]).is_err());
    }

    fn max_diff_vec(v: &CVector, expected: &[f64]) -> f64 {
        v.iter().zip(expected).map(|(a, &e)| (a - r(e)).norm()).fold(0.0, f64::max)
    }

    #[test]
    fn w_state_examples() {
        let s = 1.0 / 3f64.sqrt();
        let w3 = w_state(&WParams::equal(3).unwrap()).unwrap();
        assert!(max_diff_vec(w3.amplitudes(), &[0.0, s, s, 0.0, s, 0.0, 0.0, 0.0]) < 1e-15);
        let w2 = w_state(&WParams::equal(2).unwrap()).unwrap();
        let h = 0.5f64.sqrt();
        assert!(max_diff_vec(w2.amplitudes(), &[0.0, h, h, 0.0]) < 1e-15);
        let p = WParams::new(vec![0.1, 0.2, 0.3, 0.86f64.sqrt()]).unwrap();
        let w4 = w_state(&p).unwrap();
        assert!((w4.amplitudes()[1] - r(0.86f64.sqrt())).norm() < 1e-15);
        assert!((w4.amplitudes()[8] - r(0.1)).norm() < 1e-15);
        assert_eq!(w4.amplitudes()[0], C64::new(0.0, 0.0));
    }

    #[test]
    fn json_round_trip_and_default_multiplicity() {
        let g: Multigraph = serde_json::from_str(r#"{"d": 3, "vertices": 3, "edges": [[0, 1], [1, 2, 2]]}"#).unwrap();
        assert_eq!(g.gamma(0, 1), 1);
        assert_eq!(g.gamma(2, 1), 2);
        let text = serde_json::to_string(&g).unwrap();
        let back: Multigraph = serde_json::from_str(&text).unwrap();
        assert_eq!(back, g);
        assert!(serde_json::from_str::<Multigraph>(r#"{"d": 2, "vertices": 3, "edges": [[0, 1]]}"#).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(20))]

        #[test]
        fn random_graph_stabilizers_fix_state_and_commute(seed in any::<u64>(), d in 2usize..=4, n in 2usize..=4) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let g = Multigraph::random_connected(d, n, 0.5, &mut rng).unwrap();
            let psi = graph_state(&g).unwrap();
            let ops: Vec<_> = (0..n).map(|i| stabilizer(&g, i).unwrap()).collect();
            let check = verify_stabilized(&psi, &ops, 1e-9).unwrap();
            prop_assert!(check.stabilized);
            for a in &ops {
                for b in &ops {
                    prop_assert!(max_diff(&(a * b), &(b * a)) <= 1e-12);
                }
            }
        }

        #[test]
        fn schmidt_marginals_are_diagonal(seed in any::<u64>(), d in 2usize..=4, n in 2usize..=3) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let p = SchmidtParams::random(d, n, &mut rng).unwrap();
            let psi = schmidt_state(&p).unwrap();
            let dims = vec![d; n];
            let expected = CMatrix::from_diagonal(&CVector::from_iterator(d, p.alpha.iter().map(|a| r(a * a))));
            for party in 0..n {
                let red = reduced_density(&psi, &dims, &[party]).unwrap();
                prop_assert!(max_diff(red.matrix(), &expected) <= 1e-10);
            }
        }

        #[test]
        fn w_state_has_no_vacuum_component(seed in any::<u64>(), n in 2usize..=6) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let p = WParams::random(n, &mut rng).unwrap();
            let psi = w_state(&p).unwrap();
            prop_assert_eq!(psi.amplitudes()[0], C64::new(0.0, 0.0));
            prop_assert!((psi.amplitudes().norm() - 1.0).abs() < DEFAULT_TOL);
        }
    }
}
