//! Steering functionals for the graph, Schmidt and W families.
//!
//! A functional is kept symbolically as weighted blocks of monomials. Each
//! monomial names, per party, either the identity or a power of one of the
//! party's two observables. Blocks are grouped so that at maximal violation
//! every block operator fixes the state; the block weights add up to the
//! quantum bound.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{
    apply_local_unchecked, gen_pauli_x, gen_pauli_z, identity, kron, max_diff, omega_pow, power_unchecked,
    unitarity_residual, CMatrix, CVector, StateVector, C64, ONE, ZERO,
};
use crate::states::{graph_state, schmidt_state, w_state, Multigraph, SchmidtParams, WParams};

/// Tolerance on `U†U = I` and `U^d = I` for scenario observables.
pub const OBSERVABLE_TOL: f64 = 1e-9;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Family {
    Graph,
    Schmidt,
    W,
}

impl std::fmt::Display for Family {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Family::Graph => "graph",
            Family::Schmidt => "schmidt",
            Family::W => "w",
        })
    }
}

/// One tensor slot of a monomial.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
pub enum Slot {
    Identity,
    /// `power`-th power of the observable for `setting` (0 or 1).
    Obs {
        setting: u8,
        power: u32,
    },
}

impl Slot {
    fn conjugate(self, d: usize) -> Slot {
        match self {
            Slot::Identity => Slot::Identity,
            Slot::Obs { setting, power } => {
                let p = (d as u32 - power % d as u32) % d as u32;
                if p == 0 {
                    Slot::Identity
                } else {
                    Slot::Obs { setting, power: p }
                }
            }
        }
    }

    fn obs(setting: u8, power: u32, d: usize) -> Slot {
        match power % d as u32 {
            0 => Slot::Identity,
            p => Slot::Obs { setting, power: p },
        }
    }
}

/// `coeff · ⊗_party slot`, with slot 0 the trusted party.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Monomial {
    pub coeff: C64,
    pub slots: Vec<Slot>,
}

impl Monomial {
    pub fn conjugate(&self, d: usize) -> Monomial {
        Monomial { coeff: self.coeff.conj(), slots: self.slots.iter().map(|s| s.conjugate(d)).collect() }
    }
}

/// Group of monomials whose sum fixes the reference state.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Block {
    pub label: String,
    pub weight: f64,
    pub terms: Vec<Monomial>,
}

impl Block {
    fn single(label: String, slots: Vec<Slot>) -> Block {
        Block { label, weight: 1.0, terms: vec![Monomial { coeff: ONE, slots }] }
    }

    fn conjugate(&self, d: usize) -> Block {
        Block {
            label: format!("{}^dag", self.label),
            weight: self.weight,
            terms: self.terms.iter().map(|m| m.conjugate(d)).collect(),
        }
    }
}

/// Observables of all parties. Party 0 is the trusted party; every party
/// has two settings given as unitaries with `U^d = I`.
#[derive(Clone, Debug)]
pub struct Scenario {
    d: usize,
    observables: Vec<[CMatrix; 2]>,
    powers: Vec<[Vec<CMatrix>; 2]>,
}

fn check_observable(u: &CMatrix, d: usize) -> Result<()> {
    if !u.is_square() {
        return Err(Error::NotSquare { rows: u.nrows(), cols: u.ncols() });
    }
    let res = unitarity_residual(u);
    if res > OBSERVABLE_TOL {
        return Err(Error::NotUnitary(res));
    }
    let residual = max_diff(&power_unchecked(u, d as u64), &identity(u.nrows()));
    if residual > OBSERVABLE_TOL {
        return Err(Error::NotCyclic { d, residual });
    }
    Ok(())
}

impl Scenario {
    pub fn new(d: usize, alice: [CMatrix; 2], bobs: Vec<[CMatrix; 2]>) -> Result<Self> {
        if d < 2 {
            return Err(Error::InvalidDimension(d));
        }
        if bobs.is_empty() {
            return Err(Error::Empty("scenario needs at least one untrusted party"));
        }
        if alice[0].nrows() != d || alice[1].nrows() != d {
            return Err(Error::DimensionMismatch(format!("trusted observables must be {d}x{d}")));
        }
        let mut observables = vec![alice];
        observables.extend(bobs);
        for (party, pair) in observables.iter().enumerate() {
            if pair[0].shape() != pair[1].shape() {
                return Err(Error::DimensionMismatch(format!(
                    "party {party} observables have shapes {:?} and {:?}",
                    pair[0].shape(),
                    pair[1].shape()
                )));
            }
            for u in pair {
                check_observable(u, d)?;
            }
        }
        let powers = observables
            .iter()
            .map(|pair| {
                let pw = |u: &CMatrix| {
                    let mut out = vec![identity(u.nrows())];
                    for p in 1..d {
                        out.push(&out[p - 1] * u);
                    }
                    out
                };
                [pw(&pair[0]), pw(&pair[1])]
            })
            .collect();
        Ok(Self { d, observables, powers })
    }

    /// Every party measures `Z` and `X`.
    pub fn standard(d: usize, n: usize) -> Result<Self> {
        if n < 2 {
            return Err(Error::InvalidParams(format!("need at least 2 parties, got {n}")));
        }
        let pair = [gen_pauli_z(d)?, gen_pauli_x(d)?];
        Self::new(d, pair.clone(), vec![pair; n - 1])
    }

    /// Observables that reach the quantum bound on the reference state.
    pub fn ideal(params: &FamilyParams) -> Result<Self> {
        let (d, n) = (params.d(), params.n_parties());
        match params {
            FamilyParams::Schmidt(_) => {
                let z = gen_pauli_z(d)?;
                let x = gen_pauli_x(d)?;
                let bob = [z.adjoint(), x.clone()];
                Self::new(d, [z, x], vec![bob; n - 1])
            }
            _ => Self::standard(d, n),
        }
    }

    /// Embeds each untrusted party into a larger space:
    /// `B ↦ V_j (B ⊗ I_{junk_j}) V_j†`.
    pub fn with_junk(&self, junk_dims: &[usize], unitaries: &[CMatrix]) -> Result<Self> {
        let nb = self.n_parties() - 1;
        if junk_dims.len() != nb || unitaries.len() != nb {
            return Err(Error::DimensionMismatch(format!(
                "expected {nb} junk dimensions and unitaries, got {} and {}",
                junk_dims.len(),
                unitaries.len()
            )));
        }
        let mut bobs = Vec::with_capacity(nb);
        for j in 0..nb {
            let pair = &self.observables[j + 1];
            let dim = pair[0].nrows() * junk_dims[j];
            let v = &unitaries[j];
            if v.nrows() != dim || v.ncols() != dim {
                return Err(Error::DimensionMismatch(format!("unitary for party {} must be {dim}x{dim}", j + 1)));
            }
            let emb = |b: &CMatrix| v * b.kronecker(&identity(junk_dims[j])) * v.adjoint();
            bobs.push([emb(&pair[0]), emb(&pair[1])]);
        }
        Self::new(self.d, self.observables[0].clone(), bobs)
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn n_parties(&self) -> usize {
        self.observables.len()
    }

    /// Local dimensions in party order.
    pub fn dims(&self) -> Vec<usize> {
        self.observables.iter().map(|p| p[0].nrows()).collect()
    }

    pub fn bob_dims(&self) -> Vec<usize> {
        self.dims()[1..].to_vec()
    }

    pub fn total_dim(&self) -> usize {
        self.dims().iter().product()
    }

    pub fn observable(&self, party: usize, setting: usize) -> &CMatrix {
        &self.observables[party][setting]
    }

    pub fn observables(&self, party: usize) -> &[CMatrix; 2] {
        &self.observables[party]
    }

    /// `U^p` for `0 ≤ p < d`, taken mod `d` otherwise.
    pub fn power(&self, party: usize, setting: usize, p: u32) -> &CMatrix {
        &self.powers[party][setting][p as usize % self.d]
    }

    fn slot_matrix(&self, party: usize, slot: Slot) -> CMatrix {
        match slot {
            Slot::Identity => identity(self.observables[party][0].nrows()),
            Slot::Obs { setting, power } => self.power(party, setting as usize, power).clone(),
        }
    }

    /// Applies a monomial (without its coefficient) to a vector laid out as
    /// `dims`, whose leading entries must be the party dimensions.
    pub(crate) fn apply_slots(&self, slots: &[Slot], v: &CVector, dims: &[usize]) -> CVector {
        let mut w = v.clone();
        for (party, slot) in slots.iter().enumerate() {
            if let Slot::Obs { setting, power } = *slot {
                w = apply_local_unchecked(&w, dims, party, self.power(party, setting as usize, power));
            }
        }
        w
    }

    /// State layout `[party dims…, env]` with the trailing environment
    /// dimension inferred from the vector length.
    pub fn layout_for(&self, len: usize) -> Result<Vec<usize>> {
        let total = self.total_dim();
        if len == 0 || !len.is_multiple_of(total) {
            return Err(Error::DimensionMismatch(format!(
                "state dimension {len} is not a multiple of the scenario dimension {total}"
            )));
        }
        let mut dims = self.dims();
        dims.push(len / total);
        Ok(dims)
    }
}

/// Family together with its parameters.
#[derive(Clone, Debug, PartialEq)]
pub enum FamilyParams {
    Graph(Multigraph),
    Schmidt(SchmidtParams),
    W(WParams),
}

impl FamilyParams {
    pub fn family(&self) -> Family {
        match self {
            FamilyParams::Graph(_) => Family::Graph,
            FamilyParams::Schmidt(_) => Family::Schmidt,
            FamilyParams::W(_) => Family::W,
        }
    }

    pub fn d(&self) -> usize {
        match self {
            FamilyParams::Graph(g) => g.d(),
            FamilyParams::Schmidt(p) => p.d,
            FamilyParams::W(_) => 2,
        }
    }

    pub fn n_parties(&self) -> usize {
        match self {
            FamilyParams::Graph(g) => g.n_vertices(),
            FamilyParams::Schmidt(p) => p.n,
            FamilyParams::W(p) => p.n,
        }
    }

    pub fn beta_q(&self) -> f64 {
        let (d, n) = (self.d() as f64, self.n_parties() as f64);
        match self {
            FamilyParams::Schmidt(_) => (d - 1.0) * (n - 1.0) + 1.0,
            _ => 2.0 * n,
        }
    }

    pub fn reference_state(&self) -> Result<StateVector> {
        match self {
            FamilyParams::Graph(g) => graph_state(g),
            FamilyParams::Schmidt(p) => schmidt_state(p),
            FamilyParams::W(p) => w_state(p),
        }
    }

    pub fn functional(&self) -> Result<SteeringFunctional> {
        match self {
            FamilyParams::Graph(g) => Ok(graph_steering_functional(g)),
            FamilyParams::Schmidt(p) => schmidt_steering_functional(p),
            FamilyParams::W(p) => w_steering_functional(p),
        }
    }
}

/// Symbolic steering functional.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SteeringFunctional {
    family: Family,
    d: usize,
    n: usize,
    blocks: Vec<Block>,
    include_hc: bool,
    quantum_bound: f64,
}

impl SteeringFunctional {
    pub fn family(&self) -> Family {
        self.family
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn n_parties(&self) -> usize {
        self.n
    }

    pub fn include_hc(&self) -> bool {
        self.include_hc
    }

    pub fn quantum_bound(&self) -> f64 {
        self.quantum_bound
    }

    /// Blocks as constructed, without Hermitian-conjugate partners.
    pub fn blocks(&self) -> &[Block] {
        &self.blocks
    }

    /// All blocks, with the conjugate partners appended when `include_hc`.
    pub fn expanded_blocks(&self) -> Vec<Block> {
        let mut out = self.blocks.clone();
        if self.include_hc {
            out.extend(self.blocks.iter().map(|b| b.conjugate(self.d)));
        }
        out
    }

    /// Flat term list with block weights folded into the coefficients.
    pub fn terms(&self) -> Vec<Monomial> {
        self.expanded_blocks()
            .into_iter()
            .flat_map(|b| {
                let w = b.weight;
                b.terms.into_iter().map(move |m| Monomial { coeff: m.coeff * w, slots: m.slots })
            })
            .collect()
    }

    /// Number of monomials, counting conjugate partners separately.
    pub fn term_count(&self) -> usize {
        let base: usize = self.blocks.iter().map(|b| b.terms.len()).sum();
        if self.include_hc {
            2 * base
        } else {
            base
        }
    }

    pub fn check_scenario(&self, s: &Scenario) -> Result<()> {
        if s.n_parties() != self.n || s.d() != self.d {
            return Err(Error::DimensionMismatch(format!(
                "functional for N={}, d={} used with scenario N={}, d={}",
                self.n,
                self.d,
                s.n_parties(),
                s.d()
            )));
        }
        Ok(())
    }

    /// Dense matrix of the functional for the given observables.
    pub fn realize(&self, s: &Scenario) -> Result<CMatrix> {
        self.check_scenario(s)?;
        let dim = s.total_dim();
        let mut out = CMatrix::zeros(dim, dim);
        for m in self.terms() {
            let factors: Vec<CMatrix> = m.slots.iter().enumerate().map(|(p, &sl)| s.slot_matrix(p, sl)).collect();
            out += kron(&factors)? * m.coeff;
        }
        Ok(out)
    }

    /// `Σ_terms coeff · monomial |v⟩` by local application.
    pub fn apply(&self, s: &Scenario, v: &CVector, dims: &[usize]) -> Result<CVector> {
        self.check_scenario(s)?;
        let mut out = CVector::zeros(v.len());
        for m in self.terms() {
            out += s.apply_slots(&m.slots, v, dims) * m.coeff;
        }
        Ok(out)
    }

    /// Applies the operator of a single block (weight excluded).
    pub fn apply_block(&self, s: &Scenario, block: &Block, v: &CVector, dims: &[usize]) -> CVector {
        let mut out = CVector::zeros(v.len());
        for m in &block.terms {
            out += s.apply_slots(&m.slots, v, dims) * m.coeff;
        }
        out
    }
}

/// Graph functional: one block per stabilizer, plus Hermitian conjugates.
pub fn graph_steering_functional(g: &Multigraph) -> SteeringFunctional {
    let (d, n) = (g.d(), g.n_vertices());
    let b0 = |gamma: u32| Slot::obs(0, gamma, d);
    let mut blocks = Vec::with_capacity(n);
    for i in 0..n {
        let mut slots = vec![Slot::Identity; n];
        for j in g.neighbors(i) {
            slots[j] = b0(g.gamma(i, j));
        }
        slots[i] = Slot::Obs { setting: 1, power: 1 };
        blocks.push(Block::single(format!("S{i}"), slots));
    }
    SteeringFunctional { family: Family::Graph, d, n, blocks, include_hc: true, quantum_bound: 2.0 * n as f64 }
}

/// `γ(α)` and `δ_0 … δ_{d−1}`.
pub fn schmidt_coefficients(p: &SchmidtParams) -> Result<(f64, Vec<C64>)> {
    let p = SchmidtParams::new(p.d, p.n, p.alpha.clone())?;
    let d = p.d;
    let mut ratio_sum = 0.0;
    for i in 0..d {
        for j in 0..d {
            if i != j {
                ratio_sum += p.alpha[i] / p.alpha[j];
            }
        }
    }
    let gamma = d as f64 / ratio_sum;
    let delta = (0..d)
        .map(|k| {
            let mut acc = ZERO;
            for i in 0..d {
                for j in 0..d {
                    if i != j {
                        acc += omega_pow(d, (k * (d - j)) as i64) * (p.alpha[i] / p.alpha[j]);
                    }
                }
            }
            -acc * (gamma / d as f64)
        })
        .collect();
    Ok((gamma, delta))
}

/// Schmidt functional. Blocks: `A_0^k ⊗ B_{j,0}^k` for every untrusted party
/// `j` and `k = 1…d−1`, and one block collecting the `A_1` correlators with
/// the `δ_k` corrections.
pub fn schmidt_steering_functional(p: &SchmidtParams) -> Result<SteeringFunctional> {
    let (gamma, delta) = schmidt_coefficients(p)?;
    let (d, n) = (p.d, p.n);
    let mut blocks = Vec::new();
    for j in 1..n {
        for k in 1..d as u32 {
            let mut slots = vec![Slot::Identity; n];
            slots[0] = Slot::Obs { setting: 0, power: k };
            slots[j] = Slot::Obs { setting: 0, power: k };
            blocks.push(Block::single(format!("Z{j}^{k}"), slots));
        }
    }
    let mut terms = Vec::new();
    for k in 1..d as u32 {
        terms.push(Monomial { coeff: C64::new(gamma, 0.0), slots: vec![Slot::Obs { setting: 1, power: k }; n] });
        let mut slots = vec![Slot::Identity; n];
        slots[0] = Slot::Obs { setting: 0, power: k };
        terms.push(Monomial { coeff: delta[k as usize], slots });
    }
    blocks.push(Block { label: "T".into(), weight: 1.0, terms });
    Ok(SteeringFunctional {
        family: Family::Schmidt,
        d,
        n,
        blocks,
        include_hc: false,
        quantum_bound: ((d - 1) * (n - 1) + 1) as f64,
    })
}

/// `γ_l` and `δ_l` for `l = 1 … N−1`.
pub fn w_coefficients(p: &WParams) -> Result<(Vec<f64>, Vec<f64>)> {
    let p = WParams::new(p.alpha.clone())?;
    let a1 = p.alpha[0];
    let mut gamma = Vec::with_capacity(p.n - 1);
    let mut delta = Vec::with_capacity(p.n - 1);
    for &al in &p.alpha[1..] {
        let s = al * al + a1 * a1;
        gamma.push(2.0 * al * a1 / s);
        delta.push((al * al - a1 * a1) / s);
    }
    Ok((gamma, delta))
}

/// `P_l = Π_{k≠l} (I + B_{k,0})/2` over the untrusted parties, on the full space.
pub fn projector_pl(s: &Scenario, l: usize) -> Result<CMatrix> {
    if s.d() != 2 {
        return Err(Error::UnsupportedFamily { op: "projector_pl", expected: "qubit W" });
    }
    let n = s.n_parties();
    if l == 0 || l >= n {
        return Err(Error::IndexOutOfRange { index: l, len: n });
    }
    let factors: Vec<CMatrix> = (0..n)
        .map(|k| {
            let id = identity(s.dims()[k]);
            if k == 0 || k == l {
                id
            } else {
                (id + s.observable(k, 0)) * C64::new(0.5, 0.0)
            }
        })
        .collect();
    kron(&factors)
}

/// Monomials of `P_l`: all subsets of the other untrusted parties.
fn pl_expansion(n: usize, l: usize) -> Vec<(f64, Vec<Slot>)> {
    let others: Vec<usize> = (1..n).filter(|&k| k != l).collect();
    let scale = 1.0 / (1u64 << others.len()) as f64;
    (0..1u64 << others.len())
        .map(|mask| {
            let mut slots = vec![Slot::Identity; n];
            for (bit, &k) in others.iter().enumerate() {
                if mask >> bit & 1 == 1 {
                    slots[k] = Slot::Obs { setting: 0, power: 1 };
                }
            }
            (scale, slots)
        })
        .collect()
}

fn merged(label: String, weight: f64, raw: Vec<(C64, Vec<Slot>)>) -> Block {
    let mut acc: BTreeMap<Vec<Slot>, C64> = BTreeMap::new();
    for (c, slots) in raw {
        *acc.entry(slots).or_insert(ZERO) += c;
    }
    let terms =
        acc.into_iter().filter(|(_, c)| c.norm() > 1e-15).map(|(slots, coeff)| Monomial { coeff, slots }).collect();
    Block { label, weight, terms }
}

/// W functional. Blocks: the parity term (weight 2) and, for every
/// untrusted party `l`, one block centred on the trusted party and one on
/// party `l`; `P_l` acts on the remaining untrusted parties.
pub fn w_steering_functional(p: &WParams) -> Result<SteeringFunctional> {
    let (gamma, delta) = w_coefficients(p)?;
    let n = p.n;
    let z = Slot::Obs { setting: 0, power: 1 };
    let x = Slot::Obs { setting: 1, power: 1 };
    let r = |v: f64| C64::new(v, 0.0);
    let mut blocks = vec![Block {
        label: "parity".into(),
        weight: 2.0,
        terms: vec![Monomial { coeff: r(-1.0), slots: vec![z; n] }],
    }];
    for l in 1..n {
        let pl = pl_expansion(n, l);
        let (g, dl) = (gamma[l - 1], delta[l - 1]);

        let mut alice = Vec::new();
        let mut za = vec![Slot::Identity; n];
        za[0] = z;
        alice.push((ONE, za));
        for (c, slots) in &pl {
            let mut zt = slots.clone();
            zt[0] = z;
            alice.push((r((dl - 1.0) * c), zt));
            let mut xt = slots.clone();
            xt[0] = x;
            xt[l] = x;
            alice.push((r(g * c), xt));
        }
        blocks.push(merged(format!("alice{l}"), 1.0, alice));

        let mut bob = Vec::new();
        let mut bl = vec![Slot::Identity; n];
        bl[l] = z;
        bob.push((ONE, bl));
        for (c, slots) in &pl {
            let mut bt = slots.clone();
            bt[l] = z;
            bob.push((r(-c), bt));
            bob.push((r(*c), slots.clone()));
        }
        blocks.push(merged(format!("bob{l}"), 1.0, bob));
    }
    Ok(SteeringFunctional { family: Family::W, d: 2, n, blocks, include_hc: false, quantum_bound: 2.0 * n as f64 })
}
