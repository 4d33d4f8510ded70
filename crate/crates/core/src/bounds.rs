//! Quantum values, quantum bounds and LHS bounds.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::linalg::{
    gen_pauli_x, gen_pauli_z, hermitian_eigen, omega_pow, random_state, top_eigenpair, CMatrix, CVector, DensityMatrix,
    StateVector, C64, ZERO,
};
use crate::operators::{schmidt_coefficients, Family, FamilyParams, Scenario, Slot, SteeringFunctional};
use crate::states::{Multigraph, SchmidtParams};

/// Optimizer and enumeration settings.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct BoundConfig {
    pub restarts: usize,
    pub seed: u64,
    pub enum_cap: u64,
}

impl Default for BoundConfig {
    fn default() -> Self {
        Self { restarts: 64, seed: 0x5eed, enum_cap: 1_000_000 }
    }
}

/// `⟨ψ|F|ψ⟩`. A trailing environment factor is allowed: the state may live
/// on `scenario ⊗ E` for any `E`.
pub fn quantum_value(f: &SteeringFunctional, s: &Scenario, psi: &StateVector) -> Result<f64> {
    let dims = s.layout_for(psi.dim())?;
    let v = psi.amplitudes();
    let val = v.dotc(&f.apply(s, v, &dims)?);
    if val.im.abs() > 1e-9 * val.norm().max(1.0) {
        return Err(Error::NotHermitian(val.im.abs()));
    }
    Ok(val.re)
}

/// `Tr[ρ F]` for a density matrix on exactly the scenario space.
pub fn expectation_density(f: &SteeringFunctional, s: &Scenario, rho: &DensityMatrix) -> Result<f64> {
    if rho.dim() != s.total_dim() {
        return Err(Error::DimensionMismatch(format!(
            "density dimension {} vs scenario dimension {}",
            rho.dim(),
            s.total_dim()
        )));
    }
    Ok(rho.expectation(&f.realize(s)?)?.re)
}

/// `Tr[F]`, computed as a sum of products of local traces.
pub fn functional_trace(f: &SteeringFunctional, s: &Scenario) -> Result<f64> {
    f.check_scenario(s)?;
    let dims = s.dims();
    let mut acc = ZERO;
    for m in f.terms() {
        let mut t = m.coeff;
        for (party, slot) in m.slots.iter().enumerate() {
            t *= match *slot {
                Slot::Identity => C64::new(dims[party] as f64, 0.0),
                Slot::Obs { setting, power } => s.power(party, setting as usize, power).trace(),
            };
        }
        acc += t;
    }
    Ok(acc.re)
}

/// Result of a multi-start optimization.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct OptimizerResult {
    pub value: f64,
    pub restarts: usize,
    pub iterations: usize,
}

/// Maximizes `Σ_t |⟨ψ|O_t|ψ⟩|` over pure states by alternating phase
/// alignment and top-eigenvector updates; each step cannot decrease the
/// objective.
fn maximize_abs_sum(ops: &[CMatrix], d: usize, rng: &mut ChaCha8Rng) -> (f64, usize) {
    let objective = |v: &CVector| ops.iter().map(|o| v.dotc(&(o * v)).norm()).sum::<f64>();
    let mut v = random_state(d, rng).into_inner();
    let mut best = objective(&v);
    let mut iters = 0;
    for _ in 0..1000 {
        iters += 1;
        let mut h = CMatrix::zeros(d, d);
        for o in ops {
            let e = v.dotc(&(o * &v));
            let phase = if e.norm() > 1e-300 { e.conj() / e.norm() } else { C64::new(1.0, 0.0) };
            h += o * phase;
        }
        let h = (&h + h.adjoint()) * C64::new(0.5, 0.0);
        let (_, next) = top_eigenpair(&h).expect("hermitian by construction");
        let val = objective(&next);
        if val <= best + 1e-14 {
            if val > best {
                best = val;
            }
            break;
        }
        best = val;
        v = next;
    }
    (best, iters)
}

/// LHS upper bound for the graph family: the maximum over trusted-party
/// states of `2|⟨X⟩| + 2 Σ_{j∈n(0)} |⟨Z^{γ_j0}⟩|`, plus `2(N − n̄₀ − 1)`.
pub fn lhs_upper_graph(g: &Multigraph, cfg: &BoundConfig) -> Result<OptimizerResult> {
    let d = g.d();
    let z = gen_pauli_z(d)?;
    let mut ops = vec![gen_pauli_x(d)?];
    let neighbors = g.neighbors(0);
    for &j in &neighbors {
        ops.push(crate::linalg::mat_power(&z, g.gamma(j, 0) as i64)?);
    }
    let restarts = cfg.restarts.max(1);
    let runs: Vec<(f64, usize)> = (0..restarts)
        .into_par_iter()
        .map(|r| {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(r as u64));
            maximize_abs_sum(&ops, d, &mut rng)
        })
        .collect();
    let best = runs.iter().map(|r| r.0).fold(f64::NEG_INFINITY, f64::max);
    let iterations = runs.iter().map(|r| r.1).sum();
    let rest = 2.0 * (g.n_vertices() as f64 - neighbors.len() as f64 - 1.0);
    Ok(OptimizerResult { value: 2.0 * best + rest, restarts, iterations })
}

/// Matrix `M_a` with `η^T M_a η` equal to the Schmidt LHS objective
/// (before the constant shift) for a fixed maximizing index `a`.
pub(crate) fn schmidt_lhs_matrix(p: &SchmidtParams, gamma: f64, a: usize) -> Vec<Vec<f64>> {
    let d = p.d;
    let sum_alpha: f64 = p.alpha.iter().sum();
    let mut m = vec![vec![gamma; d]; d];
    for i in 0..d {
        m[i][i] -= gamma * sum_alpha / p.alpha[i];
    }
    m[a][a] += (d * (p.n - 1)) as f64;
    m
}

fn sym_mul(m: &[Vec<f64>], v: &[f64], shift: f64) -> Vec<f64> {
    m.iter().zip(v).map(|(row, vi)| row.iter().zip(v).map(|(a, b)| a * b).sum::<f64>() + shift * vi).collect()
}

fn quad(m: &[Vec<f64>], v: &[f64]) -> f64 {
    sym_mul(m, v, 0.0).iter().zip(v).map(|(a, b)| a * b).sum()
}

/// Projected power iteration on the nonnegative unit sphere. With
/// `anchor = Some(a)` the index is fixed, otherwise it follows the largest
/// component.
fn schmidt_ascent(p: &SchmidtParams, gamma: f64, start: Vec<f64>, anchor: Option<usize>) -> (f64, usize) {
    let argmax = |v: &[f64]| {
        v.iter().enumerate().fold((0, f64::NEG_INFINITY), |(bi, bv), (i, &x)| if x > bv { (i, x) } else { (bi, bv) }).0
    };
    let mut eta = start;
    let mut a = anchor.unwrap_or_else(|| argmax(&eta));
    let mut m = schmidt_lhs_matrix(p, gamma, a);
    let mut best = quad(&m, &eta);
    let mut iters = 0;
    for _ in 0..20_000 {
        iters += 1;
        let shift = (0..m.len())
            .map(|i| m[i].iter().map(|x| x.abs()).sum::<f64>() - m[i][i].abs() - m[i][i])
            .fold(0.0, f64::max);
        let mut next: Vec<f64> = sym_mul(&m, &eta, shift).into_iter().map(|x| x.max(0.0)).collect();
        let norm = next.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm < 1e-300 {
            break;
        }
        next.iter_mut().for_each(|x| *x /= norm);
        if anchor.is_none() {
            let na = argmax(&next);
            if na != a {
                a = na;
                m = schmidt_lhs_matrix(p, gamma, a);
            }
        }
        let val = quad(&m, &next);
        let step: f64 = next.iter().zip(&eta).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
        eta = next;
        best = best.max(val);
        if step < 1e-15 {
            break;
        }
    }
    (best, iters)
}

/// LHS upper bound for the Schmidt family:
/// `max_η d(N−1) max_a η_a² + γ[(Σ η_i)² − Σα_i Σ η_a²/α_a] − (N−2)` over
/// nonnegative unit vectors `η`.
pub fn lhs_upper_schmidt(p: &SchmidtParams, cfg: &BoundConfig) -> Result<OptimizerResult> {
    let (gamma, _) = schmidt_coefficients(p)?;
    let d = p.d;
    let uniform = vec![1.0 / (d as f64).sqrt(); d];
    let mut runs: Vec<(f64, usize)> =
        (0..d).into_par_iter().map(|a| schmidt_ascent(p, gamma, uniform.clone(), Some(a))).collect();
    let restarts = cfg.restarts.max(1);
    runs.extend(
        (0..restarts)
            .into_par_iter()
            .map(|r| {
                let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(r as u64));
                let mut v: Vec<f64> = (0..d).map(|_| rng.random::<f64>() + 1e-3).collect();
                let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
                v.iter_mut().for_each(|x| *x /= norm);
                schmidt_ascent(p, gamma, v, None)
            })
            .collect::<Vec<_>>(),
    );
    let best = runs.iter().map(|r| r.0).fold(f64::NEG_INFINITY, f64::max);
    Ok(OptimizerResult {
        value: best - (p.n as f64 - 2.0),
        restarts: runs.len(),
        iterations: runs.iter().map(|r| r.1).sum(),
    })
}

/// Deterministic untrusted-party strategy: `outcomes[j][y]` is the outcome
/// of party `j + 1` for setting `y`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct DeterministicStrategy {
    pub outcomes: Vec<[u32; 2]>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EnumerationResult {
    pub value: f64,
    pub strategies: u64,
    pub best: DeterministicStrategy,
    /// Trusted-party state attaining the value for `best`.
    #[serde(skip)]
    pub alice_state: StateVector,
}

/// Number of deterministic strategies, `d^{2(N−1)}`, or `None` on overflow.
pub fn strategy_count(d: usize, n: usize) -> Option<u64> {
    (d as u64).checked_pow(2 * (n as u32 - 1))
}

/// Trusted-party operator induced by a deterministic strategy.
pub fn induced_alice_operator(f: &SteeringFunctional, s: &Scenario, strategy: &DeterministicStrategy) -> CMatrix {
    let d = s.d();
    let mut out = CMatrix::zeros(d, d);
    for m in f.terms() {
        let mut c = m.coeff;
        for (j, slot) in m.slots.iter().enumerate().skip(1) {
            if let Slot::Obs { setting, power } = *slot {
                let b = strategy.outcomes[j - 1][setting as usize];
                c *= omega_pow(d, (b as i64) * power as i64);
            }
        }
        match m.slots[0] {
            Slot::Identity => {
                for i in 0..d {
                    out[(i, i)] += c;
                }
            }
            Slot::Obs { setting, power } => out += s.power(0, setting as usize, power) * c,
        }
    }
    out
}

fn decode_strategy(mut index: u64, d: usize, n: usize) -> DeterministicStrategy {
    let mut outcomes = vec![[0u32; 2]; n - 1];
    for pair in outcomes.iter_mut().rev() {
        for y in (0..2).rev() {
            pair[y] = (index % d as u64) as u32;
            index /= d as u64;
        }
    }
    DeterministicStrategy { outcomes }
}

/// Exact LHS value: maximum over deterministic untrusted strategies of the
/// largest eigenvalue of the induced trusted-party operator.
pub fn lhs_exact_enumeration(f: &SteeringFunctional, s: &Scenario, cap: u64) -> Result<EnumerationResult> {
    f.check_scenario(s)?;
    let (d, n) = (s.d(), s.n_parties());
    let count = strategy_count(d, n);
    let count = match count {
        Some(c) if c <= cap => c,
        _ => return Err(Error::EnumerationCap { strategies: (d as u128).pow(2 * (n as u32 - 1)), cap }),
    };
    let (value, index) = (0..count)
        .into_par_iter()
        .map(|idx| {
            let op = induced_alice_operator(f, s, &decode_strategy(idx, d, n));
            let (vals, _) = hermitian_eigen(&op).expect("functional is hermitian");
            (vals[d - 1], idx)
        })
        .reduce(|| (f64::NEG_INFINITY, u64::MAX), |a, b| if b.0 > a.0 || (b.0 == a.0 && b.1 < a.1) { b } else { a });
    let best = decode_strategy(index, d, n);
    let (_, v) = top_eigenpair(&induced_alice_operator(f, s, &best))?;
    Ok(EnumerationResult { value, strategies: count, best, alice_state: StateVector::normalized(v)? })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BoundMethod {
    pub restarts: usize,
    pub seed: u64,
    pub optimizer_iterations: Option<usize>,
    pub strategies: Option<u64>,
    pub enum_cap: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BoundReport {
    pub family: Family,
    pub d: usize,
    pub n: usize,
    pub beta_q: f64,
    pub lhs_upper: Option<f64>,
    pub lhs_exact: Option<f64>,
    /// `β_Q` minus the largest available LHS value.
    pub gap: Option<f64>,
    pub method: BoundMethod,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub notes: Vec<String>,
}

/// Quantum bound, analytical LHS bound where one exists, and the exact LHS
/// value when enumeration fits under the cap.
pub fn bound_report(params: &FamilyParams, cfg: &BoundConfig) -> Result<BoundReport> {
    let f = params.functional()?;
    let s = Scenario::ideal(params)?;
    let mut notes = Vec::new();
    let upper = match params {
        FamilyParams::Graph(g) => Some(lhs_upper_graph(g, cfg)?),
        FamilyParams::Schmidt(p) => Some(lhs_upper_schmidt(p, cfg)?),
        FamilyParams::W(_) => {
            notes.push("analytical bound unavailable".to_string());
            None
        }
    };
    let exact = match lhs_exact_enumeration(&f, &s, cfg.enum_cap) {
        Ok(r) => Some(r),
        Err(e @ Error::EnumerationCap { .. }) => {
            notes.push(e.to_string());
            None
        }
        Err(e) => return Err(e),
    };
    let lhs_upper = upper.as_ref().map(|r| r.value);
    let lhs_exact = exact.as_ref().map(|r| r.value);
    let beta_q = params.beta_q();
    let gap = [lhs_upper, lhs_exact].into_iter().flatten().reduce(f64::max).map(|m| beta_q - m);
    Ok(BoundReport {
        family: params.family(),
        d: params.d(),
        n: params.n_parties(),
        beta_q,
        lhs_upper,
        lhs_exact,
        gap,
        method: BoundMethod {
            restarts: cfg.restarts,
            seed: cfg.seed,
            optimizer_iterations: upper.map(|r| r.iterations),
            strategies: exact.map(|r| r.strategies),
            enum_cap: cfg.enum_cap,
        },
        notes,
    })
}
