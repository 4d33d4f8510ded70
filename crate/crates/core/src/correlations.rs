//! Full correlation tables `p(a, b⃗ | x, y⃗)` and their Fourier picture.
//!
//! Settings combinations are indexed as `Σ_i x_i 2^{N−1−i}` and outcome
//! tuples in mixed radix with party 0 most significant.

use std::io::{Read, Write};

use rand::Rng;
use rand_distr::{Binomial, Distribution};
use rayon::prelude::*;
use serde::Serialize;

use crate::bounds::DeterministicStrategy;
use crate::error::{Error, Result};
use crate::linalg::{
    apply_local_unchecked, hermitian_eigen, identity, omega_pow, purify, CMatrix, DensityMatrix, StateVector, C64, ZERO,
};
use crate::operators::{Scenario, Slot, SteeringFunctional};

/// Largest party count for which full tables are built.
pub const MAX_TABLE_PARTIES: usize = 8;

pub const NORMALIZATION_TOL: f64 = 1e-9;
pub const POSITIVITY_TOL: f64 = 1e-12;
pub const NO_SIGNALING_TOL: f64 = 1e-8;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CorrelationTable {
    n: usize,
    d: usize,
    p: Vec<f64>,
    /// Set for finite-sample estimates, which are not checked for no-signaling.
    estimated: bool,
}

fn check_size(n: usize) -> Result<()> {
    if n > MAX_TABLE_PARTIES {
        return Err(Error::TableTooLarge { parties: n, cap: MAX_TABLE_PARTIES });
    }
    if n < 2 {
        return Err(Error::InvalidTable(format!("need at least 2 parties, got {n}")));
    }
    Ok(())
}

impl CorrelationTable {
    /// Builds and validates a table from raw probabilities.
    pub fn new(n: usize, d: usize, p: Vec<f64>) -> Result<Self> {
        let t = Self::unchecked(n, d, p)?;
        t.validate()?;
        Ok(t)
    }

    fn unchecked(n: usize, d: usize, p: Vec<f64>) -> Result<Self> {
        check_size(n)?;
        if d < 2 {
            return Err(Error::InvalidDimension(d));
        }
        let expected = (1 << n) * d.pow(n as u32);
        if p.len() != expected {
            return Err(Error::InvalidTable(format!("expected {expected} entries, got {}", p.len())));
        }
        Ok(Self { n, d, p, estimated: false })
    }

    pub fn n_parties(&self) -> usize {
        self.n
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn is_estimated(&self) -> bool {
        self.estimated
    }

    pub fn n_settings(&self) -> usize {
        1 << self.n
    }

    pub fn n_outcomes(&self) -> usize {
        self.d.pow(self.n as u32)
    }

    pub fn probabilities(&self) -> &[f64] {
        &self.p
    }

    /// Distribution over outcome tuples for one settings combination.
    pub fn block(&self, settings_index: usize) -> &[f64] {
        let m = self.n_outcomes();
        &self.p[settings_index * m..(settings_index + 1) * m]
    }

    pub fn settings_index(settings: &[u8]) -> usize {
        settings.iter().fold(0, |acc, &x| (acc << 1) | x as usize)
    }

    pub fn outcome_index(&self, outcomes: &[u32]) -> usize {
        outcomes.iter().fold(0, |acc, &o| acc * self.d + o as usize)
    }

    /// `p(outcomes | settings)`.
    pub fn get(&self, settings: &[u8], outcomes: &[u32]) -> f64 {
        self.p[Self::settings_index(settings) * self.n_outcomes() + self.outcome_index(outcomes)]
    }

    /// Checks normalization, positivity and (unless estimated) no-signaling.
    pub fn validate(&self) -> Result<()> {
        if let Some(&bad) = self.p.iter().find(|&&v| v < -POSITIVITY_TOL || !v.is_finite()) {
            return Err(Error::InvalidTable(format!("negative or non-finite entry {bad}")));
        }
        for s in 0..self.n_settings() {
            let total: f64 = self.block(s).iter().sum();
            if (total - 1.0).abs() > NORMALIZATION_TOL {
                return Err(Error::InvalidTable(format!("settings combination {s} sums to {total}")));
            }
        }
        if !self.estimated {
            let dev = self.signaling_deviation();
            if dev > NO_SIGNALING_TOL {
                return Err(Error::InvalidTable(format!("no-signaling violated by {dev:.3e}")));
            }
        }
        Ok(())
    }

    /// Largest change of any party-removed marginal when that party switches
    /// setting.
    pub fn signaling_deviation(&self) -> f64 {
        let (n, d) = (self.n, self.d);
        let m = self.n_outcomes();
        let mut worst: f64 = 0.0;
        for party in 0..n {
            let bit = 1 << (n - 1 - party);
            let stride = d.pow((n - 1 - party) as u32);
            for s in (0..self.n_settings()).filter(|s| s & bit == 0) {
                let (b0, b1) = (self.block(s), self.block(s | bit));
                for o in 0..m {
                    if (o / stride) % d != 0 {
                        continue;
                    }
                    let (mut m0, mut m1) = (0.0, 0.0);
                    for k in 0..d {
                        m0 += b0[o + k * stride];
                        m1 += b1[o + k * stride];
                    }
                    worst = worst.max((m0 - m1).abs());
                }
            }
        }
        worst
    }

    /// Writes the table with header `x,y1..,a,b1..,p`, one row per event.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let n = self.n;
        let mut wtr = csv::Writer::from_writer(w);
        let mut header = vec!["x".to_string()];
        header.extend((1..n).map(|j| format!("y{j}")));
        header.push("a".into());
        header.extend((1..n).map(|j| format!("b{j}")));
        header.push("p".into());
        wtr.write_record(&header)?;
        let m = self.n_outcomes();
        for s in 0..self.n_settings() {
            for o in 0..m {
                let mut rec: Vec<String> = (0..n).map(|i| ((s >> (n - 1 - i)) & 1).to_string()).collect();
                rec.extend(crate::states::digits(o, self.d, n).into_iter().map(|v| v.to_string()));
                rec.push(format!("{:?}", self.p[s * m + o]));
                wtr.write_record(&rec)?;
            }
        }
        wtr.flush()?;
        Ok(())
    }

    /// Reads a table written by [`CorrelationTable::write_csv`] and validates it.
    pub fn read_csv<R: Read>(r: R) -> Result<Self> {
        let mut t = Self::read_csv_unchecked(r)?;
        t.validate()?;
        t.estimated = false;
        Ok(t)
    }

    /// Like [`CorrelationTable::read_csv`] but treats the data as a finite-sample
    /// estimate, skipping the no-signaling check.
    pub fn read_csv_estimated<R: Read>(r: R) -> Result<Self> {
        let mut t = Self::read_csv_unchecked(r)?;
        t.estimated = true;
        t.validate()?;
        Ok(t)
    }

    fn read_csv_unchecked<R: Read>(r: R) -> Result<Self> {
        let mut rdr = csv::Reader::from_reader(r);
        let header = rdr.headers()?.clone();
        let cols = header.len();
        if cols < 5 || cols % 2 == 0 {
            return Err(Error::InvalidTable(format!("unexpected header {header:?}")));
        }
        let n = (cols - 1) / 2;
        let mut expected = vec!["x".to_string()];
        expected.extend((1..n).map(|j| format!("y{j}")));
        expected.push("a".into());
        expected.extend((1..n).map(|j| format!("b{j}")));
        expected.push("p".into());
        if header.iter().map(str::trim).ne(expected.iter().map(String::as_str)) {
            return Err(Error::InvalidTable(format!("header {header:?}, expected {}", expected.join(","))));
        }
        check_size(n)?;
        let mut rows = Vec::new();
        let mut d = 0usize;
        for (line, rec) in rdr.records().enumerate() {
            let rec = rec?;
            let parse_int = |k: usize| -> Result<usize> {
                rec[k]
                    .trim()
                    .parse::<usize>()
                    .map_err(|e| Error::InvalidTable(format!("row {}: column {}: {e}", line + 2, &header[k])))
            };
            let settings = (0..n).map(parse_int).collect::<Result<Vec<_>>>()?;
            let outcomes = (n..2 * n).map(parse_int).collect::<Result<Vec<_>>>()?;
            let p: f64 = rec[2 * n]
                .trim()
                .parse()
                .map_err(|e| Error::InvalidTable(format!("row {}: probability: {e}", line + 2)))?;
            if settings.iter().any(|&x| x > 1) {
                return Err(Error::InvalidTable(format!("row {}: settings must be 0 or 1", line + 2)));
            }
            d = d.max(outcomes.iter().copied().max().unwrap_or(0) + 1);
            rows.push((settings, outcomes, p));
        }
        let d = d.max(2);
        let m = d.pow(n as u32);
        let mut p = vec![f64::NAN; (1 << n) * m];
        for (settings, outcomes, prob) in rows {
            let s = settings.iter().fold(0, |acc, &x| (acc << 1) | x);
            let o = outcomes.iter().fold(0, |acc, &v| acc * d + v);
            if !p[s * m + o].is_nan() {
                return Err(Error::InvalidTable(format!("duplicate event {settings:?} {outcomes:?}")));
            }
            p[s * m + o] = prob;
        }
        if let Some(missing) = p.iter().position(|v| v.is_nan()) {
            return Err(Error::InvalidTable(format!(
                "missing event for settings combination {} outcome index {}",
                missing / m,
                missing % m
            )));
        }
        Self::unchecked(n, d, p)
    }
}

/// Orthonormal eigenbasis of a unitary observable, columns grouped by
/// outcome: eigenvalue `ω^b` is outcome `b`.
#[derive(Clone, Debug)]
pub struct MeasurementBasis {
    pub vectors: CMatrix,
    pub outcomes: Vec<u32>,
}

/// Eigenbasis from the spectral projectors `P_b = (1/d) Σ_k ω^{−bk} U^k`.
/// Degenerate outcomes give higher-rank projectors.
pub fn measurement_basis(u: &CMatrix, d: usize) -> Result<MeasurementBasis> {
    let dim = u.nrows();
    let mut powers = vec![identity(dim)];
    for k in 1..d {
        powers.push(&powers[k - 1] * u);
    }
    let mut vectors = CMatrix::zeros(dim, dim);
    let mut outcomes = Vec::with_capacity(dim);
    for b in 0..d {
        let mut proj = CMatrix::zeros(dim, dim);
        for (k, pk) in powers.iter().enumerate() {
            proj += pk * omega_pow(d, -((b * k) as i64));
        }
        proj.unscale_mut(d as f64);
        let (vals, vecs) = hermitian_eigen(&proj).map_err(|e| Error::Spectrum { d, reason: e.to_string() })?;
        for (i, &lambda) in vals.iter().enumerate() {
            if lambda > 0.5 {
                if (lambda - 1.0).abs() > 1e-6 {
                    return Err(Error::Spectrum { d, reason: format!("projector eigenvalue {lambda}") });
                }
                if outcomes.len() == dim {
                    return Err(Error::Spectrum { d, reason: "projector ranks exceed the dimension".into() });
                }
                vectors.set_column(outcomes.len(), &vecs.column(i));
                outcomes.push(b as u32);
            } else if lambda.abs() > 1e-6 {
                return Err(Error::Spectrum { d, reason: format!("projector eigenvalue {lambda}") });
            }
        }
    }
    if outcomes.len() != dim {
        return Err(Error::Spectrum {
            d,
            reason: format!("projector ranks sum to {}, expected {dim}", outcomes.len()),
        });
    }
    Ok(MeasurementBasis { vectors, outcomes })
}

fn scenario_bases(s: &Scenario) -> Result<Vec<[MeasurementBasis; 2]>> {
    (0..s.n_parties())
        .map(|party| {
            Ok([measurement_basis(s.observable(party, 0), s.d())?, measurement_basis(s.observable(party, 1), s.d())?])
        })
        .collect()
}

/// Born-rule table for a pure state on `scenario ⊗ E`.
pub fn born_table_pure(psi: &StateVector, s: &Scenario) -> Result<CorrelationTable> {
    let n = s.n_parties();
    check_size(n)?;
    let d = s.d();
    let dims = s.layout_for(psi.dim())?;
    let bases = scenario_bases(s)?;
    let adjoints: Vec<[CMatrix; 2]> = bases.iter().map(|b| [b[0].vectors.adjoint(), b[1].vectors.adjoint()]).collect();
    let m = d.pow(n as u32);
    let env = dims[n];
    let blocks: Vec<Vec<f64>> = (0..1usize << n)
        .into_par_iter()
        .map(|sidx| {
            let settings: Vec<usize> = (0..n).map(|i| (sidx >> (n - 1 - i)) & 1).collect();
            let mut v = psi.amplitudes().clone();
            for (party, &x) in settings.iter().enumerate() {
                v = apply_local_unchecked(&v, &dims, party, &adjoints[party][x]);
            }
            let mut block = vec![0.0; m];
            let mut local = vec![0usize; n];
            for (idx, amp) in v.iter().enumerate() {
                let mut rest = idx / env;
                for party in (0..n).rev() {
                    local[party] = rest % dims[party];
                    rest /= dims[party];
                }
                let o = (0..n)
                    .fold(0, |acc, party| acc * d + bases[party][settings[party]].outcomes[local[party]] as usize);
                block[o] += amp.norm_sqr();
            }
            block
        })
        .collect();
    CorrelationTable::new(n, d, blocks.concat())
}

/// Born-rule table for a density matrix on the scenario space.
pub fn born_table(rho: &DensityMatrix, s: &Scenario) -> Result<CorrelationTable> {
    if rho.dim() != s.total_dim() {
        return Err(Error::DimensionMismatch(format!(
            "density dimension {} vs scenario dimension {}",
            rho.dim(),
            s.total_dim()
        )));
    }
    let (psi, _) = purify(rho)?;
    born_table_pure(&psi, s)
}

/// One hidden-variable value of a local-hidden-state model.
#[derive(Clone, Debug)]
pub struct LhsComponent {
    pub weight: f64,
    pub alice_state: DensityMatrix,
    /// `responses[j][y][b] = p(b | y, λ)` for untrusted party `j + 1`.
    pub responses: Vec<[Vec<f64>; 2]>,
}

#[derive(Clone, Debug)]
pub struct LhsModel {
    components: Vec<LhsComponent>,
}

impl LhsModel {
    pub fn new(components: Vec<LhsComponent>) -> Result<Self> {
        if components.is_empty() {
            return Err(Error::Empty("LHS model needs at least one component"));
        }
        let total: f64 = components.iter().map(|c| c.weight).sum();
        if components.iter().any(|c| c.weight < 0.0) || (total - 1.0).abs() > NORMALIZATION_TOL {
            return Err(Error::InvalidParams(format!("LHS weights must be nonnegative and sum to 1, got {total}")));
        }
        for c in &components {
            for pair in &c.responses {
                for row in pair {
                    let s: f64 = row.iter().sum();
                    if row.iter().any(|&v| v < 0.0) || (s - 1.0).abs() > NORMALIZATION_TOL {
                        return Err(Error::InvalidParams(format!("response row {row:?} is not a distribution")));
                    }
                }
            }
        }
        Ok(Self { components })
    }

    /// Single hidden variable with deterministic untrusted responses.
    pub fn deterministic(alice: &StateVector, strategy: &DeterministicStrategy, d: usize) -> Result<Self> {
        let onehot = |b: u32| {
            let mut r = vec![0.0; d];
            r[b as usize] = 1.0;
            r
        };
        let responses = strategy.outcomes.iter().map(|o| [onehot(o[0]), onehot(o[1])]).collect();
        Self::new(vec![LhsComponent { weight: 1.0, alice_state: alice.to_density(), responses }])
    }

    pub fn components(&self) -> &[LhsComponent] {
        &self.components
    }
}

/// `p(a, b⃗ | x, y⃗) = Σ_λ p(λ) Tr[ρ_λ P_{a|x}] Π_j p(b_j | y_j, λ)`.
pub fn lhs_table(model: &LhsModel, s: &Scenario) -> Result<CorrelationTable> {
    let n = s.n_parties();
    check_size(n)?;
    let d = s.d();
    if s.dims()[0] != d {
        return Err(Error::DimensionMismatch("trusted party must be d-dimensional".into()));
    }
    let alice = [measurement_basis(s.observable(0, 0), d)?, measurement_basis(s.observable(0, 1), d)?];
    for c in model.components() {
        if c.alice_state.dim() != d
            || c.responses.len() != n - 1
            || c.responses.iter().any(|r| r[0].len() != d || r[1].len() != d)
        {
            return Err(Error::DimensionMismatch("LHS component does not match the scenario".into()));
        }
    }
    let m = d.pow(n as u32);
    let mut p = vec![0.0; (1 << n) * m];
    for sidx in 0..1usize << n {
        let settings: Vec<usize> = (0..n).map(|i| (sidx >> (n - 1 - i)) & 1).collect();
        for c in model.components() {
            let mut pa = vec![0.0; d];
            let basis = &alice[settings[0]];
            for (col, &b) in basis.outcomes.iter().enumerate() {
                let v = basis.vectors.column(col);
                pa[b as usize] += v.dotc(&(c.alice_state.matrix() * v)).re;
            }
            for o in 0..m {
                let dig = crate::states::digits(o, d, n);
                let mut prob = c.weight * pa[dig[0]];
                for j in 1..n {
                    prob *= c.responses[j - 1][settings[j]][dig[j]];
                }
                p[sidx * m + o] += prob;
            }
        }
    }
    CorrelationTable::new(n, d, p)
}

/// Generalized expectations `⟨A_{k|x} ⊗ B_{l⃗|y⃗}⟩` in the table layout, with
/// the power tuple `(k, l⃗)` in place of the outcome tuple.
#[derive(Clone, Debug, PartialEq)]
pub struct ExpectationTable {
    n: usize,
    d: usize,
    values: Vec<C64>,
}

/// In-place DFT along every axis of a `d^n` block with kernel `ω^{sign·jk}`.
fn dft_axes(block: &mut [C64], d: usize, n: usize, sign: i64) {
    let mut buf = vec![ZERO; d];
    for axis in 0..n {
        let stride = d.pow((n - 1 - axis) as u32);
        for start in 0..block.len() {
            if !(start / stride).is_multiple_of(d) {
                continue;
            }
            for (j, b) in buf.iter_mut().enumerate() {
                *b = block[start + j * stride];
            }
            for k in 0..d {
                let mut acc = ZERO;
                for (j, b) in buf.iter().enumerate() {
                    acc += b * omega_pow(d, sign * (j * k) as i64);
                }
                block[start + k * stride] = acc;
            }
        }
    }
}

impl ExpectationTable {
    pub fn get(&self, settings: &[u8], powers: &[u32]) -> C64 {
        let m = self.d.pow(self.n as u32);
        let o = powers.iter().fold(0, |acc, &p| acc * self.d + (p as usize % self.d));
        self.values[CorrelationTable::settings_index(settings) * m + o]
    }

    pub fn values(&self) -> &[C64] {
        &self.values
    }

    /// Inverse transform back to probabilities.
    pub fn to_table(&self) -> Result<CorrelationTable> {
        let m = self.d.pow(self.n as u32);
        let mut p = Vec::with_capacity(self.values.len());
        for chunk in self.values.chunks(m) {
            let mut block = chunk.to_vec();
            dft_axes(&mut block, self.d, self.n, -1);
            p.extend(block.iter().map(|z| z.re / m as f64));
        }
        CorrelationTable::new(self.n, self.d, p)
    }
}

/// `⟨A^k ⊗ B⃗^{l⃗}⟩ = Σ p(a, b⃗|x, y⃗) ω^{ak + Σ_j b_j l_j}` for all settings.
pub fn generalized_expectations(t: &CorrelationTable) -> ExpectationTable {
    let m = t.n_outcomes();
    let mut values = Vec::with_capacity(t.p.len());
    for chunk in t.p.chunks(m) {
        let mut block: Vec<C64> = chunk.iter().map(|&v| C64::new(v, 0.0)).collect();
        dft_axes(&mut block, t.d, t.n, 1);
        values.extend(block);
    }
    ExpectationTable { n: t.n, d: t.d, values }
}

/// Evaluates a functional purely from a correlation table. Identity slots
/// read setting 0 with power 0.
pub fn functional_value_from_table(f: &SteeringFunctional, t: &CorrelationTable) -> Result<f64> {
    if f.n_parties() != t.n || f.d() != t.d {
        return Err(Error::DimensionMismatch(format!(
            "functional for N={}, d={} evaluated on a table with N={}, d={}",
            f.n_parties(),
            f.d(),
            t.n,
            t.d
        )));
    }
    let e = generalized_expectations(t);
    let mut acc = ZERO;
    for m in f.terms() {
        let mut settings = Vec::with_capacity(t.n);
        let mut powers = Vec::with_capacity(t.n);
        for (party, slot) in m.slots.iter().enumerate() {
            match *slot {
                Slot::Identity => {
                    settings.push(0);
                    powers.push(0);
                }
                Slot::Obs { setting, power } => {
                    if setting > 1 {
                        return Err(Error::UnavailableSetting { party, setting: setting as usize });
                    }
                    settings.push(setting);
                    powers.push(power);
                }
            }
        }
        acc += m.coeff * e.get(&settings, &powers);
    }
    Ok(acc.re)
}

/// `v |ψ⟩⟨ψ| + (1 − v) I/dim`.
pub fn depolarize(psi: &StateVector, v: f64) -> Result<DensityMatrix> {
    if !(0.0..=1.0).contains(&v) {
        return Err(Error::InvalidParams(format!("visibility {v} outside [0, 1]")));
    }
    let dim = psi.dim();
    let m = psi.to_density().into_inner() * C64::new(v, 0.0) + identity(dim) * C64::new((1.0 - v) / dim as f64, 0.0);
    DensityMatrix::new(m)
}

/// Finite-statistics estimate: `shots` multinomial draws per settings
/// combination.
pub fn sample_table<R: Rng + ?Sized>(t: &CorrelationTable, shots: u64, rng: &mut R) -> Result<CorrelationTable> {
    if shots == 0 {
        return Err(Error::InvalidParams("shots must be positive".into()));
    }
    let m = t.n_outcomes();
    let mut p = Vec::with_capacity(t.p.len());
    for chunk in t.p.chunks(m) {
        let mut remaining = shots;
        let mut mass = 1.0;
        for &prob in chunk {
            let prob = prob.max(0.0);
            let count = if remaining == 0 || mass <= 0.0 {
                0
            } else {
                let q = (prob / mass).clamp(0.0, 1.0);
                Binomial::new(remaining, q).map_err(|e| Error::InvalidParams(e.to_string()))?.sample(rng)
            };
            remaining -= count;
            mass -= prob;
            p.push(count as f64 / shots as f64);
        }
        // rounding can leave the last draws unassigned
        if remaining > 0 {
            let last = p.len() - 1;
            p[last] += remaining as f64 / shots as f64;
        }
    }
    let mut out = CorrelationTable::unchecked(t.n, t.d, p)?;
    out.estimated = true;
    out.validate()?;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bounds::{expectation_density, lhs_exact_enumeration, quantum_value};
    use crate::linalg::{haar_unitary, random_density, CVector};
    use crate::operators::FamilyParams;
    use crate::states::{Multigraph, SchmidtParams, WParams};
    use proptest::prelude::{any, prop_assert, proptest, ProptestConfig};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn bell_state_zz_table() {
        let params = FamilyParams::Schmidt(SchmidtParams::equal(2, 2).unwrap());
        let s = Scenario::standard(2, 2).unwrap();
        let t = born_table_pure(&params.reference_state().unwrap(), &s).unwrap();
        assert!((t.get(&[0, 0], &[0, 0]) - 0.5).abs() < 1e-12);
        assert!((t.get(&[0, 0], &[1, 1]) - 0.5).abs() < 1e-12);
        assert!(t.get(&[0, 0], &[0, 1]).abs() < 1e-12);
        assert!(t.get(&[0, 0], &[1, 0]).abs() < 1e-12);
        let e = generalized_expectations(&t);
        assert!((e.get(&[0, 0], &[1, 1]) - C64::new(1.0, 0.0)).norm() < 1e-12);
    }

    #[test]
    fn graph_state_table_follows_stabilizer() {
        let params = FamilyParams::Graph(Multigraph::single_edge(2).unwrap());
        let s = Scenario::standard(2, 2).unwrap();
        let t = born_table_pure(&params.reference_state().unwrap(), &s).unwrap();
        let e = generalized_expectations(&t);
        assert!((e.get(&[1, 0], &[1, 1]) - C64::new(1.0, 0.0)).norm() < 1e-12);
        let f = params.functional().unwrap();
        assert!((functional_value_from_table(&f, &t).unwrap() - 4.0).abs() < 1e-10);
    }

    #[test]
    fn maximally_mixed_is_uniform() {
        let s = Scenario::standard(3, 2).unwrap();
        let t = born_table(&DensityMatrix::maximally_mixed(9), &s).unwrap();
        assert!(t.probabilities().iter().all(|p| (p - 1.0 / 9.0).abs() < 1e-12));
        let e = generalized_expectations(&t);
        for sidx in 0..4u8 {
            let settings = [sidx >> 1, sidx & 1];
            for k in 0..3 {
                for l in 0..3 {
                    let val = e.get(&settings, &[k, l]);
                    let expected = if k == 0 && l == 0 { 1.0 } else { 0.0 };
                    assert!((val - C64::new(expected, 0.0)).norm() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn dft_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let s = Scenario::standard(3, 3).unwrap();
        let rho = random_density(27, 2, &mut rng);
        let t = born_table(&rho, &s).unwrap();
        let back = generalized_expectations(&t).to_table().unwrap();
        let err = t.p.iter().zip(&back.p).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(err <= 1e-12);
    }

    #[test]
    fn lhs_table_examples() {
        let s = Scenario::standard(2, 3).unwrap();
        let zero = StateVector::basis(2, 0).unwrap();
        let strategy = DeterministicStrategy { outcomes: vec![[0, 0], [0, 0]] };
        let model = LhsModel::deterministic(&zero, &strategy, 2).unwrap();
        let t = lhs_table(&model, &s).unwrap();
        assert!((t.get(&[0, 1, 0], &[0, 0, 0]) - 1.0).abs() < 1e-12);
        assert!((t.get(&[1, 0, 1], &[0, 0, 0]) - 0.5).abs() < 1e-12);

        let one = StateVector::basis(2, 1).unwrap();
        let other = DeterministicStrategy { outcomes: vec![[1, 0], [0, 1]] };
        let m2 = LhsModel::deterministic(&one, &other, 2).unwrap();
        let t2 = lhs_table(&m2, &s).unwrap();
        let mixed = LhsModel::new(
            model
                .components()
                .iter()
                .chain(m2.components())
                .map(|c| LhsComponent { weight: 0.5, ..c.clone() })
                .collect(),
        )
        .unwrap();
        let tm = lhs_table(&mixed, &s).unwrap();
        for i in 0..tm.p.len() {
            assert!((tm.p[i] - 0.5 * (t.p[i] + t2.p[i])).abs() < 1e-12);
        }
    }

    #[test]
    fn lhs_maximizer_table_reproduces_enumeration() {
        for params in [
            FamilyParams::Graph(Multigraph::triangle(3).unwrap()),
            FamilyParams::Schmidt(SchmidtParams::new(3, 2, vec![0.8, 0.6 / 2f64.sqrt(), 0.6 / 2f64.sqrt()]).unwrap()),
            FamilyParams::W(WParams::equal(3).unwrap()),
        ] {
            let f = params.functional().unwrap();
            let s = Scenario::ideal(&params).unwrap();
            let r = lhs_exact_enumeration(&f, &s, 1_000_000).unwrap();
            let model = LhsModel::deterministic(&r.alice_state, &r.best, s.d()).unwrap();
            let t = lhs_table(&model, &s).unwrap();
            let v = functional_value_from_table(&f, &t).unwrap();
            assert!((v - r.value).abs() < 1e-9, "{params:?}: {v} vs {}", r.value);
        }
    }

    #[test]
    fn depolarized_schmidt_crosses_lhs_at_inverse_sqrt2() {
        let params = FamilyParams::Schmidt(SchmidtParams::equal(2, 2).unwrap());
        let f = params.functional().unwrap();
        let s = Scenario::ideal(&params).unwrap();
        let psi = params.reference_state().unwrap();
        for v in [0.0, 0.3, 1.0 / 2f64.sqrt(), 1.0] {
            let rho = depolarize(&psi, v).unwrap();
            let t = born_table(&rho, &s).unwrap();
            let val = functional_value_from_table(&f, &t).unwrap();
            assert!((val - 2.0 * v).abs() < 1e-10);
        }
        assert!(depolarize(&psi, 1.1).is_err());
        assert_eq!(depolarize(&psi, 1.0).unwrap(), psi.to_density());
        assert_eq!(depolarize(&psi, 0.0).unwrap(), DensityMatrix::maximally_mixed(4));
    }

    #[test]
    fn csv_round_trip() {
        let params = FamilyParams::W(WParams::new(vec![0.6, 0.48, 0.64]).unwrap());
        let s = Scenario::ideal(&params).unwrap();
        let t = born_table_pure(&params.reference_state().unwrap(), &s).unwrap();
        let mut buf = Vec::new();
        t.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("x,y1,y2,a,b1,b2,p\n"));
        let back = CorrelationTable::read_csv(buf.as_slice()).unwrap();
        assert_eq!(back, t);

        let broken = text.replacen("0,0,0,0,0,0,", "0,0,0,0,0,0,0.5", 1);
        assert!(CorrelationTable::read_csv(broken.as_bytes()).is_err());
        let truncated: String = text.lines().take(10).map(|l| format!("{l}\n")).collect();
        assert!(CorrelationTable::read_csv(truncated.as_bytes()).is_err());
    }

    #[test]
    fn sampling_is_seeded_and_normalized() {
        let params = FamilyParams::Graph(Multigraph::single_edge(3).unwrap());
        let s = Scenario::ideal(&params).unwrap();
        let t = born_table_pure(&params.reference_state().unwrap(), &s).unwrap();
        let a = sample_table(&t, 10_000, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        let b = sample_table(&t, 10_000, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        assert_eq!(a, b);
        assert!(a.is_estimated());
        let f = params.functional().unwrap();
        let val = functional_value_from_table(&f, &a).unwrap();
        assert!((val - 4.0).abs() < 0.2);
    }

    #[test]
    fn degenerate_observables_and_bad_spectra() {
        let z = crate::linalg::gen_pauli_z(2).unwrap();
        let zi = z.kronecker(&identity(3));
        let basis = measurement_basis(&zi, 2).unwrap();
        assert_eq!(basis.outcomes.iter().filter(|&&b| b == 0).count(), 3);
        let z3 = crate::linalg::gen_pauli_z(3).unwrap();
        assert!(matches!(measurement_basis(&z3, 2), Err(Error::Spectrum { .. })));
    }

    #[test]
    fn table_size_guard() {
        let s = Scenario::standard(2, 9).unwrap();
        let psi = StateVector::basis(1 << 9, 0).unwrap();
        assert!(matches!(born_table_pure(&psi, &s), Err(Error::TableTooLarge { .. })));
    }

    fn random_observable(d: usize, dim: usize, rng: &mut ChaCha8Rng) -> CMatrix {
        let v = haar_unitary(dim, rng);
        let diag = CVector::from_fn(dim, |i, _| omega_pow(d, ((i * 7 + rng.random_range(0..d)) % d) as i64));
        &v * CMatrix::from_diagonal(&diag) * v.adjoint()
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(12))]

        #[test]
        fn picture_equivalence_on_random_states(seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let params = match rng.random_range(0..3) {
                0 => FamilyParams::Graph(Multigraph::random_connected(rng.random_range(2..=3), 3, 0.5, &mut rng).unwrap()),
                1 => FamilyParams::Schmidt(SchmidtParams::random(rng.random_range(2..=3), 2, &mut rng).unwrap()),
                _ => FamilyParams::W(WParams::random(3, &mut rng).unwrap()),
            };
            let d = params.d();
            let n = params.n_parties();
            let bobs = (1..n).map(|_| {
                let dim = d * rng.random_range(1..=2);
                [random_observable(d, dim, &mut rng), random_observable(d, dim, &mut rng)]
            }).collect();
            let s = Scenario::new(d, [random_observable(d, d, &mut rng), random_observable(d, d, &mut rng)], bobs).unwrap();
            let rho = random_density(s.total_dim(), 2, &mut rng);
            let f = params.functional().unwrap();
            let t = born_table(&rho, &s).unwrap();
            let from_table = functional_value_from_table(&f, &t).unwrap();
            let trace = expectation_density(&f, &s, &rho).unwrap();
            prop_assert!((from_table - trace).abs() <= 1e-8);
            prop_assert!(t.signaling_deviation() <= NO_SIGNALING_TOL);
        }

        #[test]
        fn value_is_affine_in_visibility(seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let params = FamilyParams::Graph(Multigraph::random_connected(3, 2, 0.0, &mut rng).unwrap());
            let f = params.functional().unwrap();
            let s = Scenario::ideal(&params).unwrap();
            let psi = crate::linalg::random_state(9, &mut rng);
            let at = |v: f64| expectation_density(&f, &s, &depolarize(&psi, v).unwrap()).unwrap();
            let (a, b, c) = (at(0.0), at(0.4), at(1.0));
            prop_assert!((b - (0.6 * a + 0.4 * c)).abs() < 1e-10);
            prop_assert!((c - quantum_value(&f, &s, &psi).unwrap()).abs() < 1e-10);
        }
    }
}
