//! Self-testing checks: algebraic relations of the untrusted observables,
//! construction of the extraction unitaries, and comparison of the
//! extracted state with the reference state.

use rand::Rng;
use serde::{Serialize, Serializer};

use crate::bounds::quantum_value;
use crate::error::{Error, Result};
use crate::linalg::{
    apply_local_unchecked, fidelity, gen_pauli_x, gen_pauli_z, haar_unitary, hermitian_eigen, identity, kron,
    mat_power, max_diff, omega, omega_pow, phase_normalize, power_unchecked, purify, random_state, reduced_density,
    unitarity_residual, CMatrix, CVector, DensityMatrix, StateVector, C64, ZERO,
};
use crate::operators::{Family, FamilyParams, Scenario};
use crate::states::w_index;

pub const RELATION_TOL: f64 = 1e-7;
pub const CERTIFICATION_TOL: f64 = 1e-6;

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct CertifyConfig {
    /// Tolerance on algebraic relations between observables.
    pub relation_tol: f64,
    /// Tolerance on deficit, stabilization residuals and fidelity.
    pub cert_tol: f64,
}

impl Default for CertifyConfig {
    fn default() -> Self {
        Self { relation_tol: RELATION_TOL, cert_tol: CERTIFICATION_TOL }
    }
}

fn require_unitary(u: &CMatrix) -> Result<()> {
    if !u.is_square() {
        return Err(Error::NotSquare { rows: u.nrows(), cols: u.ncols() });
    }
    let r = unitarity_residual(u);
    if r > 1e-9 {
        return Err(Error::NotUnitary(r));
    }
    Ok(())
}

/// `‖B0 B1 − ω B1 B0‖_max`, satisfied by the clock and shift matrices.
pub fn weyl_residual(b0: &CMatrix, b1: &CMatrix, d: usize) -> f64 {
    if b0.shape() != b1.shape() {
        return f64::INFINITY;
    }
    max_diff(&(b0 * b1), &(b1 * b0 * omega(d)))
}

/// `‖B0^γ B1 − ω^γ B1 B0^γ‖_max` for unitaries with `U^d = I`.
pub fn graph_commutation_residual(b0: &CMatrix, b1: &CMatrix, gamma: u32, d: usize) -> Result<f64> {
    for u in [b0, b1] {
        require_unitary(u)?;
        let residual = max_diff(&power_unchecked(u, d as u64), &identity(u.nrows()));
        if residual > 1e-9 {
            return Err(Error::NotCyclic { d, residual });
        }
    }
    if b0.shape() != b1.shape() {
        return Err(Error::DimensionMismatch(format!("{:?} vs {:?}", b0.shape(), b1.shape())));
    }
    let p = mat_power(b0, gamma as i64)?;
    Ok(max_diff(&(&p * b1), &(b1 * &p * omega_pow(d, gamma as i64))))
}

/// `‖B0 B1 + B1 B0‖_max` for unitary involutions.
pub fn anticommutation_residual(b0: &CMatrix, b1: &CMatrix) -> Result<f64> {
    for u in [b0, b1] {
        require_unitary(u)?;
        let r = max_diff(&(u * u), &identity(u.nrows()));
        if r > 1e-9 {
            return Err(Error::NotInvolution(r));
        }
    }
    if b0.shape() != b1.shape() {
        return Err(Error::DimensionMismatch(format!("{:?} vs {:?}", b0.shape(), b1.shape())));
    }
    Ok(crate::linalg::max_norm(&(b0 * b1 + b1 * b0)))
}

/// Extraction unitary with `U B0 U† = Z ⊗ I` and `U B1 U† = X ⊗ I`.
#[derive(Clone, Debug, PartialEq)]
pub struct CanonicalForm {
    pub unitary: CMatrix,
    pub junk_dim: usize,
    pub residual_b0: f64,
    pub residual_b1: f64,
}

/// Builds the extraction unitary for a pair obeying `B0 B1 = ω B1 B0`.
///
/// The `ω^0` eigenspace of `B0` gets an orthonormal basis by pivoted
/// Gram-Schmidt on the columns of its projector; the other basis vectors are
/// `B1^i` applied to it.
pub fn canonical_form(b0: &CMatrix, b1: &CMatrix, d: usize, tol: f64) -> Result<CanonicalForm> {
    require_unitary(b0)?;
    require_unitary(b1)?;
    let dim = b0.nrows();
    if b1.nrows() != dim {
        return Err(Error::DimensionMismatch(format!("{:?} vs {:?}", b0.shape(), b1.shape())));
    }
    if !dim.is_multiple_of(d) {
        return Err(Error::NotCertifiable(format!("dimension {dim} is not a multiple of {d}")));
    }
    let relation = weyl_residual(b0, b1, d);
    if relation > tol {
        return Err(Error::NotCertifiable(format!("commutation relation violated (residual {relation:.3e})")));
    }
    let m = dim / d;
    let mut powers = vec![identity(dim)];
    for k in 1..d {
        powers.push(&powers[k - 1] * b0);
    }
    for j in 0..d {
        let tr: C64 =
            powers.iter().enumerate().map(|(k, p)| p.trace() * omega_pow(d, -((j * k) as i64))).sum::<C64>() / d as f64;
        if (tr.re - m as f64).abs() > 1e-6 || tr.im.abs() > 1e-6 {
            return Err(Error::NotCertifiable(format!("eigenspace {j} has dimension {:.6}, expected {m}", tr.re)));
        }
    }
    let p0 = powers.iter().fold(CMatrix::zeros(dim, dim), |acc, p| acc + p) / C64::new(d as f64, 0.0);

    let mut residual: Vec<CVector> = (0..dim).map(|c| p0.column(c).into_owned()).collect();
    let mut basis: Vec<CVector> = Vec::with_capacity(m);
    for _ in 0..m {
        let (pivot, norm) = residual.iter().enumerate().map(|(i, v)| (i, v.norm())).fold((0, -1.0), |best, cur| {
            if cur.1 > best.1 {
                cur
            } else {
                best
            }
        });
        if norm < 1e-6 {
            return Err(Error::NotCertifiable("eigenspace basis is degenerate".into()));
        }
        let mut e = residual[pivot].unscale(norm);
        phase_normalize(&mut e);
        for v in residual.iter_mut() {
            let c = e.dotc(v);
            *v -= &e * c;
        }
        basis.push(e);
    }

    let mut v = CMatrix::zeros(dim, dim);
    for (mm, e) in basis.iter().enumerate() {
        let mut col = e.clone();
        for i in 0..d {
            v.set_column(i * m + mm, &col);
            col = b1 * col;
        }
    }
    let orth = unitarity_residual(&v);
    if orth > 10.0 * tol {
        return Err(Error::NotCertifiable(format!("orbit basis is not orthonormal (residual {orth:.3e})")));
    }
    let u = v.adjoint();
    let ud = u.adjoint();
    let junk = identity(m);
    let residual_b0 = max_diff(&(&u * b0 * &ud), &gen_pauli_z(d)?.kronecker(&junk));
    let residual_b1 = max_diff(&(&u * b1 * &ud), &gen_pauli_x(d)?.kronecker(&junk));
    if residual_b0 > 10.0 * tol || residual_b1 > 10.0 * tol {
        return Err(Error::NotCertifiable(format!(
            "extraction residuals {residual_b0:.3e}, {residual_b1:.3e} above tolerance"
        )));
    }
    Ok(CanonicalForm { unitary: u, junk_dim: m, residual_b0, residual_b1 })
}

fn ser_matrix<S: Serializer>(m: &CMatrix, s: S) -> std::result::Result<S::Ok, S::Error> {
    let rows: Vec<Vec<[f64; 2]>> =
        (0..m.nrows()).map(|i| (0..m.ncols()).map(|j| [m[(i, j)].re, m[(i, j)].im]).collect()).collect();
    rows.serialize(s)
}

fn ser_matrices<S: Serializer>(ms: &Option<Vec<CMatrix>>, s: S) -> std::result::Result<S::Ok, S::Error> {
    #[derive(Serialize)]
    struct W<'a>(#[serde(serialize_with = "ser_matrix")] &'a CMatrix);
    ms.as_ref().map(|v| v.iter().map(W).collect::<Vec<_>>()).serialize(s)
}

fn ser_density<S: Serializer>(m: &Option<DensityMatrix>, s: S) -> std::result::Result<S::Ok, S::Error> {
    #[derive(Serialize)]
    struct W<'a>(#[serde(serialize_with = "ser_matrix")] &'a CMatrix);
    m.as_ref().map(|d| W(d.matrix())).serialize(s)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BlockResidual {
    pub label: String,
    pub residual: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CertificationReport {
    pub family: Family,
    pub d: usize,
    pub n: usize,
    pub violation: f64,
    pub beta_q: f64,
    pub deficit: f64,
    /// Per untrusted party: commutation residual (anticommutation for W).
    pub relation_residuals: Vec<f64>,
    /// Graph family: `(j, γ_0j, residual)` for neighbours of the trusted vertex.
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub edge_relation_residuals: Vec<(usize, u32, f64)>,
    pub stabilization_residuals: Vec<BlockResidual>,
    /// Per untrusted party: `[‖U B0 U† − Z⊗I‖, ‖U B1 U† − X⊗I‖]`.
    pub extraction_residuals: Vec<[f64; 2]>,
    pub junk_dims: Vec<usize>,
    pub env_dim: usize,
    pub fidelity: Option<f64>,
    #[serde(serialize_with = "ser_matrices", skip_serializing_if = "Option::is_none")]
    pub extraction_unitaries: Option<Vec<CMatrix>>,
    #[serde(serialize_with = "ser_density", skip_serializing_if = "Option::is_none")]
    pub junk_state: Option<DensityMatrix>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub w_amplitude_ratios: Option<Vec<f64>>,
    /// Schmidt family: `min_l γ Σ_i α_i / α_l`, positive when the coefficient
    /// operator is invertible.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub schmidt_invertibility: Option<f64>,
    pub certified: bool,
    pub failures: Vec<String>,
    pub warnings: Vec<String>,
    pub config: CertifyConfig,
    pub note: String,
}

impl CertificationReport {
    /// Drops the embedded matrices, e.g. before serialization.
    pub fn strip_matrices(&mut self) {
        self.extraction_unitaries = None;
        self.junk_state = None;
    }

    pub fn max_relation_residual(&self) -> f64 {
        self.relation_residuals.iter().copied().fold(0.0, f64::max)
    }

    pub fn max_stabilization_residual(&self) -> f64 {
        self.stabilization_residuals.iter().map(|b| b.residual).fold(0.0, f64::max)
    }
}

/// `‖O_b ψ − ψ‖₂` for every block of the functional (conjugate partners
/// included). `ψ` may carry a trailing environment factor.
pub fn stabilization_residuals(params: &FamilyParams, s: &Scenario, psi: &StateVector) -> Result<Vec<BlockResidual>> {
    let f = params.functional()?;
    f.check_scenario(s)?;
    let dims = s.layout_for(psi.dim())?;
    let v = psi.amplitudes();
    Ok(f.expanded_blocks()
        .iter()
        .map(|b| BlockResidual { label: b.label.clone(), residual: (f.apply_block(s, b, v, &dims) - v).norm() })
        .collect())
}

/// Amplitude ratios `α_{l}/α_0` read off a state of `n` qubits in the
/// single-excitation sector.
pub fn w_amplitude_recovery(rho: &DensityMatrix, n: usize, tol: f64) -> Result<Vec<f64>> {
    if rho.dim() != 1 << n {
        return Err(Error::DimensionMismatch(format!("expected {} qubits, got dimension {}", n, rho.dim())));
    }
    let m = rho.matrix();
    let sector: Vec<usize> = (0..n).map(|l| w_index(n, l)).collect();
    let outside: f64 = (0..rho.dim()).filter(|i| !sector.contains(i)).map(|i| m[(i, i)].re).sum();
    if outside > tol {
        return Err(Error::NotCertifiable(format!("weight {outside:.3e} outside the single-excitation sector")));
    }
    let p0 = m[(sector[0], sector[0])].re;
    if p0 <= tol {
        return Err(Error::NotCertifiable("no weight on the trusted-party excitation".into()));
    }
    Ok(sector[1..].iter().map(|&e| m[(e, sector[0])].re / p0).collect())
}

/// Extracts the reference state from `ψ` on `scenario ⊗ E` and reports
/// how well it matches.
pub fn extract_and_compare(
    psi: &StateVector,
    s: &Scenario,
    params: &FamilyParams,
    cfg: &CertifyConfig,
) -> Result<CertificationReport> {
    let f = params.functional()?;
    f.check_scenario(s)?;
    let (d, n) = (s.d(), s.n_parties());
    let dims = s.layout_for(psi.dim())?;
    let env_dim = dims[n];
    let mut failures = Vec::new();
    let mut warnings = Vec::new();

    let violation = quantum_value(&f, s, psi)?;
    let beta_q = params.beta_q();
    let deficit = beta_q - violation;

    let mut relation_residuals = Vec::with_capacity(n - 1);
    let mut edge_relation_residuals = Vec::new();
    for j in 1..n {
        let [b0, b1] = s.observables(j);
        let r = match params {
            FamilyParams::Graph(_) => weyl_residual(b0, b1, d),
            FamilyParams::Schmidt(_) => weyl_residual(&b0.adjoint(), b1, d),
            FamilyParams::W(_) => match anticommutation_residual(b0, b1) {
                Ok(r) => r,
                Err(e) => {
                    failures.push(format!("party {j}: {e}"));
                    f64::INFINITY
                }
            },
        };
        if r > cfg.relation_tol && r.is_finite() {
            failures.push(format!("party {j}: relation residual {r:.3e} above {:.1e}", cfg.relation_tol));
        }
        relation_residuals.push(r);
    }
    if let FamilyParams::Graph(g) = params {
        if !g.is_certifiable() {
            failures.push("graph is not connected".into());
        }
        for j in g.neighbors(0) {
            let [b0, b1] = s.observables(j);
            let r = graph_commutation_residual(b0, b1, g.gamma(0, j), d)?;
            edge_relation_residuals.push((j, g.gamma(0, j), r));
        }
    }

    let stabilization = stabilization_residuals(params, s, psi)?;

    let schmidt_invertibility = match params {
        FamilyParams::Schmidt(p) => {
            let (gamma, _) = crate::operators::schmidt_coefficients(p)?;
            let sum: f64 = p.alpha.iter().sum();
            Some(p.alpha.iter().map(|a| gamma * sum / a).fold(f64::INFINITY, f64::min))
        }
        _ => None,
    };

    // full-rank supports are assumed; flag deficient ones
    for j in 1..n {
        let red = reduced_density(psi, &dims, &[j])?;
        let (vals, _) = hermitian_eigen(red.matrix())?;
        let rank = vals.iter().filter(|&&v| v > 1e-10).count();
        if rank < dims[j] {
            warnings.push(format!("party {j}: reduced state has rank {rank} < {}", dims[j]));
        }
    }

    let mut unitaries = Vec::with_capacity(n - 1);
    let mut extraction_residuals = Vec::with_capacity(n - 1);
    let mut junk_dims = Vec::with_capacity(n - 1);
    for j in 1..n {
        if relation_residuals[j - 1] > cfg.relation_tol {
            continue;
        }
        let [b0, b1] = s.observables(j);
        let b0 = if params.family() == Family::Schmidt { b0.adjoint() } else { b0.clone() };
        match canonical_form(&b0, b1, d, cfg.relation_tol) {
            Ok(cf) => {
                extraction_residuals.push([cf.residual_b0, cf.residual_b1]);
                junk_dims.push(cf.junk_dim);
                unitaries.push(cf.unitary);
            }
            Err(e) => failures.push(format!("party {j}: {e}")),
        }
    }

    let mut fid = None;
    let mut junk_state = None;
    let mut w_ratios = None;
    if unitaries.len() == n - 1 {
        let mut v = psi.amplitudes().clone();
        for (j, u) in unitaries.iter().enumerate() {
            v = apply_local_unchecked(&v, &dims, j + 1, u);
        }
        let extracted = StateVector::new(v)?;
        let mut ext_dims = vec![d];
        let mut ref_slots = vec![0];
        let mut junk_slots = Vec::new();
        for &m in &junk_dims {
            ref_slots.push(ext_dims.len());
            ext_dims.push(d);
            junk_slots.push(ext_dims.len());
            ext_dims.push(m);
        }
        junk_slots.push(ext_dims.len());
        ext_dims.push(env_dim);
        let rho_ref = reduced_density(&extracted, &ext_dims, &ref_slots)?;
        let reference = params.reference_state()?;
        let value = fidelity(&rho_ref, &reference)?;
        if value < 1.0 - cfg.cert_tol {
            failures.push(format!("fidelity {value:.9} below 1 - {:.1e}", cfg.cert_tol));
        }
        fid = Some(value);
        junk_state = Some(reduced_density(&extracted, &ext_dims, &junk_slots)?);
        if let FamilyParams::W(p) = params {
            match w_amplitude_recovery(&rho_ref, n, cfg.cert_tol) {
                Ok(r) => {
                    let err = r.iter().zip(&p.alpha[1..]).map(|(x, a)| (x - a / p.alpha[0]).abs()).fold(0.0, f64::max);
                    if err > cfg.cert_tol {
                        failures.push(format!("amplitude ratios deviate by {err:.3e}"));
                    }
                    w_ratios = Some(r);
                }
                Err(e) => failures.push(e.to_string()),
            }
        }
    }

    if deficit > cfg.cert_tol {
        failures.push(format!("deficit {deficit:.3e} above {:.1e}", cfg.cert_tol));
    }
    let worst_stab = stabilization.iter().map(|b| b.residual).fold(0.0, f64::max);
    if worst_stab > cfg.cert_tol {
        failures.push(format!("stabilization residual {worst_stab:.3e} above {:.1e}", cfg.cert_tol));
    }

    Ok(CertificationReport {
        family: params.family(),
        d,
        n,
        violation,
        beta_q,
        deficit,
        relation_residuals,
        edge_relation_residuals,
        stabilization_residuals: stabilization,
        extraction_residuals,
        junk_dims,
        env_dim,
        fidelity: fid,
        extraction_unitaries: if unitaries.len() == n - 1 { Some(unitaries) } else { None },
        junk_state,
        w_amplitude_ratios: w_ratios,
        schmidt_invertibility,
        certified: failures.is_empty(),
        failures,
        warnings,
        config: *cfg,
        note: "asymptotic conditions checked at tolerance".into(),
    })
}

/// Purifies `ρ` with a minimal ancilla and runs [`extract_and_compare`].
pub fn certify_density(
    rho: &DensityMatrix,
    s: &Scenario,
    params: &FamilyParams,
    cfg: &CertifyConfig,
) -> Result<CertificationReport> {
    if rho.dim() != s.total_dim() {
        return Err(Error::DimensionMismatch(format!(
            "density dimension {} vs scenario dimension {}",
            rho.dim(),
            s.total_dim()
        )));
    }
    let (psi, _) = purify(rho)?;
    extract_and_compare(&psi, s, params, cfg)
}

/// Reference state with a random junk state, hidden behind random local
/// unitaries on every untrusted party, together with the matching
/// observables.
#[derive(Clone, Debug)]
pub struct ScrambledInstance {
    pub scenario: Scenario,
    pub state: StateVector,
    pub unitaries: Vec<CMatrix>,
    pub junk_dims: Vec<usize>,
    pub env_dim: usize,
}

pub fn scrambled_instance<R: Rng + ?Sized>(
    params: &FamilyParams,
    junk_dims: &[usize],
    env_dim: usize,
    rng: &mut R,
) -> Result<ScrambledInstance> {
    let (d, n) = (params.d(), params.n_parties());
    if junk_dims.len() != n - 1 || junk_dims.contains(&0) || env_dim == 0 {
        return Err(Error::InvalidParams(format!("need {} positive junk dimensions", n - 1)));
    }
    let unitaries: Vec<CMatrix> = junk_dims.iter().map(|&m| haar_unitary(d * m, rng)).collect();
    let scenario = Scenario::ideal(params)?.with_junk(junk_dims, &unitaries)?;
    let reference = params.reference_state()?;
    let junk_total: usize = junk_dims.iter().product::<usize>() * env_dim;
    let xi = random_state(junk_total, rng);

    // interleave: slots ordered (a, i_1, m_1, …, i_{N−1}, m_{N−1}, e)
    let mut layout = vec![d];
    for &m in junk_dims {
        layout.push(d * m);
    }
    layout.push(env_dim);
    let total: usize = layout.iter().product();
    let mut amps = CVector::from_element(total, ZERO);
    for (ri, ra) in reference.amplitudes().iter().enumerate() {
        if ra.norm() == 0.0 {
            continue;
        }
        let r = crate::states::digits(ri, d, n);
        for (xi_idx, xa) in xi.amplitudes().iter().enumerate() {
            let mut rest = xi_idx;
            let e = rest % env_dim;
            rest /= env_dim;
            let mut ms = vec![0; n - 1];
            for j in (0..n - 1).rev() {
                ms[j] = rest % junk_dims[j];
                rest /= junk_dims[j];
            }
            let mut idx = r[0];
            for j in 0..n - 1 {
                idx = idx * (d * junk_dims[j]) + r[j + 1] * junk_dims[j] + ms[j];
            }
            idx = idx * env_dim + e;
            amps[idx] = ra * xa;
        }
    }
    for (j, u) in unitaries.iter().enumerate() {
        amps = apply_local_unchecked(&amps, &layout, j + 1, u);
    }
    Ok(ScrambledInstance {
        scenario,
        state: StateVector::normalized(amps)?,
        unitaries,
        junk_dims: junk_dims.to_vec(),
        env_dim,
    })
}

/// Dense form of `⊗_j U_j` on the untrusted parties, identity on the
/// trusted party; handy for small checks.
pub fn extraction_operator(d: usize, unitaries: &[CMatrix]) -> Result<CMatrix> {
    let mut factors = vec![identity(d)];
    factors.extend(unitaries.iter().cloned());
    kron(&factors)
}
