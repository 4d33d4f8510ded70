//! JSON formats for scenarios and states.
//!
//! Matrices and vectors are written as nested `[re, im]` pairs.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{CMatrix, CVector, DensityMatrix, StateVector, C64};
use crate::operators::{Family, FamilyParams, Scenario};
use crate::states::{Multigraph, SchmidtParams, WParams};

pub type MatrixJson = Vec<Vec<[f64; 2]>>;

pub fn matrix_from_json(rows: &MatrixJson) -> Result<CMatrix> {
    let n = rows.len();
    if n == 0 || rows.iter().any(|r| r.len() != rows[0].len()) {
        return Err(Error::InvalidParams("matrix rows must be non-empty and of equal length".into()));
    }
    let m = rows[0].len();
    Ok(CMatrix::from_fn(n, m, |i, j| C64::new(rows[i][j][0], rows[i][j][1])))
}

pub fn matrix_to_json(m: &CMatrix) -> MatrixJson {
    (0..m.nrows()).map(|i| (0..m.ncols()).map(|j| [m[(i, j)].re, m[(i, j)].im]).collect()).collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum BobObservables {
    Keyword(String),
    Explicit(Vec<[MatrixJson; 2]>),
}

impl Default for BobObservables {
    fn default() -> Self {
        BobObservables::Keyword("ideal".into())
    }
}

/// On-disk scenario description.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioFile {
    pub family: Family,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub graph: Option<Multigraph>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub d: Option<usize>,
    #[serde(rename = "N", default, skip_serializing_if = "Option::is_none")]
    pub n: Option<usize>,
    #[serde(default)]
    pub bob_observables: BobObservables,
}

/// A scenario file resolved into family parameters and observables.
#[derive(Clone, Debug)]
pub struct LoadedScenario {
    pub params: FamilyParams,
    pub scenario: Scenario,
    pub ideal: bool,
}

fn check_field(name: &str, given: Option<usize>, actual: usize) -> Result<()> {
    match given {
        Some(g) if g != actual => {
            Err(Error::InvalidParams(format!("\"{name}\" is {g} but the family fixes it to {actual}")))
        }
        _ => Ok(()),
    }
}

impl ScenarioFile {
    /// Resolves family parameters. Amplitudes are normalized on load.
    pub fn params(&self) -> Result<FamilyParams> {
        match self.family {
            Family::Graph => {
                let g =
                    self.graph.clone().ok_or_else(|| Error::InvalidParams("graph scenario needs \"graph\"".into()))?;
                check_field("d", self.d, g.d())?;
                check_field("N", self.n, g.n_vertices())?;
                if self.alpha.is_some() {
                    return Err(Error::InvalidParams("graph scenario takes no \"alpha\"".into()));
                }
                Ok(FamilyParams::Graph(g))
            }
            Family::Schmidt => {
                let n = self.n.ok_or_else(|| Error::InvalidParams("schmidt scenario needs \"N\"".into()))?;
                let p = match &self.alpha {
                    Some(a) => {
                        check_field("d", self.d, a.len())?;
                        SchmidtParams::normalized(a.len(), n, a)?
                    }
                    None => {
                        let d = self
                            .d
                            .ok_or_else(|| Error::InvalidParams("schmidt scenario needs \"d\" or \"alpha\"".into()))?;
                        SchmidtParams::equal(d, n)?
                    }
                };
                Ok(FamilyParams::Schmidt(p))
            }
            Family::W => {
                check_field("d", self.d, 2)?;
                let p = match &self.alpha {
                    Some(a) => {
                        check_field("N", self.n, a.len())?;
                        WParams::normalized(a)?
                    }
                    None => {
                        let n =
                            self.n.ok_or_else(|| Error::InvalidParams("w scenario needs \"N\" or \"alpha\"".into()))?;
                        WParams::equal(n)?
                    }
                };
                Ok(FamilyParams::W(p))
            }
        }
    }

    pub fn resolve(&self) -> Result<LoadedScenario> {
        let params = self.params()?;
        let ideal = Scenario::ideal(&params)?;
        let (scenario, is_ideal) = match &self.bob_observables {
            BobObservables::Keyword(k) if k == "ideal" => (ideal, true),
            BobObservables::Keyword(k) => {
                return Err(Error::InvalidParams(format!("unknown bob_observables keyword {k:?}")));
            }
            BobObservables::Explicit(pairs) => {
                if pairs.len() != params.n_parties() - 1 {
                    return Err(Error::InvalidParams(format!(
                        "expected {} observable pairs, got {}",
                        params.n_parties() - 1,
                        pairs.len()
                    )));
                }
                let bobs = pairs
                    .iter()
                    .map(|[a, b]| Ok([matrix_from_json(a)?, matrix_from_json(b)?]))
                    .collect::<Result<Vec<_>>>()?;
                (Scenario::new(params.d(), ideal.observables(0).clone(), bobs)?, false)
            }
        };
        Ok(LoadedScenario { params, scenario, ideal: is_ideal })
    }
}

pub fn parse_scenario(text: &str) -> Result<ScenarioFile> {
    Ok(serde_json::from_str(text)?)
}

pub fn load_scenario(path: &Path) -> Result<ScenarioFile> {
    parse_scenario(&std::fs::read_to_string(path)?)
}

/// On-disk state: either `amplitudes` (pure) or `density` (mixed).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StateFile {
    pub dims: Vec<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub amplitudes: Option<Vec<[f64; 2]>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub density: Option<MatrixJson>,
}

#[derive(Clone, Debug, PartialEq)]
pub enum LoadedState {
    Pure(StateVector),
    Mixed(DensityMatrix),
}

impl StateFile {
    pub fn pure(dims: Vec<usize>, psi: &StateVector) -> Self {
        let amplitudes = psi.amplitudes().iter().map(|z| [z.re, z.im]).collect();
        StateFile { dims, amplitudes: Some(amplitudes), density: None }
    }

    pub fn resolve(&self) -> Result<LoadedState> {
        if self.dims.is_empty() || self.dims.contains(&0) {
            return Err(Error::InvalidDimension(0));
        }
        let total: usize = self.dims.iter().product();
        match (&self.amplitudes, &self.density) {
            (Some(a), None) => {
                if a.len() != total {
                    return Err(Error::DimensionMismatch(format!("{} amplitudes for dims {:?}", a.len(), self.dims)));
                }
                let v = CVector::from_iterator(a.len(), a.iter().map(|z| C64::new(z[0], z[1])));
                Ok(LoadedState::Pure(StateVector::new(v)?))
            }
            (None, Some(m)) => {
                let m = matrix_from_json(m)?;
                if m.nrows() != total {
                    return Err(Error::DimensionMismatch(format!(
                        "density of size {} for dims {:?}",
                        m.nrows(),
                        self.dims
                    )));
                }
                Ok(LoadedState::Mixed(DensityMatrix::new(m)?))
            }
            _ => Err(Error::InvalidState("exactly one of \"amplitudes\" or \"density\" is required".into())),
        }
    }
}

pub fn load_state(path: &Path) -> Result<StateFile> {
    Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
}
