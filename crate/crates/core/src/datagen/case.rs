use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::{ks_initial_profile, solve_hopf_surrogate, solve_ks, HopfSettings, KsSettings, ParamPoint, Trajectory};
use crate::{Error, Result};

/// Which system a dataset comes from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Case {
    Ks,
    Hopf,
}

impl Case {
    /// The single parameter each case is swept over.
    pub fn param_name(self) -> &'static str {
        match self {
            Case::Ks => "ks_nu",
            Case::Hopf => "mu",
        }
    }
}

impl fmt::Display for Case {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Case::Ks => "ks",
            Case::Hopf => "hopf",
        })
    }
}

impl FromStr for Case {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ks" => Ok(Case::Ks),
            "hopf" => Ok(Case::Hopf),
            other => Err(Error::Config(format!("unknown case {other:?}, expected ks or hopf"))),
        }
    }
}

/// A solver with fixed settings, queried by parameter point.
#[derive(Debug, Clone, PartialEq)]
pub struct Generator {
    pub case: Case,
    pub ks: KsSettings,
    pub hopf: HopfSettings,
}

impl Generator {
    pub fn new(case: Case) -> Self {
        Self {
            case,
            ks: KsSettings::default(),
            hopf: HopfSettings::default(),
        }
    }

    pub fn point(&self, value: f64) -> ParamPoint {
        ParamPoint::single(self.case.param_name(), value)
    }

    pub fn generate(&self, xi: &ParamPoint) -> Result<Trajectory> {
        let name = self.case.param_name();
        let value = match (xi.len(), xi.get(name)) {
            (1, Some(v)) => v,
            _ => {
                return Err(Error::InvalidInput(format!(
                    "{} data is parametrised by {name} alone, got {xi}",
                    self.case
                )))
            }
        };
        match self.case {
            Case::Ks => {
                let s = &self.ks;
                let init = ks_initial_profile(s.n_x, s.domain_length, s.init_amplitude, s.init_seed);
                solve_ks(value, s, &init)
            }
            Case::Hopf => solve_hopf_surrogate(value, &self.hopf).map(|s| s.trajectory),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn case_names_round_trip() {
        for c in [Case::Ks, Case::Hopf] {
            assert_eq!(c.to_string().parse::<Case>().unwrap(), c);
        }
        assert!("cylinder".parse::<Case>().is_err());
    }

    #[test]
    fn generator_checks_the_parameter_name() {
        let g = Generator::new(Case::Hopf);
        assert!(g.generate(&ParamPoint::single("ks_nu", 1.0)).is_err());
        let t = g.generate(&g.point(0.2)).unwrap();
        assert_eq!(t.param, g.point(0.2));
        assert_eq!(t.n_t(), g.hopf.n_t);
    }
}
