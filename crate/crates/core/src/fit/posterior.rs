//! Posterior draws, serialisation and summaries.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::GridSpec;
use crate::grf::{ExpCovParams, LmcParams, Sign};
use crate::kernel::quantile_sorted;

use super::MomentFit;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Univariate,
    Bivariate { sign: Sign },
}

/// Post burn-in acceptance rates and the frozen step sizes.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct AcceptanceLog {
    pub latent: f64,
    pub beta: Vec<f64>,
    pub ridge: Vec<f64>,
    pub params: Vec<f64>,
    pub latent_step: f64,
    pub beta_step: Vec<f64>,
    pub ridge_step: Vec<f64>,
    pub params_step: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PosteriorSamples {
    pub model: ModelKind,
    /// Design column names, intercept first.
    pub covariates: Vec<String>,
    /// Latent components: `["W"]` or `["W1", "W2", "W"]`.
    pub components: Vec<String>,
    pub grid: GridSpec,
    /// `[draw][process][coefficient]`.
    pub beta: Vec<Vec<Vec<f64>>>,
    /// `[draw][component]`.
    pub sigma: Vec<Vec<f64>>,
    pub phi: Vec<Vec<f64>>,
    /// Per-cell posterior mean and sd of each zero-mean component field,
    /// `[component][cell]`.
    pub field_mean: Vec<Vec<f64>>,
    pub field_sd: Vec<Vec<f64>>,
    pub acceptance: AcceptanceLog,
    pub mcm: Vec<MomentFit>,
    /// Prior centre of `log phi` per component.
    pub prior_log_phi: Vec<f64>,
    pub warnings: Vec<String>,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamSummary {
    pub name: String,
    pub median: f64,
    pub lower: f64,
    pub upper: f64,
}

impl ParamSummary {
    pub fn covers(&self, v: f64) -> bool {
        self.lower <= v && v <= self.upper
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PosteriorSummary {
    pub model: ModelKind,
    pub n_draws: usize,
    pub parameters: Vec<ParamSummary>,
    pub acceptance: AcceptanceLog,
    pub mcm: Vec<MomentFit>,
    pub warnings: Vec<String>,
}

impl PosteriorSummary {
    pub fn get(&self, name: &str) -> Option<&ParamSummary> {
        self.parameters.iter().find(|p| p.name == name)
    }
}

/// Median and equal-tailed `level` interval of `vals`.
pub(crate) fn summarize(vals: &[f64], level: f64) -> (f64, f64, f64) {
    let mut v = vals.to_vec();
    v.sort_by(f64::total_cmp);
    let a = (1.0 - level) / 2.0;
    (quantile_sorted(&v, 0.5), quantile_sorted(&v, a), quantile_sorted(&v, 1.0 - a))
}

impl PosteriorSamples {
    pub fn n_draws(&self) -> usize {
        self.sigma.len()
    }

    pub fn n_processes(&self) -> usize {
        match self.model {
            ModelKind::Univariate => 1,
            ModelKind::Bivariate { .. } => 2,
        }
    }

    /// Column names in the CSV layout.
    pub fn param_names(&self) -> Vec<String> {
        let mut names = Vec::new();
        let np = self.n_processes();
        for j in 0..np {
            for c in &self.covariates {
                names.push(if np == 1 { format!("beta:{c}") } else { format!("beta{}:{c}", j + 1) });
            }
        }
        for c in &self.components {
            if self.components.len() == 1 {
                names.push("sigma".into());
                names.push("phi".into());
            } else {
                names.push(format!("sigma_{c}"));
                names.push(format!("phi_{c}"));
            }
        }
        names
    }

    /// Draw `d` flattened in [`Self::param_names`] order.
    pub fn row(&self, d: usize) -> Vec<f64> {
        let mut out: Vec<f64> = self.beta[d].iter().flatten().copied().collect();
        for k in 0..self.components.len() {
            out.push(self.sigma[d][k]);
            out.push(self.phi[d][k]);
        }
        out
    }

    /// All draws of the named parameter.
    pub fn column(&self, name: &str) -> Result<Vec<f64>> {
        let i = self
            .param_names()
            .iter()
            .position(|n| n == name)
            .ok_or_else(|| Error::InvalidParameter(format!("unknown parameter `{name}`")))?;
        Ok((0..self.n_draws()).map(|d| self.row(d)[i]).collect())
    }

    pub fn exp_params(&self, d: usize) -> Result<ExpCovParams> {
        ExpCovParams::new(self.sigma[d][0], self.phi[d][0])
    }

    pub fn lmc_params(&self, d: usize) -> Result<LmcParams> {
        match self.model {
            ModelKind::Bivariate { sign } => LmcParams::new(
                ExpCovParams::new(self.sigma[d][0], self.phi[d][0])?,
                ExpCovParams::new(self.sigma[d][1], self.phi[d][1])?,
                ExpCovParams::new(self.sigma[d][2], self.phi[d][2])?,
                sign,
            ),
            ModelKind::Univariate => Err(Error::InvalidParameter("univariate posterior has no LMC parameters".into())),
        }
    }

    pub fn summary(&self) -> PosteriorSummary {
        let names = self.param_names();
        let rows: Vec<Vec<f64>> = (0..self.n_draws()).map(|d| self.row(d)).collect();
        let parameters = names
            .into_iter()
            .enumerate()
            .map(|(i, name)| {
                let col: Vec<f64> = rows.iter().map(|r| r[i]).collect();
                let (median, lower, upper) = summarize(&col, 0.95);
                ParamSummary {
                    name,
                    median,
                    lower,
                    upper,
                }
            })
            .collect();
        PosteriorSummary {
            model: self.model,
            n_draws: self.n_draws(),
            parameters,
            acceptance: self.acceptance.clone(),
            mcm: self.mcm.clone(),
            warnings: self.warnings.clone(),
        }
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("draw");
        for n in self.param_names() {
            s.push(',');
            s.push_str(&n);
        }
        s.push('\n');
        for d in 0..self.n_draws() {
            let _ = write!(s, "{d}");
            for v in self.row(d) {
                let _ = write!(s, ",{v}");
            }
            s.push('\n');
        }
        s
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }

    pub fn write_json(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = serde_json::to_string(self)?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn read_json(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::geom::Point;

    pub(crate) fn synthetic(model: ModelKind, draws: &[(Vec<Vec<f64>>, Vec<f64>, Vec<f64>)]) -> PosteriorSamples {
        let grid = GridSpec::new(Point::new(0.0, 0.0), 1.0, 1.0, 4, 4).unwrap();
        let components = match model {
            ModelKind::Univariate => vec!["W".to_string()],
            ModelKind::Bivariate { .. } => vec!["W1".into(), "W2".into(), "W".into()],
        };
        PosteriorSamples {
            model,
            covariates: vec!["intercept".into()],
            components,
            grid,
            beta: draws.iter().map(|d| d.0.clone()).collect(),
            sigma: draws.iter().map(|d| d.1.clone()).collect(),
            phi: draws.iter().map(|d| d.2.clone()).collect(),
            field_mean: vec![],
            field_sd: vec![],
            acceptance: AcceptanceLog::default(),
            mcm: vec![],
            prior_log_phi: vec![],
            warnings: vec![],
            seed: 0,
        }
    }

    #[test]
    fn csv_layout_and_summary() {
        let s = synthetic(
            ModelKind::Univariate,
            &[
                (vec![vec![0.1]], vec![1.0], vec![4.0]),
                (vec![vec![0.3]], vec![2.0], vec![5.0]),
                (vec![vec![0.2]], vec![1.5], vec![6.0]),
            ],
        );
        let csv = s.to_csv();
        assert!(csv.starts_with("draw,beta:intercept,sigma,phi\n0,0.1,1,4\n"));
        let sum = s.summary();
        assert_eq!(sum.get("sigma").unwrap().median, 1.5);
        assert_eq!(sum.get("phi").unwrap().median, 5.0);
        assert!(sum.get("beta:intercept").unwrap().covers(0.2));
        assert_eq!(s.column("phi").unwrap(), vec![4.0, 5.0, 6.0]);
    }

    #[test]
    fn bivariate_names() {
        let s = synthetic(
            ModelKind::Bivariate { sign: Sign::Minus },
            &[(vec![vec![0.0], vec![1.0]], vec![1.0, 2.0, 3.0], vec![4.0, 5.0, 6.0])],
        );
        assert_eq!(
            s.param_names(),
            vec!["beta1:intercept", "beta2:intercept", "sigma_W1", "phi_W1", "sigma_W2", "phi_W2", "sigma_W", "phi_W"]
        );
        assert_eq!(s.lmc_params(0).unwrap().w.phi, 6.0);
    }

    #[test]
    fn json_round_trip() {
        let s = synthetic(ModelKind::Univariate, &[(vec![vec![0.1]], vec![1.0], vec![4.0])]);
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("post.json");
        s.write_json(&p).unwrap();
        assert_eq!(PosteriorSamples::read_json(&p).unwrap(), s);
    }
}
