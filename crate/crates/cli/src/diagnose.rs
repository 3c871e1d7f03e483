//! Conditioning of the extended data matrix under common preprocessing.

use std::fmt;
use std::path::Path;

use precond_core::linalg::{
    condition_number, extend, feature_moments, min_max_normalize, row_equilibrate, standardize,
};
use precond_core::optim::theoretical_rate;
use precond_core::Matrix;

use crate::data::{generate_synthetic, load_csv, SyntheticSpec};
use crate::error::CliResult;

#[derive(Debug, Clone)]
pub struct DiagnoseRow {
    pub name: &'static str,
    /// `κ(X_e X_eᵀ)`; `None` when singular.
    pub kappa: Option<f64>,
    pub rate: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct DiagnoseReport {
    pub features: usize,
    pub samples: usize,
    pub rows: Vec<DiagnoseRow>,
}

impl DiagnoseReport {
    pub fn kappa(&self, name: &str) -> Option<f64> {
        self.rows
            .iter()
            .find(|r| r.name == name)
            .and_then(|r| r.kappa)
    }

    /// Whether centering did not worsen conditioning; `None` if either side is singular.
    pub fn centering_holds(&self) -> Option<bool> {
        Some(self.kappa("centered")? <= self.kappa("raw")? * (1.0 + 1e-12))
    }
}

impl fmt::Display for DiagnoseReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "data: {} features, {} samples",
            self.features, self.samples
        )?;
        writeln!(
            f,
            "{:<14} {:>14} {:>12}",
            "transform", "kappa(XeXe^T)", "gd rate"
        )?;
        for r in &self.rows {
            let kappa = r
                .kappa
                .map_or("singular".to_string(), |k| format!("{k:.6e}"));
            let rate = r.rate.map_or("-".to_string(), |x| format!("{x:.8}"));
            writeln!(f, "{:<14} {:>14} {:>12}", r.name, kappa, rate)?;
        }
        let verdict = match self.centering_holds() {
            Some(true) => "holds",
            Some(false) => "VIOLATED",
            None => "not applicable",
        };
        writeln!(
            f,
            "centering inequality kappa(centered) <= kappa(raw): {verdict}"
        )
    }
}

/// `κ` of `X_e X_eᵀ` for raw, centered, standardized, min-max normalized and
/// row-equilibrated data, with the gradient-descent rate each implies.
pub fn diagnose(x: &Matrix) -> CliResult<DiagnoseReport> {
    let (mean, _) = feature_moments(x);
    let centered = Matrix::from_fn(x.rows(), x.cols(), |i, j| x[(i, j)] - mean[i]);
    let raw_e = extend(x)?;
    let equilibrated = row_equilibrate(&raw_e, 1.0)
        .ok()
        .map(|d| d.matmul(&raw_e).expect("diagonal matches rows"));
    let variants: [(&'static str, Option<Matrix>); 5] = [
        ("raw", Some(raw_e.clone())),
        ("centered", Some(extend(&centered)?)),
        ("standardized", Some(extend(&standardize(x).data)?)),
        ("min-max", Some(extend(&min_max_normalize(x))?)),
        ("equilibrated", equilibrated),
    ];
    let rows = variants
        .into_iter()
        .map(|(name, m)| {
            let kappa = m.and_then(|m| condition_number(&m.gram_rows()).ok());
            DiagnoseRow {
                name,
                kappa,
                rate: kappa.and_then(|k| theoretical_rate(k).ok()),
            }
        })
        .collect();
    Ok(DiagnoseReport {
        features: x.rows(),
        samples: x.cols(),
        rows,
    })
}

/// `synthetic:<spec>` or a CSV path; target columns are left out of the features.
pub fn cmd_diagnose(
    source: &str,
    targets: &[String],
    seed: Option<u64>,
) -> CliResult<DiagnoseReport> {
    let data = match source
        .strip_prefix("synthetic:")
        .or((source == "synthetic").then_some(""))
    {
        Some(spec) => {
            let mut spec = SyntheticSpec::parse(spec, 0)?;
            if let Some(s) = seed {
                spec.seed = s;
            }
            generate_synthetic(&spec)?
        }
        None => load_csv(Path::new(source), targets)?,
    };
    diagnose(data.inputs())
}
