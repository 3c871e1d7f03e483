//! Synthetic data generation and CSV ingestion.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use precond_core::{Dataset, Matrix, SplitMix64};

use crate::config::split_list;
use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Task {
    /// `y = w·x̃ + b + noise`.
    Linear,
    /// `y ~ Bernoulli(sigmoid(w·x̃ + b))`.
    Logistic,
}

impl FromStr for Task {
    type Err = CliError;

    fn from_str(s: &str) -> CliResult<Self> {
        match s {
            "linear" => Ok(Task::Linear),
            "logistic" => Ok(Task::Logistic),
            other => Err(CliError::validation(format!("unknown task '{other}'"))),
        }
    }
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Task::Linear => "linear",
            Task::Logistic => "logistic",
        })
    }
}

/// Gaussian features with per-feature mean and standard deviation, and
/// targets from random ground-truth weights.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSpec {
    pub features: usize,
    pub samples: usize,
    pub scales: Vec<f64>,
    pub means: Vec<f64>,
    pub noise: f64,
    pub task: Task,
    pub seed: u64,
}

impl SyntheticSpec {
    /// Unit scales, zero means, noise 0.1, linear targets.
    pub fn new(features: usize, samples: usize, seed: u64) -> Self {
        Self {
            features,
            samples,
            scales: vec![1.0; features],
            means: vec![0.0; features],
            noise: 0.1,
            task: Task::Linear,
            seed,
        }
    }

    /// Parses `features=3,samples=200,scales=1;1000,...`, the part after
    /// `synthetic:` on the command line. Lists inside use `;`.
    pub fn parse(s: &str, default_seed: u64) -> CliResult<Self> {
        let mut features = None;
        let mut samples = 100;
        let mut scales = None;
        let mut means = None;
        let mut noise = 0.1;
        let mut task = Task::Linear;
        let mut seed = default_seed;
        for item in s.split(',').map(str::trim).filter(|s| !s.is_empty()) {
            let (k, v) = item
                .split_once('=')
                .ok_or_else(|| CliError::validation(format!("expected key=value, got '{item}'")))?;
            let bad = |what: &str| CliError::validation(format!("synthetic {k}: bad {what} '{v}'"));
            match k.trim() {
                "features" => features = Some(v.parse().map_err(|_| bad("integer"))?),
                "samples" => samples = v.parse().map_err(|_| bad("integer"))?,
                "scales" => scales = Some(parse_floats(v).map_err(|_| bad("list"))?),
                "means" => means = Some(parse_floats(v).map_err(|_| bad("list"))?),
                "noise" => noise = v.parse().map_err(|_| bad("number"))?,
                "task" => task = v.parse()?,
                "seed" => seed = v.parse().map_err(|_| bad("integer"))?,
                other => {
                    return Err(CliError::validation(format!(
                        "unknown synthetic key '{other}'"
                    )))
                }
            }
        }
        let features = features
            .or(scales.as_ref().map(Vec::len))
            .or(means.as_ref().map(Vec::len))
            .unwrap_or(3);
        let mut spec = Self::new(features, samples, seed);
        spec.scales = scales.unwrap_or(spec.scales);
        spec.means = means.unwrap_or(spec.means);
        spec.noise = noise;
        spec.task = task;
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> CliResult<()> {
        if self.features == 0 || self.samples == 0 {
            return Err(CliError::validation(
                "synthetic data needs features >= 1 and samples >= 1",
            ));
        }
        if self.scales.len() != self.features || self.means.len() != self.features {
            return Err(CliError::validation(format!(
                "synthetic data has {} features but {} scales and {} means",
                self.features,
                self.scales.len(),
                self.means.len()
            )));
        }
        if self.scales.iter().any(|&s| !(s > 0.0 && s.is_finite())) {
            return Err(CliError::validation("synthetic scales must be positive"));
        }
        if self.means.iter().any(|m| !m.is_finite()) {
            return Err(CliError::validation("synthetic means must be finite"));
        }
        if !(self.noise >= 0.0 && self.noise.is_finite()) {
            return Err(CliError::validation("synthetic noise must be >= 0"));
        }
        Ok(())
    }
}

fn parse_floats(v: &str) -> Result<Vec<f64>, std::num::ParseFloatError> {
    split_list(v).map(str::parse).collect()
}

/// Draws the dataset described by `spec`.
///
/// Features are drawn sample by sample, then one ground-truth weight per
/// standardized feature and a bias, then the target noise. The same spec
/// always gives the same bits.
pub fn generate_synthetic(spec: &SyntheticSpec) -> CliResult<Dataset> {
    spec.validate()?;
    let (n, big_n) = (spec.features, spec.samples);
    let mut rng = SplitMix64::new(spec.seed);
    let mut x = Matrix::zeros(n, big_n);
    for j in 0..big_n {
        for i in 0..n {
            let v = spec.means[i] + spec.scales[i] * rng.normal();
            x.row_mut(i)[j] = v;
        }
    }
    let w = rng.normal_vec(n);
    let b = rng.normal();
    let y = Matrix::from_fn(1, big_n, |_, j| {
        let z = b
            + (0..n)
                .map(|i| w[i] * (x[(i, j)] - spec.means[i]) / spec.scales[i])
                .sum::<f64>();
        match spec.task {
            Task::Linear => z + spec.noise * rng.normal(),
            Task::Logistic => {
                if rng.uniform() < 1.0 / (1.0 + (-z).exp()) {
                    1.0
                } else {
                    0.0
                }
            }
        }
    });
    Ok(Dataset::new(x, y)?)
}

/// Reads a CSV file with a header row. `targets` names target columns by
/// header or by 0-based index; every other column is a feature.
pub fn load_csv(path: &Path, targets: &[String]) -> CliResult<Dataset> {
    let file = std::fs::File::open(path)
        .map_err(|e| CliError::Ingestion(format!("{}: {e}", path.display())))?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(file);
    let header: Vec<String> = reader
        .headers()
        .map_err(|e| CliError::Ingestion(format!("{}: header: {e}", path.display())))?
        .iter()
        .map(str::to_string)
        .collect();
    if header.is_empty() || header.iter().all(String::is_empty) {
        return Err(CliError::Ingestion(format!(
            "{}: missing header row",
            path.display()
        )));
    }

    let mut target_idx = Vec::with_capacity(targets.len());
    for t in targets {
        let idx = header
            .iter()
            .position(|h| h == t)
            .or_else(|| t.parse::<usize>().ok().filter(|&i| i < header.len()))
            .ok_or_else(|| {
                CliError::Ingestion(format!("{}: no target column '{t}'", path.display()))
            })?;
        if target_idx.contains(&idx) {
            return Err(CliError::Ingestion(format!(
                "{}: target column '{t}' listed twice",
                path.display()
            )));
        }
        target_idx.push(idx);
    }
    let feature_idx: Vec<usize> = (0..header.len())
        .filter(|i| !target_idx.contains(i))
        .collect();
    if feature_idx.is_empty() {
        return Err(CliError::Ingestion(format!(
            "{}: no feature columns left",
            path.display()
        )));
    }

    let mut columns: Vec<Vec<f64>> = vec![Vec::new(); header.len()];
    for record in reader.records() {
        let record = record.map_err(|e| CliError::Ingestion(format!("{}: {e}", path.display())))?;
        let row = record.position().map(|p| p.line()).unwrap_or(0);
        if record.len() != header.len() {
            return Err(CliError::Ingestion(format!(
                "{}: row {row}: expected {} fields, found {}",
                path.display(),
                header.len(),
                record.len()
            )));
        }
        for (c, cell) in record.iter().enumerate() {
            let v: f64 = cell
                .parse()
                .ok()
                .filter(|v: &f64| v.is_finite())
                .ok_or_else(|| {
                    CliError::Ingestion(format!(
                        "{}: row {row}, column {} ('{}'): '{cell}' is not a finite number",
                        path.display(),
                        c + 1,
                        header[c]
                    ))
                })?;
            columns[c].push(v);
        }
    }
    let big_n = columns[0].len();
    if big_n == 0 {
        return Err(CliError::Ingestion(format!(
            "{}: no data rows",
            path.display()
        )));
    }
    let x = Matrix::from_fn(feature_idx.len(), big_n, |i, j| columns[feature_idx[i]][j]);
    let y = Matrix::from_fn(target_idx.len(), big_n, |i, j| columns[target_idx[i]][j]);
    Ok(Dataset::new(x, y)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use precond_core::linalg::{condition_number, extend, feature_moments};
    use precond_core::matrix::norm;
    use std::io::Write;

    #[test]
    fn scales_are_respected() {
        let mut spec = SyntheticSpec::new(3, 2000, 5);
        spec.scales = vec![1.0, 10.0, 100.0];
        spec.means = vec![0.0, 5.0, -5.0];
        let d = generate_synthetic(&spec).unwrap();
        let (_, std) = feature_moments(d.inputs());
        for (s, target) in std.iter().zip(&spec.scales) {
            assert!((s / target - 1.0).abs() < 0.2);
        }
    }

    #[test]
    fn unit_scales_give_comparable_rows() {
        let d = generate_synthetic(&SyntheticSpec::new(4, 500, 1)).unwrap();
        let xe = extend(d.inputs()).unwrap();
        let norms: Vec<f64> = (0..xe.rows()).map(|i| norm(xe.row(i))).collect();
        let max = norms.iter().cloned().fold(0.0, f64::max);
        let min = norms.iter().cloned().fold(f64::INFINITY, f64::min);
        assert!(max / min <= 2.0);
    }

    #[test]
    fn disparate_scales_are_ill_conditioned() {
        let mut spec = SyntheticSpec::new(2, 200, 2);
        spec.scales = vec![1.0, 1000.0];
        let d = generate_synthetic(&spec).unwrap();
        let xe = extend(d.inputs()).unwrap();
        assert!(condition_number(&xe.gram_rows()).unwrap() > 1e4);
    }

    #[test]
    fn same_seed_same_bits() {
        let spec =
            SyntheticSpec::parse("features=3,samples=50,scales=1;2;3,task=logistic,seed=4", 0)
                .unwrap();
        let a = generate_synthetic(&spec).unwrap();
        let b = generate_synthetic(&spec).unwrap();
        assert_eq!(a, b);
        assert!(a.targets().as_slice().iter().all(|&y| y == 0.0 || y == 1.0));
        let mut other = spec.clone();
        other.seed = 5;
        assert_ne!(generate_synthetic(&other).unwrap(), a);
    }

    #[test]
    fn synthetic_parse_errors() {
        assert!(SyntheticSpec::parse("features=2,scales=1;2;3", 0).is_err());
        assert!(SyntheticSpec::parse("bogus=1", 0).is_err());
        assert!(SyntheticSpec::parse("scales=1;-1", 0).is_err());
        assert_eq!(SyntheticSpec::parse("scales=1;5", 0).unwrap().features, 2);
    }

    fn write(contents: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(contents.as_bytes()).unwrap();
        f
    }

    #[test]
    fn loads_named_and_indexed_targets() {
        let f = write("a,b,y\n1,2,3\n4,5,6\n");
        let d = load_csv(f.path(), &["y".into()]).unwrap();
        assert_eq!(d.inputs().as_slice(), &[1.0, 4.0, 2.0, 5.0]);
        assert_eq!(d.targets().as_slice(), &[3.0, 6.0]);
        let d = load_csv(f.path(), &["0".into()]).unwrap();
        assert_eq!(d.targets().as_slice(), &[1.0, 4.0]);
        let d = load_csv(f.path(), &[]).unwrap();
        assert_eq!(d.features(), 3);
    }

    #[test]
    fn ingestion_errors_carry_context() {
        let f = write("a,b\n1,2\n3\n");
        let err = load_csv(f.path(), &[]).unwrap_err().to_string();
        assert!(err.contains("row 3"), "{err}");
        let f = write("a,b\n1,2\n3,x\n");
        let err = load_csv(f.path(), &[]).unwrap_err().to_string();
        assert!(err.contains("row 3, column 2 ('b')"), "{err}");
        let f = write("a,b\n1,nan\n");
        assert!(load_csv(f.path(), &[]).is_err());
        let err = load_csv(Path::new("/no/such/file.csv"), &[]).unwrap_err();
        assert_eq!(err.exit_code(), 1);
        let f = write("a,b\n1,2\n");
        assert!(load_csv(f.path(), &["z".into()]).is_err());
        assert!(load_csv(f.path(), &["a".into(), "b".into()]).is_err());
        let f = write("a,b\n");
        assert!(load_csv(f.path(), &[]).is_err());
    }
}
