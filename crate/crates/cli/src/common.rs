use std::fs::File;
use std::path::Path;

use anyhow::{bail, Context, Result};
use msm_mediate::dataset::{read_records, validate, CovariateSpec, ValidatedDataset};
use msm_mediate::effects::CovariateProfile;
use msm_mediate::study::MethodId;

pub fn init_threads(threads: Option<usize>) -> Result<()> {
    if let Some(t) = threads {
        if t == 0 {
            bail!("--threads must be at least 1");
        }
        rayon::ThreadPoolBuilder::new().num_threads(t).build_global().context("configuring the thread pool")?;
    }
    Ok(())
}

pub fn load_dataset(path: &Path) -> Result<ValidatedDataset> {
    let file = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    let records = read_records(file).with_context(|| format!("reading {}", path.display()))?;
    validate(records).with_context(|| format!("validating {}", path.display()))
}

/// The covariate specification from a TOML file, or main effects of every
/// column with `T + A:T` in the 1→2 transition.
pub fn load_spec(path: Option<&Path>, ds: &ValidatedDataset) -> Result<CovariateSpec> {
    let spec = match path {
        Some(p) => {
            let text = std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            CovariateSpec::from_toml_str(&text).with_context(|| format!("parsing {}", p.display()))?
        }
        None => CovariateSpec::main_effects(ds.n_confounders()),
    };
    spec.check_dataset(ds).context("covariate specification does not match the dataset")?;
    Ok(spec)
}

/// Lower median of the observed X levels.
pub fn median_x(ds: &ValidatedDataset) -> i64 {
    let mut xs: Vec<i64> = ds.records().iter().map(|r| r.x).collect();
    xs.sort_unstable();
    xs[(xs.len() - 1) / 2]
}

pub fn column_means(ds: &ValidatedDataset) -> Vec<f64> {
    let n = ds.len() as f64;
    (0..ds.n_confounders()).map(|j| ds.records().iter().map(|r| r.c[j]).sum::<f64>() / n).collect()
}

pub fn profile(ds: &ValidatedDataset, x: Option<i64>, c: Option<&str>) -> Result<CovariateProfile> {
    let x = x.unwrap_or_else(|| median_x(ds));
    let c = match c {
        None => column_means(ds),
        Some(text) => {
            let c = crate::config::parse_list(text, "confounder value", |s| s.parse::<f64>().ok())?;
            if c.len() != ds.n_confounders() {
                bail!("--profile-c has {} values but the dataset has {} confounders", c.len(), ds.n_confounders());
            }
            c
        }
    };
    Ok(CovariateProfile::new(0, x, c))
}

pub fn parse_methods(text: &str) -> Result<Vec<MethodId>> {
    let methods = crate::config::parse_list(text, "method", MethodId::parse)?;
    if methods.is_empty() {
        bail!("no method given");
    }
    Ok(methods)
}

pub fn check_level(level: f64) -> Result<()> {
    if !(level > 0.0 && level < 1.0) {
        bail!("confidence level {level} is not in (0, 1)");
    }
    Ok(())
}

pub fn na(v: Option<f64>) -> String {
    v.map_or("NA".to_string(), |v| v.to_string())
}
