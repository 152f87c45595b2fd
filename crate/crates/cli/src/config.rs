//! Run configuration: JSON file values merged under command-line flags.
//!
//! Every field is optional in both places. A flag wins over the file, and
//! the file wins over the built-in default.

use std::path::{Path, PathBuf};

use serde::Deserialize;
use sqr_core::grad::{GradAlgorithm, GradConfig, LsOption};
use sqr_core::ip::IpConfig;
use sqr_core::select::Criterion;
use sqr_core::solve::Solver;
use sqr_core::{QuantileGrid, SqrError};

/// Grid written either as `start:stop:step` or as a comma list.
#[derive(Clone, Debug, PartialEq, Deserialize)]
#[serde(untagged)]
pub enum GridValue {
    List(Vec<f64>),
    Text(String),
}

impl GridValue {
    pub fn expand(&self) -> Result<QuantileGrid, SqrError> {
        match self {
            GridValue::List(levels) => QuantileGrid::with_unit_weights(levels.clone()),
            GridValue::Text(text) => parse_grid(text),
        }
    }
}

pub fn parse_grid(text: &str) -> Result<QuantileGrid, SqrError> {
    let text = text.trim();
    if text.contains(':') {
        let parts: Vec<f64> = parse_floats(text, ':')?;
        let [start, stop, step] = parts[..] else {
            return Err(SqrError::Config(format!("grid range {text:?} must be start:stop:step")));
        };
        QuantileGrid::from_range(start, stop, step)
    } else {
        QuantileGrid::with_unit_weights(parse_floats(text, ',')?)
    }
}

pub fn parse_floats(text: &str, sep: char) -> Result<Vec<f64>, SqrError> {
    text.split(sep)
        .map(|s| {
            s.trim()
                .parse::<f64>()
                .map_err(|_| SqrError::Config(format!("not a number: {s:?}")))
        })
        .collect()
}

/// Smoothing choice: a fixed spar, an information criterion, or a raw
/// penalty weight `c`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum SparChoice {
    Fixed(f64),
    Auto(Criterion),
    Penalty(f64),
}

impl std::str::FromStr for SparChoice {
    type Err = SqrError;

    fn from_str(s: &str) -> Result<Self, SqrError> {
        if let Ok(v) = s.trim().parse::<f64>() {
            return Ok(SparChoice::Fixed(v));
        }
        s.parse::<Criterion>().map(SparChoice::Auto)
    }
}

#[derive(Clone, Debug, PartialEq, Deserialize)]
#[serde(untagged)]
pub enum SparValue {
    Number(f64),
    Text(String),
}

impl SparValue {
    pub fn choice(&self) -> Result<SparChoice, SqrError> {
        match self {
            SparValue::Number(v) => Ok(SparChoice::Fixed(*v)),
            SparValue::Text(t) => t.parse(),
        }
    }
}

/// Solver section of the JSON file.
#[derive(Clone, Debug, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverFile {
    pub method: Option<String>,
    pub max_iter: Option<usize>,
    pub gap_tol: Option<f64>,
    pub step0: Option<f64>,
    pub ls_option: Option<String>,
}

/// Contents of `--config file.json`.
#[derive(Clone, Debug, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub input: Option<PathBuf>,
    pub response: Option<String>,
    pub regressors: Option<Vec<String>>,
    pub intercept: Option<bool>,
    pub column: Option<String>,
    pub grid: Option<GridValue>,
    pub spar: Option<SparValue>,
    pub c: Option<f64>,
    pub spar_grid: Option<Vec<f64>>,
    pub nknots: Option<usize>,
    pub method: Option<String>,
    pub solver: Option<SolverFile>,
    pub out: Option<PathBuf>,
    pub seed: Option<u64>,
    pub threads: Option<usize>,
    pub n: Option<usize>,
    pub runs: Option<usize>,
    pub burn_in: Option<usize>,
    pub model: Option<String>,
    pub replicate: Option<u64>,
    pub peaks: Option<usize>,
    pub scale: Option<f64>,
    pub center: Option<bool>,
    pub checkpoints: Option<Vec<usize>>,
}

impl FileConfig {
    pub fn load(path: &Path) -> Result<Self, SqrError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| SqrError::Config(format!("cannot read {}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| SqrError::Config(format!("{}: {e}", path.display())))
    }
}

/// Solver flags before merging.
#[derive(Clone, Debug, Default)]
pub struct SolverFlags {
    pub method: Option<String>,
    pub max_iter: Option<usize>,
    pub gap_tol: Option<f64>,
    pub step0: Option<f64>,
    pub ls_option: Option<String>,
}

pub fn build_solver(flags: &SolverFlags, file: Option<&SolverFile>) -> Result<Solver, SqrError> {
    let file = file.cloned().unwrap_or_default();
    let method = flags.method.clone().or(file.method).unwrap_or_else(|| "ip".into());
    let max_iter = flags.max_iter.or(file.max_iter);
    if method.eq_ignore_ascii_case("ip") {
        let mut cfg = IpConfig::default();
        if let Some(m) = max_iter {
            cfg.max_iter = m;
        }
        if let Some(t) = flags.gap_tol.or(file.gap_tol) {
            cfg.gap_tol = t;
        }
        cfg.validate()?;
        return Ok(Solver::InteriorPoint(cfg));
    }
    let algorithm: GradAlgorithm = method.parse()?;
    let mut cfg = GradConfig::with_algorithm(algorithm);
    if let Some(m) = max_iter {
        cfg.max_iter = m;
    }
    if let Some(s) = flags.step0.or(file.step0) {
        cfg.step0 = s;
    }
    if let Some(o) = flags.ls_option.clone().or(file.ls_option) {
        cfg.ls_option = o.parse::<LsOption>()?;
    }
    cfg.validate()?;
    Ok(Solver::Gradient(cfg))
}

/// Flag value, else file value, else default.
pub fn pick<T>(flag: Option<T>, file: Option<T>, default: T) -> T {
    flag.or(file).unwrap_or(default)
}

pub fn require<T>(flag: Option<T>, file: Option<T>, what: &str) -> Result<T, SqrError> {
    flag.or(file)
        .ok_or_else(|| SqrError::Config(format!("missing required setting `{what}`")))
}

/// Default quantile grid `0.05, 0.06, ..., 0.95`.
pub const DEFAULT_GRID: &str = "0.05:0.95:0.01";

pub fn resolve_grid(flag: Option<&str>, file: Option<&GridValue>, default: &str) -> Result<QuantileGrid, SqrError> {
    match (flag, file) {
        (Some(text), _) => parse_grid(text),
        (None, Some(g)) => g.expand(),
        (None, None) => parse_grid(default),
    }
}

pub fn resolve_spar(
    spar_flag: Option<SparChoice>,
    c_flag: Option<f64>,
    file: &FileConfig,
    default: SparChoice,
) -> Result<SparChoice, SqrError> {
    if spar_flag.is_some() && c_flag.is_some() {
        return Err(SqrError::Config("give either --spar or --c, not both".into()));
    }
    if let Some(c) = c_flag {
        return penalty(c);
    }
    if let Some(s) = spar_flag {
        return Ok(s);
    }
    match (&file.spar, file.c) {
        (Some(_), Some(_)) => Err(SqrError::Config("config sets both `spar` and `c`".into())),
        (Some(s), None) => s.choice(),
        (None, Some(c)) => penalty(c),
        (None, None) => Ok(default),
    }
}

fn penalty(c: f64) -> Result<SparChoice, SqrError> {
    if c.is_finite() && c >= 0.0 {
        Ok(SparChoice::Penalty(c))
    } else {
        Err(SqrError::Config(format!("penalty c must be finite and >= 0, got {c}")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_forms() {
        let g = parse_grid("0.02:0.98:0.01").unwrap();
        assert_eq!(g.len(), 97);
        let g = parse_grid("0.1, 0.5,0.9").unwrap();
        assert_eq!(g.levels(), &[0.1, 0.5, 0.9]);
        assert!(parse_grid("0.1:0.9").is_err());
        assert!(parse_grid("a,b").is_err());
    }

    #[test]
    fn spar_forms() {
        assert_eq!("0.5".parse::<SparChoice>().unwrap(), SparChoice::Fixed(0.5));
        assert_eq!("BIC".parse::<SparChoice>().unwrap(), SparChoice::Auto(Criterion::Bic));
        assert!("gcv".parse::<SparChoice>().is_err());
    }

    #[test]
    fn flags_beat_file_beat_defaults() {
        let file: FileConfig = serde_json::from_str(r#"{"spar": "aic", "grid": [0.25, 0.75], "seed": 9}"#).unwrap();
        assert_eq!(
            resolve_spar(None, None, &file, SparChoice::Auto(Criterion::Bic)).unwrap(),
            SparChoice::Auto(Criterion::Aic)
        );
        assert_eq!(
            resolve_spar(Some(SparChoice::Fixed(1.0)), None, &file, SparChoice::Fixed(0.0)).unwrap(),
            SparChoice::Fixed(1.0)
        );
        assert_eq!(resolve_grid(None, file.grid.as_ref(), DEFAULT_GRID).unwrap().len(), 2);
        assert_eq!(resolve_grid(Some("0.5"), file.grid.as_ref(), DEFAULT_GRID).unwrap().len(), 1);
        assert_eq!(resolve_grid(None, None, DEFAULT_GRID).unwrap().len(), 91);
        assert_eq!(pick(None, file.seed, 1), 9);
        assert_eq!(pick(Some(3), file.seed, 1), 3);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(serde_json::from_str::<FileConfig>(r#"{"sparr": 1}"#).is_err());
    }

    #[test]
    fn solver_selection() {
        let ip = build_solver(&SolverFlags::default(), None).unwrap();
        assert!(matches!(ip, Solver::InteriorPoint(_)));
        let file = SolverFile {
            method: Some("grad".into()),
            ls_option: Some("iii".into()),
            ..SolverFile::default()
        };
        let flags = SolverFlags {
            max_iter: Some(20),
            ..SolverFlags::default()
        };
        match build_solver(&flags, Some(&file)).unwrap() {
            Solver::Gradient(cfg) => {
                assert_eq!(cfg.algorithm, GradAlgorithm::Grad);
                assert_eq!(cfg.ls_option, LsOption::Iii);
                assert_eq!(cfg.max_iter, 20);
            }
            other => panic!("{other:?}"),
        }
        let bad = SolverFlags {
            method: Some("simplex".into()),
            ..SolverFlags::default()
        };
        assert!(build_solver(&bad, None).is_err());
    }
}
