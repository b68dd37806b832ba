use clap::Parser;
use oukl_core::linalg::Mat;
use std::path::PathBuf;
use std::str::FromStr;
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ConfigError {
    #[error("unknown flag or key: {0}")]
    UnknownFlag(String),
    #[error("malformed matrix {0:?}: {1}")]
    MalformedMatrix(String, String),
    #[error("conflicting options: {0}")]
    ConflictingOptions(String),
    #[error("invalid value for {0}: {1}")]
    InvalidValue(String, String),
    #[error("missing option: {0}")]
    Missing(String),
    #[error("could not read config file {0}: {1}")]
    Io(String, String),
    /// `--help` or `--version`; the text is ready to print.
    #[error("{0}")]
    Info(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Experiment {
    Verify,
    KernelEval,
    SemigroupCheck,
    TubeMeasure,
    WeakType,
    Enhanced,
    Sharpness,
    CoveringSim,
}

impl Experiment {
    pub const ALL: [Experiment; 8] = [
        Experiment::Verify,
        Experiment::KernelEval,
        Experiment::SemigroupCheck,
        Experiment::TubeMeasure,
        Experiment::WeakType,
        Experiment::Enhanced,
        Experiment::Sharpness,
        Experiment::CoveringSim,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Experiment::Verify => "verify",
            Experiment::KernelEval => "kernel-eval",
            Experiment::SemigroupCheck => "semigroup-check",
            Experiment::TubeMeasure => "tube-measure",
            Experiment::WeakType => "weak-type",
            Experiment::Enhanced => "enhanced",
            Experiment::Sharpness => "sharpness",
            Experiment::CoveringSim => "covering-sim",
        }
    }
}

impl FromStr for Experiment {
    type Err = ConfigError;
    fn from_str(s: &str) -> Result<Self, ConfigError> {
        Experiment::ALL
            .into_iter()
            .find(|e| e.name() == s)
            .ok_or_else(|| ConfigError::InvalidValue("experiment".into(), s.into()))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum ModelSpec {
    Preset(String),
    Inline { q: Mat, b: Mat },
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub model: ModelSpec,
    pub experiment: Experiment,
    pub seed: u64,
    pub out: Option<PathBuf>,
    pub alpha_min: Option<f64>,
    pub alpha_max: Option<f64>,
    pub t_max: Option<f64>,
    /// Level-set cells per axis.
    pub resolution: Option<usize>,
    pub a: Option<f64>,
    pub m: u32,
}

impl RunConfig {
    pub fn build_model(&self) -> oukl_core::Result<oukl_core::Model> {
        match &self.model {
            ModelSpec::Preset(name) => oukl_core::Model::preset(name)
                .ok_or_else(|| oukl_core::Error::InvalidArgument(format!("unknown preset {name}"))),
            ModelSpec::Inline { q, b } => oukl_core::build_model(q.clone(), b.clone()),
        }
    }

    /// Effective configuration as `key = value` pairs.
    pub fn echo(&self) -> Vec<(String, String)> {
        let mut out = Vec::new();
        match &self.model {
            ModelSpec::Preset(p) => out.push(("preset".into(), p.clone())),
            ModelSpec::Inline { q, b } => {
                out.push(("Q".into(), format_matrix(q)));
                out.push(("B".into(), format_matrix(b)));
            }
        }
        out.push(("experiment".into(), self.experiment.name().into()));
        out.push(("seed".into(), self.seed.to_string()));
        let opt = |v: Option<String>| v.unwrap_or_else(|| "default".into());
        out.push(("alpha-min".into(), opt(self.alpha_min.map(|v| format!("{v:e}")))));
        out.push(("alpha-max".into(), opt(self.alpha_max.map(|v| format!("{v:e}")))));
        out.push(("t-max".into(), opt(self.t_max.map(|v| v.to_string()))));
        out.push(("resolution".into(), opt(self.resolution.map(|v| v.to_string()))));
        out.push(("A".into(), opt(self.a.map(|v| v.to_string()))));
        out.push(("m".into(), self.m.to_string()));
        out
    }
}

pub fn format_matrix(m: &Mat) -> String {
    (0..m.nrows())
        .map(|i| (0..m.ncols()).map(|j| m[(i, j)].to_string()).collect::<Vec<_>>().join(","))
        .collect::<Vec<_>>()
        .join(";")
}

/// Rows separated by `;`, entries by `,`.
pub fn parse_matrix(s: &str) -> Result<Mat, ConfigError> {
    let bad = |why: &str| ConfigError::MalformedMatrix(s.to_string(), why.to_string());
    let rows: Vec<Vec<f64>> = s
        .split(';')
        .map(|r| r.split(',').map(|v| v.trim().parse::<f64>().map_err(|_| bad("non-numeric entry"))).collect())
        .collect::<Result<_, _>>()?;
    let n = rows.len();
    if n == 0 || rows.iter().any(|r| r.len() != n) {
        return Err(bad("not square"));
    }
    if rows.iter().flatten().any(|v| !v.is_finite()) {
        return Err(bad("non-finite entry"));
    }
    Ok(Mat::from_fn(n, n, |i, j| rows[i][j]))
}

#[derive(Debug, Parser, Default)]
#[command(name = "oukl", version, about = "Inverse Ornstein-Uhlenbeck kernel and maximal-function experiments")]
struct Flags {
    /// Named model: salogni1d, isotropic2d, nonnormal2d, isotropic3d.
    #[arg(long)]
    preset: Option<String>,
    /// Diffusion matrix, rows separated by ';'.
    #[arg(long = "Q", allow_hyphen_values = true)]
    q: Option<String>,
    /// Drift matrix, rows separated by ';'.
    #[arg(long = "B", allow_hyphen_values = true)]
    b: Option<String>,
    #[arg(long)]
    experiment: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long = "alpha-min")]
    alpha_min: Option<f64>,
    #[arg(long = "alpha-max")]
    alpha_max: Option<f64>,
    #[arg(long = "t-max")]
    t_max: Option<f64>,
    #[arg(long)]
    resolution: Option<usize>,
    #[arg(long = "A")]
    a: Option<f64>,
    #[arg(long)]
    m: Option<u32>,
    /// Config file of `key = value` lines.
    #[arg(long)]
    config: Option<PathBuf>,
}

fn parse_value<T: FromStr>(key: &str, v: &str) -> Result<T, ConfigError> {
    v.trim().parse().map_err(|_| ConfigError::InvalidValue(key.into(), v.into()))
}

/// Fills unset flags from the config file text.
fn merge_file(flags: &mut Flags, text: &str) -> Result<(), ConfigError> {
    for line in text.lines() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| ConfigError::InvalidValue("config line".into(), line.into()))?;
        let (k, v) = (k.trim(), v.trim().to_string());
        match k {
            "preset" => flags.preset = flags.preset.take().or(Some(v)),
            "Q" => flags.q = flags.q.take().or(Some(v)),
            "B" => flags.b = flags.b.take().or(Some(v)),
            "experiment" => flags.experiment = flags.experiment.take().or(Some(v)),
            "seed" => flags.seed = flags.seed.or(Some(parse_value(k, &v)?)),
            "out" => flags.out = flags.out.take().or(Some(PathBuf::from(v))),
            "alpha-min" => flags.alpha_min = flags.alpha_min.or(Some(parse_value(k, &v)?)),
            "alpha-max" => flags.alpha_max = flags.alpha_max.or(Some(parse_value(k, &v)?)),
            "t-max" => flags.t_max = flags.t_max.or(Some(parse_value(k, &v)?)),
            "resolution" => flags.resolution = flags.resolution.or(Some(parse_value(k, &v)?)),
            "A" => flags.a = flags.a.or(Some(parse_value(k, &v)?)),
            "m" => flags.m = flags.m.or(Some(parse_value(k, &v)?)),
            other => return Err(ConfigError::UnknownFlag(other.into())),
        }
    }
    Ok(())
}

fn parse_flags(args: &[String]) -> Result<Flags, ConfigError> {
    use clap::error::ErrorKind;
    let argv = std::iter::once("oukl".to_string()).chain(args.iter().cloned());
    Flags::try_parse_from(argv).map_err(|e| match e.kind() {
        ErrorKind::UnknownArgument => {
            let flag = e
                .get(clap::error::ContextKind::InvalidArg)
                .map(|v| v.to_string())
                .unwrap_or_else(|| "?".into());
            ConfigError::UnknownFlag(flag)
        }
        ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => ConfigError::Info(e.to_string()),
        _ => ConfigError::InvalidValue("arguments".into(), e.to_string().lines().next().unwrap_or("").into()),
    })
}

/// Flags override values from `file`; unknown keys are rejected in both.
pub fn parse_config(args: &[String], file: Option<&str>) -> Result<RunConfig, ConfigError> {
    let mut flags = parse_flags(args)?;
    if let Some(text) = file {
        merge_file(&mut flags, text)?;
    }
    finish(flags)
}

/// Like [`parse_config`], reading the file named by `--config` if present.
pub fn parse_args(args: &[String]) -> Result<RunConfig, ConfigError> {
    let flags = parse_flags(args)?;
    let text = match &flags.config {
        Some(p) => Some(std::fs::read_to_string(p).map_err(|e| ConfigError::Io(p.display().to_string(), e.to_string()))?),
        None => None,
    };
    parse_config(args, text.as_deref())
}

fn finish(flags: Flags) -> Result<RunConfig, ConfigError> {
    let model = match (flags.preset, flags.q, flags.b) {
        (Some(_), Some(_), _) | (Some(_), _, Some(_)) => {
            return Err(ConfigError::ConflictingOptions("--preset cannot be combined with --Q/--B".into()))
        }
        (Some(p), None, None) => ModelSpec::Preset(p),
        (None, Some(q), Some(b)) => {
            let (q, b) = (parse_matrix(&q)?, parse_matrix(&b)?);
            if q.nrows() != b.nrows() {
                return Err(ConfigError::MalformedMatrix(format_matrix(&b), "size differs from Q".into()));
            }
            ModelSpec::Inline { q, b }
        }
        (None, Some(_), None) | (None, None, Some(_)) => {
            return Err(ConfigError::Missing("--Q and --B must be given together".into()))
        }
        (None, None, None) => return Err(ConfigError::Missing("--preset or --Q/--B".into())),
    };
    let experiment = flags
        .experiment
        .ok_or_else(|| ConfigError::Missing("--experiment".into()))?
        .parse()?;
    let positive = |k: &str, v: Option<f64>| match v {
        Some(x) if !(x > 0.0 && x.is_finite()) => Err(ConfigError::InvalidValue(k.into(), x.to_string())),
        _ => Ok(v),
    };
    let alpha_min = positive("alpha-min", flags.alpha_min)?;
    let alpha_max = positive("alpha-max", flags.alpha_max)?;
    if let (Some(lo), Some(hi)) = (alpha_min, alpha_max) {
        if lo > hi {
            return Err(ConfigError::ConflictingOptions("--alpha-min exceeds --alpha-max".into()));
        }
    }
    if let Some(r) = flags.resolution {
        if r < 4 || r % 2 != 0 {
            return Err(ConfigError::InvalidValue("resolution".into(), format!("{r} (must be even and >= 4)")));
        }
    }
    Ok(RunConfig {
        model,
        experiment,
        seed: flags.seed.unwrap_or(1),
        out: flags.out,
        alpha_min,
        alpha_max,
        t_max: positive("t-max", flags.t_max)?,
        resolution: flags.resolution,
        a: positive("A", flags.a)?,
        m: flags.m.unwrap_or(0),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn args(s: &[&str]) -> Vec<String> {
        s.iter().map(|a| a.to_string()).collect()
    }

    #[test]
    fn preset_flags() {
        let c = parse_config(&args(&["--preset", "salogni1d", "--experiment", "verify"]), None).unwrap();
        assert_eq!(c.model, ModelSpec::Preset("salogni1d".into()));
        assert_eq!(c.experiment, Experiment::Verify);
        let m = c.build_model().unwrap();
        assert_eq!((m.q[(0, 0)], m.b[(0, 0)]), (1.0, -1.0));
    }

    #[test]
    fn inline_model() {
        let c = parse_config(&args(&["--Q", "2,1;1,2", "--B", "-1,1;0,-2", "--experiment", "kernel-eval"]), None).unwrap();
        match c.model {
            ModelSpec::Inline { q, b } => {
                assert_eq!(q[(0, 1)], 1.0);
                assert_eq!(b[(1, 1)], -2.0);
            }
            _ => panic!("expected inline model"),
        }
    }

    #[test]
    fn malformed_matrix() {
        let e = parse_config(&args(&["--Q", "1,2;3", "--B", "-1", "--experiment", "verify"]), None).unwrap_err();
        assert!(matches!(e, ConfigError::MalformedMatrix(..)));
        let e = parse_config(&args(&["--Q", "1,x;3,4", "--B", "-1,0;0,-1", "--experiment", "verify"]), None).unwrap_err();
        assert!(matches!(e, ConfigError::MalformedMatrix(..)));
    }

    #[test]
    fn unknown_and_conflicting() {
        let e = parse_config(&args(&["--preset", "isotropic2d", "--bogus", "1"]), None).unwrap_err();
        assert!(matches!(e, ConfigError::UnknownFlag(_)));
        let e = parse_config(&args(&["--experiment", "verify"]), Some("preset = isotropic2d\ncolour = red\n")).unwrap_err();
        assert_eq!(e, ConfigError::UnknownFlag("colour".into()));
        let e = parse_config(&args(&["--preset", "isotropic2d", "--Q", "1", "--experiment", "verify"]), None).unwrap_err();
        assert!(matches!(e, ConfigError::ConflictingOptions(_)));
    }

    #[test]
    fn flags_override_file() {
        let file = "# comment\npreset = nonnormal2d\nseed = 9\nexperiment = enhanced  # trailing\nalpha-min = 1e-4\n";
        let c = parse_config(&args(&["--seed", "3"]), Some(file)).unwrap();
        assert_eq!(c.seed, 3);
        assert_eq!(c.experiment, Experiment::Enhanced);
        assert_eq!(c.alpha_min, Some(1e-4));
        assert_eq!(c.model, ModelSpec::Preset("nonnormal2d".into()));
    }
}
