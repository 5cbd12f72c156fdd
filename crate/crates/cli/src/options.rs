use std::path::{Path, PathBuf};

use bdd_core::bandwidth::{BandwidthRule, RotScale, DEFAULT_EXPONENT};
use bdd_core::inference::DEFAULT_BAND_DRAWS;
use bdd_core::io::Precision;
use bdd_core::simulation::{DEFAULT_GRID_EXTENT, DEFAULT_GRID_SIZE};
use bdd_core::{Error, FitConfig, Kernel, Result};
use clap::Args;
use serde::Deserialize;

/// Flags shared by every subcommand. Each may also come from `--config`;
/// flags given on the command line win.
#[derive(Args, Clone, Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields, rename_all = "kebab-case")]
pub struct Options {
    /// JSON file with default values for any of these flags.
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,

    /// Kernel: uniform, triangular or epanechnikov.
    #[arg(long)]
    pub kernel: Option<Kernel>,

    /// Local polynomial order.
    #[arg(long)]
    pub p: Option<usize>,

    /// Bandwidth for the fixed rule (and for bias-oracle).
    #[arg(long)]
    pub h: Option<f64>,

    /// Bandwidth rule: fixed, rot, mse or kink.
    #[arg(long)]
    pub bw_rule: Option<String>,

    /// Rule-of-thumb multiplier.
    #[arg(long)]
    pub c0: Option<f64>,

    /// Rule-of-thumb rate exponent.
    #[arg(long)]
    pub bw_exponent: Option<f64>,

    /// Rule-of-thumb constant: pilot or boundary-sd.
    #[arg(long)]
    pub rot_scale: Option<RotScale>,

    /// Significance level.
    #[arg(long)]
    pub alpha: Option<f64>,

    /// Gaussian draws for the uniform band quantile.
    #[arg(long)]
    pub band_draws: Option<usize>,

    #[arg(long)]
    pub seed: Option<u64>,

    /// Number of evaluation points on the boundary.
    #[arg(long)]
    pub grid_size: Option<usize>,

    /// Output CSV path (stdout when absent).
    #[arg(long)]
    pub out: Option<PathBuf>,

    /// Number formatting: human (6 significant digits) or full.
    #[arg(long)]
    pub precision: Option<Precision>,

    // estimate
    /// Dataset CSV with columns y, x1, x2.
    #[arg(long)]
    pub data: Option<PathBuf>,

    /// Boundary JSON.
    #[arg(long)]
    pub boundary: Option<PathBuf>,

    /// Write the covariance matrix of the grid estimates to this CSV.
    #[arg(long)]
    pub dump_cov: Option<PathBuf>,

    // simulate
    /// Sample size per replication.
    #[arg(long)]
    pub n: Option<usize>,

    /// Monte Carlo replications.
    #[arg(long)]
    pub reps: Option<usize>,

    /// Arc-length from the kink covered by the simulation grid on each arm.
    #[arg(long)]
    pub grid_extent: Option<f64>,

    /// Write per-replication results to this CSV.
    #[arg(long)]
    pub reps_out: Option<PathBuf>,

    // bias-oracle
    /// Offsets: comma-separated values, or `start:stop:count`.
    #[arg(long)]
    pub s_grid: Option<String>,
}

macro_rules! fill {
    ($self:ident, $other:ident; $($field:ident),*) => {
        $( if $self.$field.is_none() { $self.$field = $other.$field; } )*
    };
}

impl Options {
    /// Fills unset flags from the config file, if one was given.
    pub fn resolve(mut self) -> Result<Self> {
        let Some(path) = self.config.clone() else {
            return Ok(self);
        };
        let file = read_config(&path)?;
        fill!(self, file; kernel, p, h, bw_rule, c0, bw_exponent, rot_scale, alpha, band_draws, seed,
            grid_size, out, precision, data, boundary, dump_cov, n, reps, grid_extent, reps_out, s_grid);
        Ok(self)
    }

    pub fn kernel(&self) -> Kernel {
        self.kernel.unwrap_or_default()
    }

    pub fn p(&self) -> usize {
        self.p.unwrap_or(1)
    }

    pub fn seed(&self) -> u64 {
        self.seed.unwrap_or(0)
    }

    pub fn precision(&self) -> Precision {
        self.precision.unwrap_or_default()
    }

    pub fn grid_size(&self) -> usize {
        self.grid_size.unwrap_or(DEFAULT_GRID_SIZE)
    }

    pub fn grid_extent(&self) -> f64 {
        self.grid_extent.unwrap_or(DEFAULT_GRID_EXTENT)
    }

    pub fn bandwidth(&self) -> Result<BandwidthRule> {
        BandwidthRule::from_parts(
            self.bw_rule.as_deref().unwrap_or("rot"),
            self.h,
            self.c0.unwrap_or(1.0),
            self.bw_exponent.unwrap_or(DEFAULT_EXPONENT),
            self.rot_scale.unwrap_or_default(),
        )
    }

    pub fn fit_config(&self) -> Result<FitConfig> {
        Ok(FitConfig {
            kernel: self.kernel(),
            p: self.p(),
            alpha: self.alpha.unwrap_or(0.05),
            band_draws: self.band_draws.unwrap_or(DEFAULT_BAND_DRAWS),
            bandwidth: self.bandwidth()?,
            ..FitConfig::default()
        })
    }

    pub fn require<'a, T>(value: &'a Option<T>, flag: &str) -> Result<&'a T> {
        value
            .as_ref()
            .ok_or_else(|| Error::InvalidInput(format!("missing required flag --{flag}")))
    }
}

fn read_config(path: &Path) -> Result<Options> {
    let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    Ok(serde_json::from_str(&text)?)
}

/// Parses `a,b,c` or `start:stop:count`.
pub fn parse_s_grid(spec: &str) -> Result<Vec<f64>> {
    let bad = || Error::InvalidInput(format!("cannot parse s grid `{spec}`"));
    let parts: Vec<&str> = spec.split(':').collect();
    match parts.as_slice() {
        [start, stop, count] => {
            let start: f64 = start.trim().parse().map_err(|_| bad())?;
            let stop: f64 = stop.trim().parse().map_err(|_| bad())?;
            let count: usize = count.trim().parse().map_err(|_| bad())?;
            if count == 0 {
                return Err(bad());
            }
            if count == 1 {
                return Ok(vec![start]);
            }
            Ok((0..count)
                .map(|k| start + (stop - start) * k as f64 / (count - 1) as f64)
                .collect())
        }
        [list] => list
            .split(',')
            .map(|v| v.trim().parse::<f64>().map_err(|_| bad()))
            .collect(),
        _ => Err(bad()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn s_grid_forms() {
        assert_eq!(parse_s_grid("0:1:5").unwrap(), vec![0.0, 0.25, 0.5, 0.75, 1.0]);
        assert_eq!(parse_s_grid("0.1, 0.2").unwrap(), vec![0.1, 0.2]);
        assert!(parse_s_grid("a:b").is_err());
        assert!(parse_s_grid("0:1:0").is_err());
    }

    #[test]
    fn config_fills_unset_flags_only() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cfg.json");
        std::fs::write(&path, r#"{"p": 2, "alpha": 0.1, "kernel": "uniform"}"#).unwrap();
        let opts = Options {
            config: Some(path),
            p: Some(0),
            ..Options::default()
        }
        .resolve()
        .unwrap();
        assert_eq!(opts.p, Some(0));
        assert_eq!(opts.alpha, Some(0.1));
        assert_eq!(opts.kernel, Some(Kernel::Uniform));
    }

    #[test]
    fn unknown_config_keys_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cfg.json");
        std::fs::write(&path, r#"{"bandwith": 1}"#).unwrap();
        let err = Options {
            config: Some(path),
            ..Options::default()
        }
        .resolve()
        .unwrap_err();
        assert!(matches!(err, Error::Json(_)));
    }
}
