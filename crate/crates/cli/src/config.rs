//! Flat key-value experiment configuration with dotted keys.
//!
//! Lines are `key = value`; `#` starts a comment. List-valued keys take
//! comma-separated entries. Unknown keys are schema violations.

use std::path::Path;

use espim_core::{
    Distribution, ElemFormat, EnergyCoeffs, Error, FeatureFlags, GeometryConfig, RefreshConfig,
    Result, TimingConfig,
};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Workload {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
}

/// Named LLaMA-7B layer shapes.
pub fn resolve_layer(name: &str) -> Option<(usize, usize)> {
    match name {
        "attention.wk" | "attention.wo" | "attention.wq" | "attention.wv" => Some((4096, 4096)),
        "feed_forward.w1" | "feed_forward.w3" => Some((11008, 4096)),
        "feed_forward.w2" => Some((4096, 11008)),
        _ => None,
    }
}

#[derive(Debug, Clone)]
pub struct ExperimentConfig {
    pub workloads: Vec<Workload>,
    pub format: ElemFormat,
    pub dist: Distribution,
    pub seed: u64,
    pub sparsity: Vec<f64>,
    pub flags: Vec<FeatureFlags>,
    pub fifo_depth: Vec<usize>,
    pub banks: Vec<usize>,
    pub geometry: GeometryConfig,
    pub timing: TimingConfig,
    pub energy: EnergyCoeffs,
    pub activation_overhead_cycles: u64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            workloads: vec![],
            format: ElemFormat::Bf16,
            dist: Distribution::Uniform { lo: -1.0, hi: 1.0 },
            seed: 1,
            sparsity: vec![0.9],
            flags: vec![FeatureFlags::default()],
            fifo_depth: vec![8],
            banks: vec![16],
            geometry: GeometryConfig::default(),
            timing: TimingConfig::default(),
            energy: EnergyCoeffs::default(),
            activation_overhead_cycles: 0,
        }
    }
}

impl ExperimentConfig {
    /// First element of every axis: the single-run parameters.
    pub fn single_flags(&self) -> FeatureFlags {
        FeatureFlags {
            fifo_depth: self.fifo_depth[0],
            ..self.flags[0]
        }
    }

    pub fn single_geometry(&self) -> GeometryConfig {
        GeometryConfig {
            num_banks: self.banks[0],
            ..self.geometry
        }
    }

    pub fn workload(&self) -> &Workload {
        &self.workloads[0]
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = ExperimentConfig::default();
        let mut layer_names: Vec<String> = Vec::new();
        let mut custom_rows: Option<usize> = None;
        let mut custom_cols: Option<usize> = None;
        let mut lo = -1.0f64;
        let mut hi = 1.0f64;
        let mut mu = 0.0f64;
        let mut sigma = 1.0f64;
        let mut dist_name = String::from("uniform");
        let mut refresh_interval = 0u64;
        let mut refresh_penalty = 0u64;

        for (idx, raw) in text.lines().enumerate() {
            let lineno = idx + 1;
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::parse(lineno, line, "expected `key = value`"))?;
            let key = key.trim();
            let value = value.trim();
            let int = |v: &str| -> Result<u64> {
                v.parse()
                    .map_err(|_| Error::parse(lineno, v, "expected integer"))
            };
            let float = |v: &str| -> Result<f64> {
                v.parse()
                    .map_err(|_| Error::parse(lineno, v, "expected number"))
            };
            match key {
                "workload.layer" => {
                    layer_names = value.split(',').map(|s| s.trim().to_string()).collect();
                }
                "workload.rows" => custom_rows = Some(int(value)? as usize),
                "workload.cols" => custom_cols = Some(int(value)? as usize),
                "matrix.format" => cfg.format = ElemFormat::parse(value)?,
                "matrix.distribution" => dist_name = value.to_string(),
                "matrix.lo" => lo = float(value)?,
                "matrix.hi" => hi = float(value)?,
                "matrix.mu" => mu = float(value)?,
                "matrix.sigma" => sigma = float(value)?,
                "seed" => cfg.seed = int(value)?,
                "sparsity" => {
                    cfg.sparsity = value
                        .split(',')
                        .map(|s| float(s.trim()))
                        .collect::<Result<_>>()?;
                }
                "flags" => {
                    cfg.flags = value
                        .split(',')
                        .map(|s| FeatureFlags::from_token_string(s.trim(), lineno))
                        .collect::<Result<_>>()?;
                }
                "fifo_depth" => {
                    cfg.fifo_depth = value
                        .split(',')
                        .map(|s| int(s.trim()).map(|x| x as usize))
                        .collect::<Result<_>>()?;
                }
                "banks" => {
                    cfg.banks = value
                        .split(',')
                        .map(|s| int(s.trim()).map(|x| x as usize))
                        .collect::<Result<_>>()?;
                }
                "geometry.macs" => cfg.geometry.macs_per_bank = int(value)? as usize,
                "geometry.rows_per_bank" => cfg.geometry.rows_per_bank = int(value)? as usize,
                "timing.t_ras" => cfg.timing.t_ras = int(value)?,
                "timing.t_rcd" => cfg.timing.t_rcd = int(value)?,
                "timing.t_rrd" => cfg.timing.t_rrd = int(value)?,
                "timing.t_rc" => cfg.timing.t_rc = int(value)?,
                "timing.t_rp" => cfg.timing.t_rp = int(value)?,
                "timing.t_ccd" => cfg.timing.t_ccd = int(value)?,
                "timing.t_rtp" => cfg.timing.t_rtp = int(value)?,
                "timing.t_wtr" => cfg.timing.t_wtr = int(value)?,
                "timing.refresh.interval" => refresh_interval = int(value)?,
                "timing.refresh.penalty" => refresh_penalty = int(value)?,
                "energy.a_access" => cfg.energy.a_access = float(value)?,
                "energy.c_compute_dense" => cfg.energy.c_compute_dense = float(value)?,
                "energy.e_io" => cfg.energy.e_io = float(value)?,
                "energy.r_rest" => cfg.energy.r_rest = float(value)?,
                "activation_overhead_cycles" => cfg.activation_overhead_cycles = int(value)?,
                other => {
                    return Err(Error::parse(lineno, other, "unknown configuration key"));
                }
            }
        }

        cfg.dist = match dist_name.as_str() {
            "uniform" => Distribution::Uniform { lo, hi },
            "normal" => Distribution::Normal { mu, sigma },
            other => {
                return Err(Error::invalid(format!(
                    "unknown distribution {other:?} (expected uniform or normal)"
                )))
            }
        };
        if refresh_interval > 0 {
            cfg.timing.refresh = Some(RefreshConfig {
                interval: refresh_interval,
                penalty: refresh_penalty,
            });
        }

        if layer_names.is_empty() {
            layer_names.push("custom".to_string());
        }
        for name in layer_names {
            let (rows, cols) = if name == "custom" {
                match (custom_rows, custom_cols) {
                    (Some(r), Some(c)) => (r, c),
                    _ => {
                        return Err(Error::invalid(
                            "custom workload needs workload.rows and workload.cols",
                        ))
                    }
                }
            } else {
                resolve_layer(&name).ok_or_else(|| {
                    Error::invalid(format!(
                        "unknown layer {name:?}; known layers: attention.wk/wo/wq/wv, \
                         feed_forward.w1/w2/w3, or `custom` with workload.rows/cols"
                    ))
                })?
            };
            cfg.workloads.push(Workload { name, rows, cols });
        }

        cfg.validate()?;
        Ok(cfg)
    }

    fn validate(&self) -> Result<()> {
        if self.workloads.is_empty()
            || self.sparsity.is_empty()
            || self.flags.is_empty()
            || self.fifo_depth.is_empty()
            || self.banks.is_empty()
        {
            return Err(Error::invalid("axis lists must be non-empty"));
        }
        for &s in &self.sparsity {
            if !(0.0..1.0).contains(&s) {
                return Err(Error::invalid(format!("sparsity {s} outside [0, 1)")));
            }
        }
        for &d in &self.fifo_depth {
            if d < 1 {
                return Err(Error::invalid("fifo_depth entries must be at least 1"));
            }
        }
        for &b in &self.banks {
            if b < 1 {
                return Err(Error::invalid("banks entries must be at least 1"));
            }
        }
        self.geometry.validate()?;
        self.timing.validate()?;
        self.energy.validate()?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_defaults_and_lists() {
        let cfg = ExperimentConfig::parse(
            "workload.layer = attention.wk\n\
             sparsity = 0.5, 0.7, 0.9\n\
             fifo_depth = 2,4,8,16\n\
             flags = base+switch4, prefetch+switch4\n",
        )
        .unwrap();
        assert_eq!(cfg.workload().rows, 4096);
        assert_eq!(cfg.sparsity.len(), 3);
        assert_eq!(cfg.fifo_depth, vec![2, 4, 8, 16]);
        assert!(!cfg.flags[0].prefetch && cfg.flags[1].prefetch);
    }

    #[test]
    fn unknown_layer_is_schema_error() {
        let err = ExperimentConfig::parse("workload.layer = attention.bogus\n").unwrap_err();
        assert!(err.to_string().contains("unknown layer"));
    }

    #[test]
    fn unknown_key_is_schema_error() {
        assert!(ExperimentConfig::parse("workload.layr = attention.wk\n").is_err());
    }

    #[test]
    fn custom_workload_needs_shape() {
        assert!(ExperimentConfig::parse("workload.layer = custom\n").is_err());
        let cfg = ExperimentConfig::parse(
            "workload.layer = custom\nworkload.rows = 128\nworkload.cols = 256\n",
        )
        .unwrap();
        assert_eq!((cfg.workload().rows, cfg.workload().cols), (128, 256));
    }

    #[test]
    fn layer_shapes() {
        assert_eq!(resolve_layer("feed_forward.w1"), Some((11008, 4096)));
        assert_eq!(resolve_layer("feed_forward.w2"), Some((4096, 11008)));
        assert_eq!(resolve_layer("attention.wv"), Some((4096, 4096)));
    }
}
