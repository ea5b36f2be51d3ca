//! Run configuration: a flat TOML file with `[domain]`, `[physics]`,
//! repeated `[[stage]]` tables and an optional `[output]` / `[spectral]`
//! section. Presets for the reference setups ship in `presets/`.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::assembly::PhysicsParams;
use crate::error::{Error, Result};
use crate::mesh::{ElementOrder, RectDomain};

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct DomainConfig {
    pub xmin: f64,
    pub xmax: f64,
    pub ymin: f64,
    pub ymax: f64,
    pub n_sub: usize,
}

impl DomainConfig {
    pub fn square(n_sub: usize) -> Self {
        DomainConfig {
            xmin: -1.0,
            xmax: 1.0,
            ymin: -1.0,
            ymax: 1.0,
            n_sub,
        }
    }

    pub fn to_domain(self) -> Result<RectDomain> {
        RectDomain::new(self.xmin, self.xmax, self.ymin, self.ymax, self.n_sub)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum MethodKind {
    A,
    J,
}

/// Spectral shift in a stage table: `shift = "adaptive"` or a number.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ShiftConfig {
    Fixed(f64),
    Named(ShiftName),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ShiftName {
    Adaptive,
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct StageConfig {
    pub method: MethodKind,
    pub order: u8,
    /// Energy-difference threshold ending the stage.
    pub switch_tol: f64,
    pub max_iters: usize,
    /// J stages only; defaults to adaptive.
    #[serde(default)]
    pub shift: Option<ShiftConfig>,
    /// Iterations before an adaptive shift is frozen (default 2).
    #[serde(default)]
    pub freeze_after: Option<usize>,
    /// A stages only: fixed damping instead of the line search.
    #[serde(default)]
    pub tau: Option<f64>,
}

impl StageConfig {
    pub fn a_stage(order: u8, switch_tol: f64, max_iters: usize) -> Self {
        StageConfig {
            method: MethodKind::A,
            order,
            switch_tol,
            max_iters,
            shift: None,
            freeze_after: None,
            tau: None,
        }
    }

    pub fn j_stage(order: u8, switch_tol: f64, max_iters: usize) -> Self {
        StageConfig {
            method: MethodKind::J,
            order,
            switch_tol,
            max_iters,
            shift: Some(ShiftConfig::Named(ShiftName::Adaptive)),
            freeze_after: Some(2),
            tau: None,
        }
    }
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct OutputConfig {
    /// Known converged energy; enables error-vs-reference reporting and the
    /// reference stopping rule of the last stage.
    #[serde(default)]
    pub reference_energy: Option<f64>,
    #[serde(default)]
    pub dir: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct SpectralConfig {
    /// Number of tangent-Hessian eigenvalues to compute.
    #[serde(default = "default_spectral_k")]
    pub k: usize,
}

fn default_spectral_k() -> usize {
    3
}

impl Default for SpectralConfig {
    fn default() -> Self {
        SpectralConfig { k: 3 }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RunConfig {
    pub domain: DomainConfig,
    pub physics: PhysicsParams,
    #[serde(rename = "stage")]
    pub stages: Vec<StageConfig>,
    #[serde(default)]
    pub output: OutputConfig,
    #[serde(default)]
    pub spectral: Option<SpectralConfig>,
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<RunConfig> {
        let cfg: RunConfig =
            toml::from_str(text).map_err(|e| Error::Config(format!("config parse error: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<RunConfig> {
        let text = std::fs::read_to_string(path)?;
        RunConfig::from_toml(&text)
    }

    pub fn validate(&self) -> Result<()> {
        self.domain.to_domain()?;
        self.physics.validate()?;
        if self.stages.is_empty() {
            return Err(Error::Config("at least one stage is required".into()));
        }
        let mut prev_order = 0u8;
        let mut transitions = 0usize;
        for (i, st) in self.stages.iter().enumerate() {
            ElementOrder::from_int(st.order)?;
            if st.order < prev_order {
                return Err(Error::Config(format!(
                    "stage {i}: element order must be non-decreasing"
                )));
            }
            if prev_order != 0 && st.order != prev_order {
                transitions += 1;
            }
            prev_order = st.order;
            if !(st.switch_tol > 0.0) {
                return Err(Error::Config(format!(
                    "stage {i}: switch_tol must be positive"
                )));
            }
            if st.max_iters == 0 {
                return Err(Error::Config(format!("stage {i}: max_iters must be > 0")));
            }
            if let Some(tau) = st.tau {
                if !(tau > 0.0 && tau < 2.0) {
                    return Err(Error::Config(format!(
                        "stage {i}: fixed tau must lie in (0,2)"
                    )));
                }
                if st.method == MethodKind::J {
                    return Err(Error::Config(format!("stage {i}: tau applies to A stages")));
                }
            }
            if st.method == MethodKind::A && st.shift.is_some() {
                return Err(Error::Config(format!("stage {i}: shift applies to J stages")));
            }
        }
        if transitions > 1 {
            return Err(Error::Config(
                "at most one P1 -> P2 interpolation is supported".into(),
            ));
        }
        Ok(())
    }

    /// Parses a compact stage override like `"A1:1e-4,A2:1e-4,J2:1e-12"`.
    /// Each item is a method tag (`A1`, `A2`, `J1`, `J2`) with an optional
    /// `:tolerance`.
    pub fn parse_stage_override(spec: &str) -> Result<Vec<StageConfig>> {
        let mut stages = Vec::new();
        for item in spec.split(',') {
            let item = item.trim();
            if item.is_empty() {
                continue;
            }
            let (tag, tol) = match item.split_once(':') {
                Some((t, tol)) => (
                    t,
                    Some(tol.parse::<f64>().map_err(|_| {
                        Error::Config(format!("bad tolerance in stage override: {item}"))
                    })?),
                ),
                None => (item, None),
            };
            let (method, order) = match tag.to_ascii_uppercase().as_str() {
                "A1" => (MethodKind::A, 1),
                "A2" => (MethodKind::A, 2),
                "J1" => (MethodKind::J, 1),
                "J2" => (MethodKind::J, 2),
                other => {
                    return Err(Error::Config(format!("unknown stage tag: {other}")));
                }
            };
            let stage = match method {
                MethodKind::A => StageConfig::a_stage(order, tol.unwrap_or(1e-4), 10_000),
                MethodKind::J => StageConfig::j_stage(order, tol.unwrap_or(1e-12), 100),
            };
            stages.push(stage);
        }
        if stages.is_empty() {
            return Err(Error::Config("empty stage override".into()));
        }
        Ok(stages)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const SAMPLE: &str = r#"
[domain]
xmin = -1.0
xmax = 1.0
ymin = -1.0
ymax = 1.0
n_sub = 8

[physics]
delta = 0.0
omega = 50.0
k0 = 10.0
beta11 = 10.0
beta12 = 9.0
beta22 = 9.0
potential_shift_enabled = true

[[stage]]
method = "A"
order = 2
switch_tol = 1e-4
max_iters = 500

[[stage]]
method = "J"
order = 2
switch_tol = 1e-12
max_iters = 40
shift = "adaptive"
freeze_after = 2

[output]
reference_energy = 38.2143142275459
"#;

    #[test]
    fn parses_sample_config() {
        let cfg = RunConfig::from_toml(SAMPLE).unwrap();
        assert_eq!(cfg.stages.len(), 2);
        assert_eq!(cfg.stages[0].method, MethodKind::A);
        assert_eq!(
            cfg.stages[1].shift,
            Some(ShiftConfig::Named(ShiftName::Adaptive))
        );
        assert_eq!(cfg.output.reference_energy, Some(38.2143142275459));
    }

    #[test]
    fn rejects_decreasing_order() {
        let bad = SAMPLE.replace("method = \"J\"\norder = 2", "method = \"J\"\norder = 1");
        assert!(RunConfig::from_toml(&bad).is_err());
    }

    #[test]
    fn fixed_shift_parses_as_number() {
        let fixed = SAMPLE.replace("shift = \"adaptive\"", "shift = 78.376");
        let cfg = RunConfig::from_toml(&fixed).unwrap();
        assert_eq!(cfg.stages[1].shift, Some(ShiftConfig::Fixed(78.376)));
    }

    #[test]
    fn stage_override_grammar() {
        let st = RunConfig::parse_stage_override("A1:1e-4,A2:1e-4,J2:1e-12").unwrap();
        assert_eq!(st.len(), 3);
        assert_eq!(st[0].order, 1);
        assert_eq!(st[2].method, MethodKind::J);
        assert!(RunConfig::parse_stage_override("X9").is_err());
    }
}
