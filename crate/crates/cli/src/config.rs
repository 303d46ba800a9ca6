//! Solver configuration: a flat TOML file whose keys can be overridden by flags.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use mlm_core::harness::PerturbationMode;
use mlm_core::{CostConstants, DiscreteMeasure, Interval, SeparableCost, SolveOptions, TargetBox};
use serde::{Deserialize, Serialize};

/// Keys accepted in a config file; every key is optional.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawConfig {
    pub cost: Option<String>,
    pub nu: Option<PathBuf>,
    pub a: Option<f64>,
    pub omega: Option<f64>,
    pub cp: Option<f64>,
    pub p_min: Option<f64>,
    pub p_r: Option<f64>,
    pub kappa: Option<f64>,
    pub eps0: Option<f64>,
    pub eps1: Option<f64>,
    pub b_lo: Option<f64>,
    pub b_hi: Option<f64>,
    pub z_lo: Option<f64>,
    pub z_hi: Option<f64>,
    pub theta_lo: Option<f64>,
    pub theta_hi: Option<f64>,
    pub tol: Option<f64>,
    pub duality_tol: Option<f64>,
    pub max_iter: Option<usize>,
    pub ns: Option<usize>,
    pub out: Option<PathBuf>,
    pub seed: Option<u64>,
    pub svg: Option<bool>,
    pub trace: Option<bool>,
    pub deltas: Option<Vec<f64>>,
    pub mode: Option<String>,
    pub k: Option<usize>,
    pub mesh_m: Option<usize>,
    pub samples: Option<usize>,
}

impl RawConfig {
    /// Reads a config file; a relative `nu` path is taken relative to the file.
    pub fn from_path(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        let mut raw: RawConfig = toml::from_str(&text).with_context(|| format!("parsing config {}", path.display()))?;
        if let (Some(nu), Some(dir)) = (&raw.nu, path.parent()) {
            if nu.is_relative() {
                raw.nu = Some(dir.join(nu));
            }
        }
        Ok(raw)
    }

    /// Keys set in `other` replace those in `self`.
    pub fn merge(mut self, other: RawConfig) -> Self {
        macro_rules! take {
            ($($f:ident),*) => { $( if other.$f.is_some() { self.$f = other.$f; } )* };
        }
        take!(
            cost, nu, a, omega, cp, p_min, p_r, kappa, eps0, eps1, b_lo, b_hi, z_lo, z_hi, theta_lo, theta_hi, tol,
            duality_tol, max_iter, ns, out, seed, svg, trace, deltas, mode, k, mesh_m, samples
        );
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum CostChoice {
    Mlm,
    Sg2d,
}

/// Fully resolved configuration, echoed into every report.
///
/// The output directory is left out of the echo so that runs written to
/// different directories produce identical files.
#[derive(Debug, Clone, Serialize)]
pub struct SolveConfig {
    pub cost: CostChoice,
    pub nu: PathBuf,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub constants: Option<CostConstants>,
    pub b_lo: f64,
    pub b_hi: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub eps0: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub eps1: Option<f64>,
    pub z_lo: f64,
    pub z_hi: f64,
    pub theta_lo: f64,
    pub theta_hi: f64,
    pub tol: f64,
    pub duality_tol: f64,
    pub max_iter: usize,
    pub ns: usize,
    #[serde(skip)]
    pub out: PathBuf,
    pub seed: u64,
    pub svg: bool,
    pub trace: bool,
    pub deltas: Vec<f64>,
    pub mode: PerturbationMode,
    pub k: usize,
    pub mesh_m: usize,
    pub samples: usize,
}

impl SolveConfig {
    /// Applies defaults, loads `ν` and checks every field.
    pub fn resolve(raw: RawConfig) -> Result<(Self, DiscreteMeasure)> {
        let cost = match raw.cost.as_deref().unwrap_or("mlm") {
            "mlm" => CostChoice::Mlm,
            "sg2d" => CostChoice::Sg2d,
            other => bail!("unknown cost {other:?} (expected mlm or sg2d)"),
        };
        let Some(nu_path) = raw.nu else { bail!("no target measure given (use --nu or the nu key)") };
        let nu = DiscreteMeasure::load_path(&nu_path).with_context(|| format!("loading {}", nu_path.display()))?;
        let bbox = nu.bounding_box()?;

        let (constants, eps0, eps1, b_lo, b_hi) = match cost {
            CostChoice::Mlm => {
                if raw.b_lo.is_some() || raw.b_hi.is_some() {
                    bail!("b_lo/b_hi apply to the sg2d cost; use eps0/eps1 for mlm");
                }
                let e = CostConstants::earth();
                let c = CostConstants {
                    a: raw.a.unwrap_or(e.a),
                    omega: raw.omega.unwrap_or(e.omega),
                    cp: raw.cp.unwrap_or(e.cp),
                    p_min: raw.p_min.unwrap_or(e.p_min),
                    p_r: raw.p_r.unwrap_or(e.p_r),
                    kappa: raw.kappa.unwrap_or(e.kappa),
                };
                c.validate()?;
                let eps0 = raw.eps0.unwrap_or(0.05);
                let eps1 = raw.eps1.unwrap_or(0.05);
                (Some(c), Some(eps0), Some(eps1), eps0, 1.0 - eps1)
            }
            CostChoice::Sg2d => {
                let mlm_only = [raw.a, raw.omega, raw.cp, raw.p_min, raw.p_r, raw.kappa, raw.eps0, raw.eps1];
                if mlm_only.iter().any(Option::is_some) {
                    bail!("physical constants and eps0/eps1 apply to the mlm cost only");
                }
                (None, None, None, raw.b_lo.unwrap_or(0.0), raw.b_hi.unwrap_or(1.0))
            }
        };

        let mode = match raw.mode.as_deref() {
            None => PerturbationMode::Mass,
            Some(m) => m.parse()?,
        };
        let config = SolveConfig {
            cost,
            nu: nu_path,
            constants,
            b_lo,
            b_hi,
            eps0,
            eps1,
            z_lo: raw.z_lo.unwrap_or(bbox.z.lo),
            z_hi: raw.z_hi.unwrap_or(bbox.z.hi),
            theta_lo: raw.theta_lo.unwrap_or(bbox.theta.lo),
            theta_hi: raw.theta_hi.unwrap_or(bbox.theta.hi),
            tol: raw.tol.unwrap_or(1e-7),
            duality_tol: raw.duality_tol.unwrap_or(1e-6),
            max_iter: raw.max_iter.unwrap_or(500),
            ns: raw.ns.unwrap_or(4096),
            out: raw.out.unwrap_or_else(|| PathBuf::from("out")),
            seed: raw.seed.unwrap_or(0),
            svg: raw.svg.unwrap_or(false),
            trace: raw.trace.unwrap_or(false),
            deltas: raw.deltas.unwrap_or_else(|| vec![0.1, 0.05, 0.025]),
            mode,
            k: raw.k.unwrap_or(2),
            mesh_m: raw.mesh_m.unwrap_or(8),
            samples: raw.samples.unwrap_or(5),
        };
        config.validate()?;
        Ok((config, nu))
    }

    fn validate(&self) -> Result<()> {
        if !(self.tol.is_finite() && self.tol > 0.0) {
            bail!("tol must be positive, got {}", self.tol);
        }
        if !(self.duality_tol.is_finite() && self.duality_tol > 0.0) {
            bail!("duality_tol must be positive, got {}", self.duality_tol);
        }
        if self.ns < 64 {
            bail!("ns must be at least 64, got {}", self.ns);
        }
        if self.max_iter == 0 {
            bail!("max_iter must be at least 1");
        }
        if self.samples == 0 {
            bail!("samples must be at least 1");
        }
        if self.deltas.windows(2).any(|w| w[1] > w[0]) {
            bail!("deltas must be in descending order, got {:?}", self.deltas);
        }
        Ok(())
    }

    pub fn target_box(&self) -> Result<TargetBox> {
        Ok(TargetBox::new(Interval::new(self.z_lo, self.z_hi)?, Interval::new(self.theta_lo, self.theta_hi)?)?)
    }

    pub fn build_cost(&self) -> Result<SeparableCost> {
        let ybox = self.target_box()?;
        let cost = match self.cost {
            CostChoice::Mlm => SeparableCost::mlm(
                self.constants.expect("mlm config carries constants"),
                self.eps0.expect("mlm config carries eps0"),
                self.eps1.expect("mlm config carries eps1"),
                ybox,
            )?,
            CostChoice::Sg2d => SeparableCost::sg2d(Interval::new(self.b_lo, self.b_hi)?, ybox)?,
        };
        Ok(cost)
    }

    pub fn solve_options(&self) -> SolveOptions {
        SolveOptions {
            tol: self.tol,
            max_iter: self.max_iter,
            n_s: self.ns,
            duality_tol: self.duality_tol,
            trace: self.trace,
        }
    }

    pub fn echo(&self) -> serde_json::Value {
        serde_json::to_value(self).expect("config serialises")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write_nu(dir: &Path) -> PathBuf {
        let path = dir.join("nu.csv");
        std::fs::write(&path, "z,theta,mass\n0.5,1.0,1.0\n").unwrap();
        path
    }

    #[test]
    fn flags_override_file_values() {
        let file: RawConfig = toml::from_str("cost = \"sg2d\"\ntol = 1e-6\nns = 128\n").unwrap();
        let flags = RawConfig { ns: Some(256), ..Default::default() };
        let merged = file.merge(flags);
        assert_eq!(merged.ns, Some(256));
        assert_eq!(merged.tol, Some(1e-6));
    }

    #[test]
    fn defaults_are_resolved_and_echoed() {
        let dir = tempfile::tempdir().unwrap();
        let raw = RawConfig { cost: Some("sg2d".into()), nu: Some(write_nu(dir.path())), ..Default::default() };
        let (cfg, _) = SolveConfig::resolve(raw).unwrap();
        let echo = cfg.echo();
        assert_eq!(echo["ns"], 4096);
        assert_eq!(echo["b_hi"], 1.0);
        assert_eq!(echo["z_lo"], 0.5);
        assert_eq!(echo["mode"], "mass");
        assert!(echo.get("out").is_none());
        assert!(echo.get("constants").is_none());
    }

    #[test]
    fn rejects_bad_values() {
        let dir = tempfile::tempdir().unwrap();
        let nu = write_nu(dir.path());
        let base = || RawConfig { cost: Some("sg2d".into()), nu: Some(nu.clone()), ..Default::default() };
        assert!(SolveConfig::resolve(RawConfig { ns: Some(32), ..base() }).is_err());
        assert!(SolveConfig::resolve(RawConfig { tol: Some(0.0), ..base() }).is_err());
        assert!(SolveConfig::resolve(RawConfig { deltas: Some(vec![0.1, 0.2]), ..base() }).is_err());
        assert!(SolveConfig::resolve(RawConfig { kappa: Some(0.3), ..base() }).is_err());
        assert!(SolveConfig::resolve(RawConfig { cost: Some("mlm".into()), eps0: Some(0.6), ..base() })
            .and_then(|(c, _)| c.build_cost())
            .is_err());
        assert!(toml::from_str::<RawConfig>("unknown = 1\n").is_err());
    }
}
