use std::path::{Path, PathBuf};

use loopflow::graphmaps::{LedgerParams, SolverOptions};
use loopflow::lambdaverify::SweepSpec;
use loopflow::model::TorusModel;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::CliError;

/// Knobs for the audits that are not part of the main sweep grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AuditSpec {
    /// difference steps of the Lipschitz-in-`T` audit, largest first
    pub lipschitz_taus: Vec<f64>,
    /// the Lipschitz audit runs at `T0 + lipschitz_t_offset`
    pub lipschitz_t_offset: f64,
    /// number of leading sweep times used by the bi-Lipschitz audit
    pub bilipschitz_t_count: usize,
    /// the roundtrip oracle runs on the first `oracle_t_count` times ...
    pub oracle_t_count: usize,
    /// ... and the first `oracle_zplus_count` samples, for the first sphere point
    pub oracle_zplus_count: usize,
    pub fd_step: f64,
    pub smoothing_s_min: f64,
    pub smoothing_s_max: f64,
    pub smoothing_points: usize,
    pub smoothing_alpha: f64,
}

impl Default for AuditSpec {
    fn default() -> Self {
        Self {
            lipschitz_taus: vec![0.1, 0.05, 0.025],
            lipschitz_t_offset: 1.0,
            bilipschitz_t_count: 2,
            oracle_t_count: 1,
            oracle_zplus_count: 2,
            fd_step: 1e-4,
            smoothing_s_min: 1e-3,
            smoothing_s_max: 10.0,
            smoothing_points: 40,
            smoothing_alpha: 0.75,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub model: TorusModel,
    /// Fourier truncation `|j| ≤ J`
    #[serde(rename = "J")]
    pub modes: usize,
    /// constant loop used as the Newton initial guess for the critical loop
    pub critical_guess: Vec<f64>,
    /// `μ = mu_fraction · d`
    pub mu_fraction: f64,
    pub degeneracy_tol: f64,
    pub ledger: LedgerParams,
    pub solver: SolverOptions,
    pub sweep: SweepSpec,
    pub audits: AuditSpec,
    /// seed of the κ estimates; the sweep samples use `sweep.seed`
    pub seed: u64,
    /// not part of the config hash
    pub outdir: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            model: TorusModel::pendulum(1.0),
            modes: 32,
            critical_guess: vec![3.0],
            mu_fraction: 0.5,
            degeneracy_tol: 1e-8,
            ledger: LedgerParams::default(),
            solver: SolverOptions::default(),
            sweep: SweepSpec::default(),
            audits: AuditSpec::default(),
            seed: 1,
            outdir: None,
        }
    }
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self, CliError> {
        let cfg: RunConfig = serde_json::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Io(path.to_path_buf(), e))?;
        Self::from_json(&text)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let bad = |m: String| Err(CliError::Config(m));
        self.model.validate()?;
        if self.modes == 0 {
            return bad("J must be positive".into());
        }
        if self.critical_guess.len() != self.model.dim {
            return bad(format!(
                "critical_guess has {} entries, model dimension is {}",
                self.critical_guess.len(),
                self.model.dim
            ));
        }
        if !(self.mu_fraction > 0.0 && self.mu_fraction < 1.0) {
            return bad(format!("mu_fraction {} not in (0, 1)", self.mu_fraction));
        }
        self.solver.grid.validate()?;
        self.sweep.validate()?;
        let a = &self.audits;
        if a.lipschitz_taus.is_empty() || a.lipschitz_taus.iter().any(|t| *t <= 0.0) {
            return bad("lipschitz_taus must be nonempty and positive".into());
        }
        if !(a.smoothing_s_min > 0.0 && a.smoothing_s_max > a.smoothing_s_min && a.smoothing_points >= 2) {
            return bad("smoothing grid must satisfy 0 < s_min < s_max with at least 2 points".into());
        }
        if a.fd_step <= 0.0 {
            return bad("fd_step must be positive".into());
        }
        Ok(())
    }

    /// First 16 hex digits of the SHA-256 of the canonical JSON form,
    /// with the output directory removed.
    pub fn hash(&self) -> String {
        let mut canon = self.clone();
        canon.outdir = None;
        let bytes = serde_json::to_vec(&canon).expect("config serializes");
        let digest = Sha256::digest(&bytes);
        digest.iter().take(8).map(|b| format!("{b:02x}")).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_roundtrip_and_hash_ignores_outdir() {
        let cfg = RunConfig::default();
        let text = serde_json::to_string(&cfg).unwrap();
        let back = RunConfig::from_json(&text).unwrap();
        assert_eq!(back, cfg);
        let mut moved = cfg.clone();
        moved.outdir = Some("elsewhere".into());
        assert_eq!(moved.hash(), cfg.hash());
        moved.seed = 2;
        assert_ne!(moved.hash(), cfg.hash());
        assert_eq!(cfg.hash().len(), 16);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(RunConfig::from_json(r#"{"J": 8, "bogus": 1}"#).is_err());
        assert!(RunConfig::from_json(r#"{"solver": {"fp_tol": 1e-9, "typo": 0}}"#).is_err());
        assert!(RunConfig::from_json(r#"{"J": 8}"#).is_ok());
    }

    #[test]
    fn guess_must_match_dimension() {
        let err = RunConfig::from_json(r#"{"critical_guess": [3.0, 3.0]}"#).unwrap_err();
        assert!(err.to_string().contains("dimension"));
    }
}
