//! Run configuration files.
//!
//! A run config is one JSON object: the reuse-policy fields at top level,
//! plus optional `cost`, `similarity` and `family` sections and a
//! `latency_jitter_pct` value. Unknown keys are rejected.
//!
//! ```json
//! { "lambda": 2.0, "tau_margin": "inf", "beam_width": 4,
//!   "cost": { "c_retrieve": 0.0 }, "family": { "overlap": 0.7, "seed": 3 } }
//! ```

use std::path::Path;

use serde_json::{Map, Value};

use super::family::FamilyConfig;
use crate::cost::CostCoefficients;
use crate::memo::ReusePolicy;
use crate::similarity::SimilarityConfig;
use crate::{Error, Result};

#[derive(Clone, Debug, Default, PartialEq)]
pub struct RunConfig {
    pub policy: ReusePolicy,
    pub cost: CostCoefficients,
    pub similarity: SimilarityConfig,
    pub family: FamilyConfig,
    pub latency_jitter_pct: f64,
}

fn section<T: serde::de::DeserializeOwned + Default>(obj: &mut Map<String, Value>, key: &str) -> Result<T> {
    match obj.remove(key) {
        None => Ok(T::default()),
        Some(v) => serde_json::from_value(v).map_err(|e| Error::InvalidConfig(format!("{key}: {e}"))),
    }
}

impl RunConfig {
    pub fn from_value(value: Value) -> Result<Self> {
        let Value::Object(mut obj) = value else {
            return Err(Error::InvalidConfig("config must be a JSON object".into()));
        };
        let cost = section(&mut obj, "cost")?;
        let similarity = section(&mut obj, "similarity")?;
        let family = section(&mut obj, "family")?;
        let latency_jitter_pct = match obj.remove("latency_jitter_pct") {
            None => 0.0,
            Some(v) => v
                .as_f64()
                .ok_or_else(|| Error::InvalidConfig("latency_jitter_pct must be a number".into()))?,
        };
        let policy = serde_json::from_value(Value::Object(obj)).map_err(|e| Error::InvalidConfig(format!("policy: {e}")))?;
        let cfg = RunConfig {
            policy,
            cost,
            similarity,
            family,
            latency_jitter_pct,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_json(bytes: &[u8]) -> Result<Self> {
        let value: Value = serde_json::from_slice(bytes).map_err(|e| Error::InvalidConfig(format!("not valid JSON: {e}")))?;
        Self::from_value(value)
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&bytes)
    }

    pub fn validate(&self) -> Result<()> {
        self.policy.validate()?;
        self.cost.validate()?;
        self.similarity.with_alpha(self.policy.alpha).validate()?;
        self.family.validate()?;
        if !(0.0..=100.0).contains(&self.latency_jitter_pct) {
            return Err(Error::InvalidConfig(format!(
                "latency_jitter_pct must lie in [0,100], got {}",
                self.latency_jitter_pct
            )));
        }
        Ok(())
    }

    pub fn to_value(&self) -> Value {
        let mut obj = match serde_json::to_value(&self.policy) {
            Ok(Value::Object(o)) => o,
            _ => unreachable!("policy serializes to an object"),
        };
        obj.insert("cost".into(), serde_json::to_value(self.cost).expect("plain data"));
        obj.insert("similarity".into(), serde_json::to_value(self.similarity).expect("plain data"));
        obj.insert("family".into(), serde_json::to_value(&self.family).expect("plain data"));
        obj.insert("latency_jitter_pct".into(), Value::from(self.latency_jitter_pct));
        Value::Object(obj)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sections_and_policy_keys() {
        let cfg = RunConfig::from_json(
            br#"{"lambda": 2.5, "tau_margin": "inf", "beam_width": 3,
                 "cost": {"c_retrieve": 0.0, "a1": 2.0},
                 "family": {"overlap": 0.5, "seed": 4},
                 "latency_jitter_pct": 10}"#,
        )
        .unwrap();
        assert_eq!(cfg.policy.lambda, 2.5);
        assert!(cfg.policy.tau_margin.is_infinite());
        assert_eq!(cfg.policy.beam_width, 3);
        assert_eq!(cfg.cost.a1, 2.0);
        assert_eq!(cfg.cost.a2, CostCoefficients::default().a2);
        assert_eq!(cfg.family.seed, 4);
        assert_eq!(cfg.latency_jitter_pct, 10.0);

        let back = RunConfig::from_value(cfg.to_value()).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn rejects_bad_input() {
        for bad in [
            &br#"{"lambada": 1}"#[..],
            br#"{"cost": {"c_retrieve": -1}}"#,
            br#"{"cost": {"c_nope": 1}}"#,
            br#"{"beam_width": 0}"#,
            br#"{"alpha": 1.5}"#,
            br#"{"type_compat": {"Generic": ["Prompt"]}}"#,
            br#"[1, 2]"#,
            b"not json",
        ] {
            assert!(matches!(RunConfig::from_json(bad), Err(Error::InvalidConfig(_))), "{}", String::from_utf8_lossy(bad));
        }
        assert_eq!(RunConfig::from_json(b"{}").unwrap(), RunConfig::default());
    }
}
