//! Parameter sweeps over `lambda`, `tau_margin` and beam width.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::config::RunConfig;
use super::experiment::{run_experiment, summarize, ExperimentSettings, Mode};
use super::family::{generate_family, Family, FamilyConfig};
use crate::embedding::EmbeddingSpec;
use crate::memo::ReusePolicy;
use crate::repository::Store;
use crate::util::{extended_f64, extended_f64_vec};
use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepGrid {
    pub lambda: Vec<f64>,
    #[serde(with = "extended_f64_vec")]
    pub tau_margin: Vec<f64>,
    pub beam: Vec<usize>,
    /// Family seeds averaged per grid point; defaults to the base family's seed.
    #[serde(default)]
    pub seeds: Vec<u64>,
}

impl SweepGrid {
    /// Reads a grid file: the grid keys plus an optional inline run `config`.
    pub fn from_json(bytes: &[u8]) -> Result<(SweepGrid, RunConfig)> {
        let value: Value = serde_json::from_slice(bytes).map_err(|e| Error::InvalidConfig(format!("not valid JSON: {e}")))?;
        let Value::Object(mut obj) = value else {
            return Err(Error::InvalidConfig("grid must be a JSON object".into()));
        };
        let config = match obj.remove("config") {
            Some(v) => RunConfig::from_value(v)?,
            None => RunConfig::default(),
        };
        let grid: SweepGrid = serde_json::from_value(Value::Object(obj)).map_err(|e| Error::InvalidConfig(format!("grid: {e}")))?;
        grid.validate()?;
        Ok((grid, config))
    }

    pub fn validate(&self) -> Result<()> {
        if self.lambda.is_empty() || self.tau_margin.is_empty() || self.beam.is_empty() {
            return Err(Error::InvalidConfig("grid needs at least one lambda, tau_margin and beam value".into()));
        }
        Ok(())
    }

    /// Grid points in row order: lambda outermost, then tau_margin, then beam.
    pub fn points(&self) -> Vec<(f64, f64, usize)> {
        let mut out = Vec::new();
        for &l in &self.lambda {
            for &t in &self.tau_margin {
                for &b in &self.beam {
                    out.push((l, t, b));
                }
            }
        }
        out
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub lambda: f64,
    #[serde(with = "extended_f64")]
    pub tau_margin: f64,
    pub beam: usize,
    pub mean_cost: f64,
    pub mean_inconsistency: f64,
    pub mean_rho: f64,
    #[serde(rename = "mean_L")]
    pub mean_loss: f64,
}

fn run_point(families: &[Family], base: &RunConfig, spec: &EmbeddingSpec, policy: &ReusePolicy) -> Result<[f64; 4]> {
    let settings = ExperimentSettings {
        policy: policy.clone(),
        coeffs: base.cost,
        similarity: base.similarity,
        latency_jitter_pct: base.latency_jitter_pct,
        exec_seed: 0,
    };
    let mut acc = [0.0; 4];
    for f in families {
        let store = Store::in_memory(spec.clone());
        let s = summarize(&run_experiment(&f.tasks, f, &store, &settings, Mode::Memoized)?);
        acc[0] += s.mean_cost;
        acc[1] += s.mean_inconsistency;
        acc[2] += s.mean_rho;
        acc[3] += s.mean_loss;
    }
    Ok(acc.map(|x| x / families.len() as f64))
}

/// Runs the memoized experiment at every grid point (in parallel, each on its
/// own in-memory store) and averages the per-seed summaries.
pub fn sweep(grid: &SweepGrid, base: &RunConfig) -> Result<Vec<SweepRow>> {
    grid.validate()?;
    base.validate()?;
    let spec = EmbeddingSpec::default();
    let embedder = spec.embedder()?;
    let seeds = if grid.seeds.is_empty() {
        vec![base.family.seed]
    } else {
        grid.seeds.clone()
    };
    let families = seeds
        .iter()
        .map(|&seed| {
            generate_family(
                &FamilyConfig {
                    seed,
                    ..base.family.clone()
                },
                &embedder,
            )
        })
        .collect::<Result<Vec<_>>>()?;
    grid.points()
        .into_par_iter()
        .map(|(lambda, tau_margin, beam)| {
            let policy = ReusePolicy {
                lambda,
                tau_margin,
                beam_width: beam,
                ..base.policy.clone()
            };
            policy.validate()?;
            let [mean_cost, mean_inconsistency, mean_rho, mean_loss] = run_point(&families, base, &spec, &policy)?;
            Ok(SweepRow {
                lambda,
                tau_margin,
                beam,
                mean_cost,
                mean_inconsistency,
                mean_rho,
                mean_loss,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::experiment::summarize;

    fn small_base() -> RunConfig {
        RunConfig {
            family: FamilyConfig {
                n_tasks: 3,
                base_nodes: 6,
                seed: 2,
                ..FamilyConfig::default()
            },
            ..RunConfig::default()
        }
    }

    #[test]
    fn single_point_matches_direct_run() {
        let base = small_base();
        let grid = SweepGrid {
            lambda: vec![1.0],
            tau_margin: vec![0.0],
            beam: vec![1],
            seeds: vec![],
        };
        let rows = sweep(&grid, &base).unwrap();
        assert_eq!(rows.len(), 1);

        let spec = EmbeddingSpec::default();
        let f = generate_family(&base.family, &spec.embedder().unwrap()).unwrap();
        let store = Store::in_memory(spec);
        let settings = ExperimentSettings {
            policy: base.policy.clone(),
            coeffs: base.cost,
            similarity: base.similarity,
            ..ExperimentSettings::default()
        };
        let s = summarize(&run_experiment(&f.tasks, &f, &store, &settings, Mode::Memoized).unwrap());
        assert_eq!(rows[0].mean_loss, s.mean_loss);
        assert_eq!(rows[0].mean_rho, s.mean_rho);
    }

    #[test]
    fn infinite_margin_means_no_reuse() {
        let grid = SweepGrid {
            lambda: vec![0.5, 1.0],
            tau_margin: vec![0.0, f64::INFINITY],
            beam: vec![1],
            seeds: vec![1, 2],
        };
        let rows = sweep(&grid, &small_base()).unwrap();
        assert_eq!(rows.len(), 4);
        for r in rows {
            if r.tau_margin.is_infinite() {
                assert_eq!(r.mean_rho, 0.0);
                assert_eq!(r.mean_inconsistency, 0.0);
            }
        }
    }

    #[test]
    fn grid_file_parsing() {
        let (grid, cfg) = SweepGrid::from_json(
            br#"{"lambda":[0,1],"tau_margin":[0,"inf"],"beam":[1,2],"seeds":[1],"config":{"family":{"n_tasks":2}}}"#,
        )
        .unwrap();
        assert_eq!(grid.points().len(), 8);
        assert_eq!(grid.points()[1], (0.0, 0.0, 2));
        assert!(grid.tau_margin[1].is_infinite());
        assert_eq!(cfg.family.n_tasks, 2);
        assert!(SweepGrid::from_json(br#"{"lambda":[],"tau_margin":[0],"beam":[1]}"#).is_err());
        assert!(SweepGrid::from_json(br#"{"lambda":[1],"tau_margin":[0],"beam":[1],"extra":1}"#).is_err());
    }
}
