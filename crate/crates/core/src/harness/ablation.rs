//! The ablation matrix: every pipeline variant evaluated on one suite, with
//! the simulated reactive latency of each.

use std::collections::BTreeMap;
use std::io::Write;

use serde::{Deserialize, Serialize};

use super::closed_loop::{evaluate_closed_loop, EvalConfig, EvalReport, Policy, SuiteSpec};
use crate::error::{Error, Result};
use crate::models::{EtaModel, Mode};
use crate::world::ScenarioKind;

/// Table rows in display order.
pub const ABLATION_MODES: [Mode; 8] = [
    Mode::Full,
    Mode::NoForecast,
    Mode::NoSmall,
    Mode::NoMask,
    Mode::SmallOnly,
    Mode::GtForecast,
    Mode::GtForecastTestOnly,
    Mode::Base,
];

/// Short row label used in the printed table.
pub fn row_label(mode: Mode) -> &'static str {
    match mode {
        Mode::Full => "full",
        Mode::NoForecast => "A",
        Mode::NoSmall => "B",
        Mode::NoMask => "C",
        Mode::SmallOnly => "D",
        Mode::GtForecast => "E",
        Mode::GtForecastTestOnly => "F",
        Mode::Base => "base",
    }
}

/// Modes that need their own checkpoints; `gt_forecast_test_only` reuses
/// the full-mode ones.
pub fn training_modes() -> Vec<Mode> {
    let mut out: Vec<Mode> = ABLATION_MODES.iter().map(|m| m.training_mode()).collect();
    out.dedup();
    out.sort();
    out.dedup();
    out
}

/// Trained models keyed by training mode, one per seed.
pub type CheckpointSet = BTreeMap<Mode, Vec<(u64, EtaModel)>>;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub mode: Mode,
    pub label: String,
    pub trained_as: Mode,
    pub latency_ms: f64,
    pub report: EvalReport,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationTable {
    pub rows: Vec<AblationRow>,
}

/// Evaluates all eight variants. Fails before evaluating anything when a
/// training mode has no checkpoint, naming every such mode.
pub fn run_ablation_matrix(checkpoints: &CheckpointSet, suite: &SuiteSpec, cfg: &EvalConfig) -> Result<AblationTable> {
    let missing: Vec<&str> = training_modes()
        .into_iter()
        .filter(|m| checkpoints.get(m).is_none_or(|v| v.is_empty()))
        .map(|m| m.name())
        .collect();
    if !missing.is_empty() {
        return Err(Error::MissingCheckpoints(missing.join(", ")));
    }
    let mut rows = Vec::new();
    for mode in ABLATION_MODES {
        let trained_as = mode.training_mode();
        let runs: Vec<(u64, Policy<'_>)> = checkpoints[&trained_as]
            .iter()
            .map(|(seed, m)| (*seed, Policy::Model(m)))
            .collect();
        let report = evaluate_closed_loop(&runs, mode, suite, cfg)?;
        log::info!("{mode}: SR {}", report.success_rate);
        rows.push(AblationRow {
            mode,
            label: row_label(mode).to_string(),
            trained_as,
            latency_ms: cfg.costs.reactive(mode),
            report,
        });
    }
    Ok(AblationTable { rows })
}

impl AblationTable {
    pub fn row(&self, mode: Mode) -> Option<&AblationRow> {
        self.rows.iter().find(|r| r.mode == mode)
    }

    pub fn render(&self) -> String {
        let kinds: Vec<ScenarioKind> = ScenarioKind::ALL
            .into_iter()
            .filter(|k| self.rows.iter().any(|r| r.report.per_kind_success.contains_key(k)))
            .collect();
        let mut s = format!(
            "{:<5} {:<22} {:>8} {:>16} {:>16} {:>16}",
            "row", "mode", "lat ms", "SR %", "collision %", "route %"
        );
        for k in &kinds {
            s += &format!(" {:>12}", k.name());
        }
        s.push('\n');
        for r in &self.rows {
            s += &format!(
                "{:<5} {:<22} {:>8.0} {:>16} {:>16} {:>16}",
                r.label,
                r.mode.name(),
                r.latency_ms,
                r.report.success_rate.to_string(),
                r.report.collision_rate.to_string(),
                r.report.route_completion.to_string()
            );
            for k in &kinds {
                let v = r
                    .report
                    .per_kind_success
                    .get(k)
                    .map_or("-".to_string(), |m| format!("{:.1}", m.mean));
                s += &format!(" {v:>12}");
            }
            s.push('\n');
        }
        s
    }

    /// One JSON object per row.
    pub fn write_jsonl<W: Write>(&self, mut w: W, config_hash: &str) -> Result<()> {
        for r in &self.rows {
            let mut v = serde_json::to_value(r)?;
            v["config_hash"] = config_hash.into();
            serde_json::to_writer(&mut w, &v)?;
            w.write_all(b"\n")?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::closed_loop::Split;

    #[test]
    fn missing_checkpoints_are_listed() {
        let suite = SuiteSpec {
            kinds: vec![ScenarioKind::Merge],
            episodes: 1,
            split: Split::Eval,
        };
        let err = run_ablation_matrix(&CheckpointSet::new(), &suite, &EvalConfig::default()).unwrap_err();
        let Error::MissingCheckpoints(list) = err else {
            panic!("{err}")
        };
        assert_eq!(list.split(", ").count(), 7);
        assert!(!list.contains("gt_forecast_test_only"));
    }

    #[test]
    fn latency_column_follows_the_cost_model() {
        let c = EvalConfig::default().costs;
        let lat: Vec<f64> = ABLATION_MODES.iter().map(|&m| c.reactive(m)).collect();
        assert_eq!(lat, vec![50.0, 47.0, 31.0, 50.0, 47.0, 124.0, 124.0, 102.0]);
    }
}
