//! Pure aggregation of evaluation records into the accuracy ladder report:
//! per-condition and per-family accuracies with deltas against the well-lit
//! baseline, rendered as CSV, JSON or Markdown.

use std::collections::BTreeMap;
use std::str::FromStr;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::eval::runner::{Condition, EvalRecord};
use crate::qa::Family;

/// Accuracy of one (model, condition) cell.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConditionAccuracy {
    pub condition: String,
    pub total: usize,
    pub correct: usize,
    /// Percent in [0, 100].
    pub accuracy: f64,
    /// Percentage-point change against the L0 baseline; absent for L0 itself
    /// or when no baseline was evaluated.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub delta_vs_l0: Option<f64>,
}

/// Accuracy of one (model, condition, family) cell.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FamilyAccuracy {
    pub condition: String,
    pub family: Family,
    pub total: usize,
    pub correct: usize,
    pub accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ModelReport {
    pub model: String,
    /// Accuracy of the well-lit, noise-free, unenhanced condition.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub l0_baseline: Option<f64>,
    pub conditions: Vec<ConditionAccuracy>,
    pub families: Vec<FamilyAccuracy>,
}

/// The full accuracy ladder across models.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AccuracyReport {
    pub models: Vec<ModelReport>,
}

fn pct(correct: usize, total: usize) -> f64 {
    100.0 * correct as f64 / total as f64
}

/// Sort key placing conditions in ladder order.
fn condition_order(s: &str) -> (u8, bool, bool, String) {
    match Condition::from_str(s) {
        Ok(c) => (c.level.index(), c.noise, c.llie, String::new()),
        Err(_) => (u8::MAX, true, true, s.to_string()),
    }
}

/// Aggregates records into the report. A pure fold: record order never
/// changes the result. Errors on an empty record set.
pub fn score(records: &[EvalRecord]) -> Result<AccuracyReport> {
    if records.is_empty() {
        return Err(Error::EmptyReport);
    }

    let mut by_condition: BTreeMap<(String, String), (usize, usize)> = BTreeMap::new();
    let mut by_family: BTreeMap<(String, String, Family), (usize, usize)> = BTreeMap::new();
    for r in records {
        let cell = by_condition
            .entry((r.model.clone(), r.condition.clone()))
            .or_insert((0, 0));
        cell.0 += r.correct as usize;
        cell.1 += 1;
        let cell = by_family
            .entry((r.model.clone(), r.condition.clone(), r.family))
            .or_insert((0, 0));
        cell.0 += r.correct as usize;
        cell.1 += 1;
    }

    let mut models: BTreeMap<String, ModelReport> = BTreeMap::new();
    let baseline_key = Condition::BASELINE.to_string();

    for ((model, condition), (correct, total)) in &by_condition {
        let report = models.entry(model.clone()).or_insert_with(|| ModelReport {
            model: model.clone(),
            l0_baseline: None,
            conditions: Vec::new(),
            families: Vec::new(),
        });
        let accuracy = pct(*correct, *total);
        if *condition == baseline_key {
            report.l0_baseline = Some(accuracy);
        }
        report.conditions.push(ConditionAccuracy {
            condition: condition.clone(),
            total: *total,
            correct: *correct,
            accuracy,
            delta_vs_l0: None,
        });
    }

    for ((model, condition, family), (correct, total)) in &by_family {
        let report = models.get_mut(model).expect("model seen above");
        report.families.push(FamilyAccuracy {
            condition: condition.clone(),
            family: *family,
            total: *total,
            correct: *correct,
            accuracy: pct(*correct, *total),
        });
    }

    let mut models: Vec<ModelReport> = models.into_values().collect();
    for report in &mut models {
        if let Some(baseline) = report.l0_baseline {
            for cell in &mut report.conditions {
                if cell.condition != baseline_key {
                    cell.delta_vs_l0 = Some(cell.accuracy - baseline);
                }
            }
        }
        report
            .conditions
            .sort_by_key(|c| condition_order(&c.condition));
        report
            .families
            .sort_by_key(|f| (condition_order(&f.condition), f.family.index()));
    }

    Ok(AccuracyReport { models })
}

/// Two-decimal accuracy, the table convention (66.55).
pub fn format_accuracy(accuracy: f64) -> String {
    format!("{accuracy:.2}")
}

/// Signed two-decimal delta, the small-number convention (-7.07, +0.18).
pub fn format_delta(delta: f64) -> String {
    format!("{delta:+.2}")
}

impl AccuracyReport {
    pub fn to_json(&self) -> Result<String> {
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        Ok(text)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("model,condition,family,total,correct,accuracy,delta_vs_l0\n");
        for model in &self.models {
            for cell in &model.conditions {
                out.push_str(&format!(
                    "{},{},all,{},{},{},{}\n",
                    model.model,
                    cell.condition,
                    cell.total,
                    cell.correct,
                    format_accuracy(cell.accuracy),
                    cell.delta_vs_l0.map(format_delta).unwrap_or_default(),
                ));
            }
            for cell in &model.families {
                out.push_str(&format!(
                    "{},{},{},{},{},{},\n",
                    model.model,
                    cell.condition,
                    cell.family,
                    cell.total,
                    cell.correct,
                    format_accuracy(cell.accuracy),
                ));
            }
        }
        out
    }

    pub fn to_markdown(&self) -> String {
        let mut out = String::new();
        for model in &self.models {
            out.push_str(&format!("## {}\n\n", model.model));
            out.push_str("| condition | n | accuracy | vs L0 |\n|---|---|---|---|\n");
            for cell in &model.conditions {
                out.push_str(&format!(
                    "| {} | {} | {} | {} |\n",
                    cell.condition,
                    cell.total,
                    format_accuracy(cell.accuracy),
                    cell.delta_vs_l0.map(format_delta).unwrap_or_default(),
                ));
            }
            out.push_str("\n| condition | family | n | accuracy |\n|---|---|---|---|\n");
            for cell in &model.families {
                out.push_str(&format!(
                    "| {} | {} | {} | {} |\n",
                    cell.condition,
                    cell.family,
                    cell.total,
                    format_accuracy(cell.accuracy),
                ));
            }
            out.push('\n');
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::eval::runner::RecordStatus;

    fn record(model: &str, condition: &str, family: Family, correct: bool) -> EvalRecord {
        EvalRecord {
            scene: "s".into(),
            frame: "f".into(),
            family,
            question: "q".into(),
            condition: condition.into(),
            model: model.into(),
            raw_response: String::new(),
            parsed: None,
            correct,
            status: RecordStatus::Ok,
            num_choices: 2,
            latency_ms: 0,
        }
    }

    /// `correct` of `total` records for one cell.
    fn cell(model: &str, condition: &str, correct: usize, total: usize) -> Vec<EvalRecord> {
        (0..total)
            .map(|i| record(model, condition, Family::RoomType, i < correct))
            .collect()
    }

    #[test]
    fn three_of_four_is_75() {
        let records = cell("m", "L0", 3, 4);
        let report = score(&records).unwrap();
        assert_eq!(
            format_accuracy(report.models[0].conditions[0].accuracy),
            "75.00"
        );
    }

    #[test]
    fn empty_input_is_an_error() {
        assert!(matches!(score(&[]), Err(Error::EmptyReport)));
    }

    #[test]
    fn delta_convention_matches_the_table_format() {
        // L0 at 66.55 and L3 at 59.48 must render the delta as -7.07.
        let mut records = cell("m", "L0", 6655, 10_000);
        records.extend(cell("m", "L3", 5948, 10_000));
        let report = score(&records).unwrap();
        let model = &report.models[0];
        assert_eq!(model.l0_baseline, Some(66.55));
        let l3 = model
            .conditions
            .iter()
            .find(|c| c.condition == "L3")
            .unwrap();
        assert_eq!(format_accuracy(l3.accuracy), "59.48");
        assert_eq!(format_delta(l3.delta_vs_l0.unwrap()), "-7.07");

        let l0 = model
            .conditions
            .iter()
            .find(|c| c.condition == "L0")
            .unwrap();
        assert!(l0.delta_vs_l0.is_none());
    }

    #[test]
    fn positive_delta_renders_with_plus_sign() {
        let mut records = cell("m", "L0", 7567, 10_000);
        records.extend(cell("m", "L1", 7585, 10_000));
        let report = score(&records).unwrap();
        let l1 = report.models[0]
            .conditions
            .iter()
            .find(|c| c.condition == "L1")
            .unwrap();
        assert_eq!(format_delta(l1.delta_vs_l0.unwrap()), "+0.18");
    }

    #[test]
    fn scoring_is_permutation_invariant() {
        let mut records = Vec::new();
        for (i, condition) in ["L0", "L1+noise", "L4+noise+llie"].iter().enumerate() {
            for j in 0..20 {
                let family = Family::ALL[(i + j) % 5];
                records.push(record("a", condition, family, (i + j) % 3 == 0));
                records.push(record("b", condition, family, (i * j) % 4 == 0));
            }
        }
        let forward = score(&records).unwrap();
        records.reverse();
        let backward = score(&records).unwrap();
        assert_eq!(forward, backward);
    }

    #[test]
    fn table_shaped_fixture_has_all_cells() {
        // 5 degradation levels x 4 condition rows plus L0.
        let mut records = cell("m", "L0", 8, 10);
        for level in ["L1", "L2", "L3", "L4", "L5"] {
            for flags in ["", "+llie", "+noise", "+noise+llie"] {
                records.extend(cell("m", &format!("{level}{flags}"), 5, 10));
            }
        }
        let report = score(&records).unwrap();
        assert_eq!(report.models[0].conditions.len(), 21);
        // Conditions come out in ladder order, L0 first.
        assert_eq!(report.models[0].conditions[0].condition, "L0");
        let csv = report.to_csv();
        assert!(csv.lines().count() > 21);
        let md = report.to_markdown();
        assert!(md.contains("| L5+noise+llie |"));
        report.to_json().unwrap();
    }
}
