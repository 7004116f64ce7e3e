//! Architecture selection over the twelve-member grid.

use std::cmp::Ordering;
use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::dataset::ClipSet;
use crate::error::{Error, Result};
use crate::metrics::accuracy_at_threshold;
use crate::model::{save_weights, ModelConfig};
use crate::train::{evaluate, train_model, TrainConfig};

/// One evaluated grid point, mirroring a row of the optimization table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridEntry {
    pub depth: u8,
    pub frame_rate: u32,
    pub param_count: usize,
    pub val_auc: f64,
    /// Test accuracy in percent at threshold 0.5, when evaluated.
    pub test_accuracy: Option<f64>,
    /// Weights file for this grid point, when kept.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub weights: Option<PathBuf>,
}

impl GridEntry {
    pub fn config(&self) -> Result<ModelConfig> {
        ModelConfig::new(self.depth, self.frame_rate)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionReport {
    /// Grid rows in the canonical order (frame rate major, then depth).
    pub entries: Vec<GridEntry>,
    pub chosen: ModelConfig,
    pub chosen_val_auc: f64,
    pub chosen_weights: Option<PathBuf>,
}

/// Preference order: higher validation AUC, then lower frame rate, then
/// lower depth. `Less` means `a` is preferred.
fn preference(a: &GridEntry, b: &GridEntry) -> Ordering {
    b.val_auc
        .total_cmp(&a.val_auc)
        .then(a.frame_rate.cmp(&b.frame_rate))
        .then(a.depth.cmp(&b.depth))
}

/// Picks the maximum validation AUC over a complete grid; ties go to the
/// lower frame rate, then the lower depth.
pub fn select_optimal(entries: &[GridEntry]) -> Result<SelectionReport> {
    let mut seen = BTreeSet::new();
    for e in entries {
        let c = e.config()?;
        if !seen.insert(c) {
            return Err(Error::Data(format!("grid lists {c} twice")));
        }
        if !(0.0..=1.0).contains(&e.val_auc) {
            return Err(Error::Data(format!(
                "{c}: validation AUC {} outside [0, 1]",
                e.val_auc
            )));
        }
    }
    let missing: Vec<String> = ModelConfig::grid()
        .into_iter()
        .filter(|c| !seen.contains(c))
        .map(|c| c.to_string())
        .collect();
    if !missing.is_empty() {
        return Err(Error::Data(format!(
            "grid is missing {}",
            missing.join(", ")
        )));
    }
    let best = entries
        .iter()
        .min_by(|a, b| preference(a, b))
        .expect("grid is complete");
    let mut rows = entries.to_vec();
    rows.sort_by_key(|e| (e.frame_rate, e.depth));
    Ok(SelectionReport {
        chosen: best.config()?,
        chosen_val_auc: best.val_auc,
        chosen_weights: best.weights.clone(),
        entries: rows,
    })
}

/// Clip sets for one frame rate; `test` is optional.
pub struct GridSets {
    pub train: Box<dyn ClipSet>,
    pub val: Box<dyn ClipSet>,
    pub test: Option<Box<dyn ClipSet>>,
}

fn train_entry(
    c: ModelConfig,
    sets: &GridSets,
    tc: &TrainConfig,
    weights_dir: Option<&Path>,
) -> Result<GridEntry> {
    let out = train_model(c, &*sets.train, &*sets.val, tc)?;
    let (_, val_auc, _) = evaluate(&out.model, &*sets.val, tc.batch_size)?;
    let test_accuracy = match &sets.test {
        Some(t) => {
            let (_, _, probs) = evaluate(&out.model, &**t, tc.batch_size)?;
            Some(accuracy_at_threshold(&probs, &t.labels(), 0.5)?)
        }
        None => None,
    };
    let weights = match weights_dir {
        Some(d) => {
            let p = d.join(format!("d{}_fr{}.dyad", c.depth, c.frame_rate));
            save_weights(&out.model, &p)?;
            Some(p)
        }
        None => None,
    };
    Ok(GridEntry {
        depth: c.depth,
        frame_rate: c.frame_rate,
        param_count: out.model.count_params(),
        val_auc,
        test_accuracy,
        weights,
    })
}

/// Trains and evaluates every config, `threads` at a time. `sets` is
/// called once per frame rate. Each run stays single-threaded and
/// deterministic, so the result does not depend on `threads`.
pub fn train_grid(
    configs: &[ModelConfig],
    sets: impl Fn(u32) -> Result<GridSets>,
    tc: &TrainConfig,
    weights_dir: Option<&Path>,
    threads: usize,
) -> Result<Vec<GridEntry>> {
    let mut by_fr = std::collections::BTreeMap::new();
    for c in configs {
        if let std::collections::btree_map::Entry::Vacant(e) = by_fr.entry(c.frame_rate) {
            e.insert(sets(c.frame_rate)?);
        }
    }
    let threads = threads.max(1);
    let mut results: Vec<Option<Result<GridEntry>>> = (0..configs.len()).map(|_| None).collect();
    let next = std::sync::atomic::AtomicUsize::new(0);
    let slots = std::sync::Mutex::new(&mut results);
    std::thread::scope(|s| {
        for _ in 0..threads.min(configs.len()) {
            s.spawn(|| loop {
                let i = next.fetch_add(1, std::sync::atomic::Ordering::Relaxed);
                let Some(&c) = configs.get(i) else { break };
                let r = train_entry(c, &by_fr[&c.frame_rate], tc, weights_dir);
                slots.lock().expect("worker panicked")[i] = Some(r);
            });
        }
    });
    results
        .into_iter()
        .map(|r| r.expect("every config visited"))
        .collect()
}

impl SelectionReport {
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = serde_json::to_string_pretty(self).expect("report serializes");
        std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: e.line(),
            reason: e.to_string(),
        })
    }

    /// Plain-text table: dyads, fps, parameters, val AUC, test accuracy,
    /// with the chosen row marked.
    pub fn render(&self) -> String {
        let mut out = String::from("dyads  fps  params   val_auc  test_acc\n");
        for e in &self.entries {
            let acc = e
                .test_accuracy
                .map_or("-".to_string(), |a| format!("{a:.2}"));
            let mark = if e.depth == self.chosen.depth && e.frame_rate == self.chosen.frame_rate {
                "  <- chosen"
            } else {
                ""
            };
            out.push_str(&format!(
                "{:5}  {:3}  {:7}  {:7.2}  {:>8}{mark}\n",
                e.depth, e.frame_rate, e.param_count, e.val_auc, acc
            ));
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn flat(auc: f64) -> Vec<GridEntry> {
        ModelConfig::grid()
            .into_iter()
            .map(|c| GridEntry {
                depth: c.depth,
                frame_rate: c.frame_rate,
                param_count: 0,
                val_auc: auc,
                test_accuracy: None,
                weights: None,
            })
            .collect()
    }

    #[test]
    fn all_equal_prefers_smallest() {
        let mut g = flat(0.7);
        g.reverse();
        let r = select_optimal(&g).unwrap();
        assert_eq!(r.chosen, ModelConfig::new(1, 10).unwrap());
    }

    #[test]
    fn incomplete_or_duplicate_grid_rejected() {
        let mut g = flat(0.5);
        g.pop();
        assert!(select_optimal(&g)
            .unwrap_err()
            .to_string()
            .contains("missing"));
        let mut g = flat(0.5);
        g[1] = g[0].clone();
        assert!(select_optimal(&g).is_err());
    }
}
