//! The micro-batch pipeline.
//!
//! Each trigger runs four steps against the state store: contribution
//! bounding, per-key aggregation into data buffers, key selection, and
//! perturbation. Releases go to the sink before the trigger's state is
//! committed; a resumed run truncates the sink back to the last commit and
//! skips committed triggers, so each micro-batch takes effect exactly once.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::bounding::{bound_contributions, Record};
use crate::engine::config::{Calibration, PipelineConfig};
use crate::engine::sink::{MemorySink, ReleaseSink};
use crate::engine::store::{KeyState, Progress, StateStore};
use crate::engine::window::{split_into_batches, MicroBatch};
use crate::error::{Error, Result};
use crate::keyselect::{KeySelectionState, SelectionParams};
use crate::noise::derive_seed;
use crate::perturb::{AggregationState, Release};

/// Boundaries between pipeline steps at which a fault can be injected.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum FaultPoint {
    AfterBounding,
    AfterAggregation,
    AfterSelection,
    AfterPerturbation,
    AfterSinkWrite,
    AfterCommit,
}

impl FaultPoint {
    pub const ALL: [FaultPoint; 6] = [
        FaultPoint::AfterBounding,
        FaultPoint::AfterAggregation,
        FaultPoint::AfterSelection,
        FaultPoint::AfterPerturbation,
        FaultPoint::AfterSinkWrite,
        FaultPoint::AfterCommit,
    ];
}

/// Fail with [`Error::InjectedFault`] at `point` of trigger `trigger`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FaultPlan {
    pub point: FaultPoint,
    pub window_start: Option<i64>,
    pub trigger: u64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct BudgetReport {
    pub epsilon: f64,
    pub delta: f64,
    pub key_selection_epsilon: f64,
    pub key_selection_delta: f64,
    pub aggregation_epsilon: f64,
    pub aggregation_delta: f64,
    pub selection_sigma: f64,
    pub selection_route: Option<String>,
    pub beta: Option<f64>,
    pub tau_first: f64,
    pub tau_last: f64,
    pub aggregation_sigmas: Vec<f64>,
    /// True when noise overrides make the run non-private.
    pub overridden: bool,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub records_in: u64,
    pub dropped_late: u64,
    pub dropped_bounding: u64,
    pub records_admitted: u64,
    pub releases: u64,
    pub released_keys: u64,
    pub keys_tracked: u64,
    pub key_reads: u64,
    pub windows: u64,
    pub triggers_processed: u64,
    pub triggers_skipped: u64,
    pub budget: BudgetReport,
}

/// Per-user record of what each admitted record touched, for sensitivity
/// audits.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ContributionAudit {
    /// `(window, key, round)` selection rounds each user joined.
    pub selection_rounds: BTreeMap<String, Vec<(i64, String, u32)>>,
    /// Sum of absolute clamped values each user fed into data buffers.
    pub aggregation_mass: BTreeMap<String, f64>,
    /// Admitted records per user.
    pub admitted: BTreeMap<String, u32>,
}

pub struct Engine<S: ReleaseSink> {
    cfg: PipelineConfig,
    cal: Calibration,
    store: StateStore,
    sink: S,
    fault: Option<FaultPlan>,
    audit: Option<ContributionAudit>,
    report: RunReport,
}

fn key_init(seed: u64, window: i64, key: &str, c: u32, columns: usize) -> KeyState {
    let w = window.to_le_bytes();
    KeyState {
        selection: KeySelectionState::new(derive_seed(seed, "selection", &[&w, key.as_bytes()]), c),
        aggregation: AggregationState::new(derive_seed(seed, "aggregation", &[&w, key.as_bytes()]), columns),
        predicted_release: None,
    }
}

/// First trigger after `current` at which `state`'s selection would pass
/// with only empty batches from now on.
pub fn predict_empty_release(state: &KeyState, current: u64, params: &SelectionParams) -> Option<u64> {
    state.selection.predict_empty_release(current, params)
}

/// Keys whose predicted release is `trigger` of `window`.
pub fn handle_due_predictions(store: &StateStore, window: i64, trigger: u64) -> BTreeSet<String> {
    store.due_predictions(window, trigger)
}

impl<S: ReleaseSink> Engine<S> {
    /// Prepares an engine over `store`, truncating `sink` back to the
    /// store's last commit.
    pub fn new(cfg: PipelineConfig, mut store: StateStore, mut sink: S) -> Result<Self> {
        let cal = cfg.calibrate()?;
        let fp = cfg.fingerprint();
        match store.fingerprint() {
            Some(existing) if existing != fp => {
                return Err(Error::State("state directory was written under a different configuration".into()))
            }
            Some(_) => {}
            None => store.set_fingerprint(fp),
        }
        sink.truncate_after(store.progress())?;
        let budget = budget_report(&cfg, &cal);
        Ok(Engine {
            cfg,
            cal,
            store,
            sink,
            fault: None,
            audit: None,
            report: RunReport {
                budget,
                ..RunReport::default()
            },
        })
    }

    pub fn with_fault(mut self, plan: FaultPlan) -> Self {
        self.fault = Some(plan);
        self
    }

    pub fn with_audit(mut self) -> Self {
        self.audit = Some(ContributionAudit::default());
        self
    }

    pub fn calibration(&self) -> &Calibration {
        &self.cal
    }

    pub fn store(&self) -> &StateStore {
        &self.store
    }

    pub fn sink(&self) -> &S {
        &self.sink
    }

    pub fn audit(&self) -> Option<&ContributionAudit> {
        self.audit.as_ref()
    }

    pub fn into_parts(self) -> (StateStore, S) {
        (self.store, self.sink)
    }

    fn check_fault(&mut self, point: FaultPoint, window: i64, trigger: u64) -> Result<()> {
        if let Some(plan) = self.fault {
            if plan.point == point && plan.trigger == trigger && plan.window_start.is_none_or(|w| w == window) {
                self.fault = None;
                return Err(Error::InjectedFault(point));
            }
        }
        Ok(())
    }

    /// Processes the whole input, skipping triggers the store has already
    /// committed.
    pub fn run(&mut self, records: &[Record]) -> Result<RunReport> {
        let (batches, dropped_late) = split_into_batches(records, &self.cfg.window, self.cfg.triggers);
        let windows: BTreeSet<i64> = batches.iter().map(|b| b.window_start).collect();
        let multi = windows.len() > 1;
        self.report.records_in += records.len() as u64;
        self.report.dropped_late += dropped_late;
        self.report.windows = windows.len() as u64;
        let committed = self.store.progress();
        for batch in &batches {
            if committed.is_some_and(|p| (batch.window_start, batch.trigger_index) <= p) {
                self.report.triggers_skipped += 1;
                continue;
            }
            self.process_batch(batch, multi)?;
            let t = batch.trigger_index;
            let every = self.cfg.checkpoint_every;
            if t == self.cfg.triggers || (every > 0 && t % every == 0) {
                self.store.checkpoint()?;
            }
        }
        self.report.keys_tracked = self.store.key_count() as u64;
        self.report.key_reads = self.store.key_reads();
        Ok(self.report.clone())
    }

    /// Runs the four pipeline steps for one micro-batch and commits it.
    pub fn process_batch(&mut self, batch: &MicroBatch, multi_window: bool) -> Result<Vec<Release>> {
        let w = batch.window_start;
        let i = batch.trigger_index;
        if let Some(p) = self.store.progress() {
            if (w, i) <= p {
                return Err(Error::Sequencing(format!("trigger {i} of window {w} is already committed")));
            }
        }
        let seed = self.cfg.seed;
        let c = self.cfg.c;
        let ncols = self.cfg.columns.len();

        // Step 1: contribution bounding.
        let kept = bound_contributions(&batch.records, self.store.user_table_mut(w), &self.cal.sensitivity);
        self.store.mark_users(w, kept.iter().map(|r| r.user_id.as_str()));
        self.report.dropped_bounding += (batch.records.len() - kept.len()) as u64;
        self.report.records_admitted += kept.len() as u64;
        self.check_fault(FaultPoint::AfterBounding, w, i)?;

        // Step 2: group by key into data buffers.
        let mut groups: BTreeMap<&str, (Vec<&str>, Vec<f64>)> = BTreeMap::new();
        for r in &kept {
            let g = groups.entry(r.key.as_str()).or_default();
            g.0.push(r.user_id.as_str());
            g.1.push(r.value);
        }
        for (key, (_, values)) in &groups {
            let ks = self.store.key_mut(w, key, || key_init(seed, w, key, c, ncols));
            ks.aggregation.accumulate_delta(values.iter().copied(), &self.cal.perturb)?;
        }
        if let Some(audit) = self.audit.as_mut() {
            for r in &kept {
                *audit.aggregation_mass.entry(r.user_id.clone()).or_default() += r.value.abs();
                *audit.admitted.entry(r.user_id.clone()).or_default() += 1;
            }
        }
        self.check_fault(FaultPoint::AfterAggregation, w, i)?;

        // Step 3: key selection over batch keys plus due (or, without
        // prediction, all tracked) keys. The batch path wins on overlap.
        let mut candidates: BTreeMap<String, bool> =
            groups.keys().map(|k| (k.to_string(), true)).collect();
        let others: Vec<String> = if self.cfg.prediction {
            handle_due_predictions(&self.store, w, i).into_iter().collect()
        } else {
            self.store.keys_in_window(w)
        };
        for k in others {
            candidates.entry(k).or_insert(false);
        }
        let params = &self.cal.selection;
        let mut selected: Vec<String> = Vec::new();
        let mut touched: Vec<(String, Option<u64>)> = Vec::new();
        for (key, in_batch) in &candidates {
            let ks = self.store.key_mut(w, key, || key_init(seed, w, key, c, ncols));
            if ks.selection.is_permanent() {
                selected.push(key.clone());
                touched.push((key.clone(), (i < self.cfg.triggers).then_some(i + 1)));
                continue;
            }
            if *in_batch {
                let users = &groups[key.as_str()].0;
                let round = ks.selection.rounds_completed();
                let fresh = ks.selection.observe(i, users.iter().copied(), params)?;
                if let Some(audit) = self.audit.as_mut() {
                    for u in fresh {
                        audit.selection_rounds.entry(u).or_default().push((w, key.clone(), round));
                    }
                }
            } else if ks.selection.tree().is_some() {
                ks.selection.observe(i, std::iter::empty(), params)?;
            } else {
                continue;
            }
            let outcome = ks.selection.test_threshold(i, params)?;
            if outcome.selected {
                ks.selection.restart_after_selection(&outcome)?;
                selected.push(key.clone());
            }
            let next = if !self.cfg.prediction {
                None
            } else if ks.selection.is_permanent() {
                (i < self.cfg.triggers).then_some(i + 1)
            } else {
                predict_empty_release(ks, i, params)
            };
            touched.push((key.clone(), next));
        }
        self.check_fault(FaultPoint::AfterSelection, w, i)?;

        // Step 4: perturbation, then fresh predictions.
        let mut releases = Vec::new();
        for key in &selected {
            let ks = self.store.key_mut(w, key, || key_init(seed, w, key, c, ncols));
            let mut out = ks.aggregation.release(key, i, true, &self.cal.perturb)?;
            if multi_window {
                for r in &mut out {
                    r.window_start = Some(w);
                }
            }
            releases.extend(out);
        }
        if self.cfg.prediction {
            for (key, next) in &touched {
                self.store.set_prediction(w, key, *next);
            }
            // Batch keys below the gate carry no tree; drop any stale entry.
            for key in groups.keys() {
                if !touched.iter().any(|(t, _)| t == key) {
                    self.store.set_prediction(w, key, None);
                }
            }
        }
        self.report.releases += releases.len() as u64;
        self.report.released_keys += selected.len() as u64;
        self.check_fault(FaultPoint::AfterPerturbation, w, i)?;

        self.sink.write(w, i, &releases)?;
        self.check_fault(FaultPoint::AfterSinkWrite, w, i)?;
        self.store.commit((w, i))?;
        self.report.triggers_processed += 1;
        self.check_fault(FaultPoint::AfterCommit, w, i)?;
        Ok(releases)
    }

    pub fn progress(&self) -> Option<Progress> {
        self.store.progress()
    }
}

fn budget_report(cfg: &PipelineConfig, cal: &Calibration) -> BudgetReport {
    BudgetReport {
        epsilon: cfg.epsilon,
        delta: cfg.delta,
        key_selection_epsilon: cal.split.key_selection.epsilon,
        key_selection_delta: cal.split.key_selection.delta,
        aggregation_epsilon: cal.split.aggregation.epsilon,
        aggregation_delta: cal.split.aggregation.delta,
        selection_sigma: cal.selection.sigma,
        selection_route: cal.selection_plan.map(|p| format!("{:?}", p.route)),
        beta: cal.selection_plan.map(|p| p.beta).or(cfg.beta),
        tau_first: cal.selection.tau(1),
        tau_last: cal.selection.tau(cfg.triggers),
        aggregation_sigmas: cal.perturb.sigmas.clone(),
        overridden: cfg.overrides.any(),
    }
}

/// Runs `records` through an in-memory engine.
pub fn run_pipeline(records: &[Record], cfg: &PipelineConfig) -> Result<(Vec<Release>, RunReport)> {
    let mut engine = Engine::new(cfg.clone(), StateStore::in_memory(), MemorySink::new())?;
    let report = engine.run(records)?;
    Ok((engine.into_parts().1.into_releases(), report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::engine::config::NoiseOverrides;
    use crate::engine::window::WindowSpec;

    fn noiseless_cfg(triggers: u64, c: u32) -> PipelineConfig {
        PipelineConfig {
            triggers,
            c,
            mu: 0.0,
            l_m: 100.0,
            window: WindowSpec { length: 100, allowed_lateness: 0 },
            overrides: NoiseOverrides::noiseless(),
            ..PipelineConfig::default()
        }
    }

    #[test]
    fn empty_stream_no_releases() {
        let (r, rep) = run_pipeline(&[], &PipelineConfig::default()).unwrap();
        assert!(r.is_empty());
        assert_eq!(rep.releases, 0);
    }

    #[test]
    fn noiseless_running_sums() {
        let recs = vec![
            Record::new("a", 2.0, 5, "u1"),
            Record::new("b", 1.0, 15, "u2"),
            Record::new("a", 3.0, 25, "u2"),
        ];
        let (r, _) = run_pipeline(&recs, &noiseless_cfg(10, 5)).unwrap();
        let got: Vec<(u64, &str, f64)> = r.iter().map(|x| (x.trigger, x.key.as_str(), x.value)).collect();
        assert_eq!(got, vec![(1, "a", 2.0), (2, "b", 1.0), (3, "a", 5.0)]);
    }

    #[test]
    fn deterministic_and_prediction_equivalent() {
        let mut recs = Vec::new();
        for i in 0..400i64 {
            recs.push(Record::new(format!("k{}", i % 13), 1.0, i / 4, format!("u{}", i % 37)));
        }
        let cfg = PipelineConfig {
            epsilon: 1.0,
            c: 4,
            triggers: 20,
            window: WindowSpec { length: 100, allowed_lateness: 0 },
            beta: Some(1e-3),
            overrides: NoiseOverrides { selection_sigma: Some(2.0), tau: Some(1.0), aggregation_sigma: None },
            ..PipelineConfig::default()
        };
        let (a, ra) = run_pipeline(&recs, &cfg).unwrap();
        let (b, _) = run_pipeline(&recs, &cfg).unwrap();
        assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
        let scan = PipelineConfig { prediction: false, ..cfg };
        let (s, rs) = run_pipeline(&recs, &scan).unwrap();
        assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&s).unwrap());
        assert!(ra.key_reads <= rs.key_reads);
        assert!(!a.is_empty());
    }

    #[test]
    fn fault_then_resume_matches_reference() {
        let mut recs = Vec::new();
        for i in 0..300i64 {
            recs.push(Record::new(format!("k{}", i % 7), 1.0, i / 3, format!("u{}", i % 23)));
        }
        let cfg = PipelineConfig {
            c: 3,
            triggers: 10,
            window: WindowSpec { length: 100, allowed_lateness: 0 },
            overrides: NoiseOverrides { selection_sigma: Some(1.0), tau: Some(0.5), aggregation_sigma: None },
            beta: Some(1e-3),
            ..PipelineConfig::default()
        };
        let (reference, _) = run_pipeline(&recs, &cfg).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().join("out.jsonl");
        let state = dir.path().join("state");
        let sink = crate::engine::sink::JsonLinesSink::open(&out).unwrap();
        let mut e = Engine::new(cfg.clone(), StateStore::open(&state).unwrap(), sink)
            .unwrap()
            .with_fault(FaultPlan { point: FaultPoint::AfterSinkWrite, window_start: None, trigger: 4 });
        assert!(matches!(e.run(&recs), Err(Error::InjectedFault(FaultPoint::AfterSinkWrite))));
        drop(e);
        let sink = crate::engine::sink::JsonLinesSink::open(&out).unwrap();
        let mut e = Engine::new(cfg, StateStore::open(&state).unwrap(), sink).unwrap();
        e.run(&recs).unwrap();
        let got = crate::engine::sink::JsonLinesSink::read_all(&out).unwrap();
        assert_eq!(got, reference);
    }

    #[test]
    fn config_mismatch_rejected_on_resume() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = noiseless_cfg(5, 2);
        let mut e = Engine::new(cfg.clone(), StateStore::open(dir.path()).unwrap(), MemorySink::new()).unwrap();
        e.run(&[Record::new("a", 1.0, 1, "u")]).unwrap();
        drop(e);
        let other = PipelineConfig { seed: 9, ..cfg };
        assert!(matches!(
            Engine::new(other, StateStore::open(dir.path()).unwrap(), MemorySink::new()),
            Err(Error::State(_))
        ));
    }

    #[test]
    fn prediction_discarded_when_key_reappears() {
        // Three triggers: the key appears at 1, gets a prediction, then
        // reappears at 2 before the predicted trigger.
        let cfg = PipelineConfig {
            triggers: 3,
            c: 1,
            mu: 0.0,
            window: WindowSpec { length: 3, allowed_lateness: 0 },
            beta: Some(0.1),
            overrides: NoiseOverrides { selection_sigma: Some(0.0), tau: Some(5.0), aggregation_sigma: Some(0.0) },
            ..PipelineConfig::default()
        };
        let mut e = Engine::new(cfg, StateStore::in_memory(), MemorySink::new()).unwrap();
        let b1 = MicroBatch { window_start: 0, trigger_index: 1, records: vec![Record::new("k", 1.0, 0, "u1")] };
        e.process_batch(&b1, false).unwrap();
        // Force a stale prediction at trigger 3 to observe its replacement.
        e.store.set_prediction(0, "k", Some(3));
        let b2 = MicroBatch { window_start: 0, trigger_index: 2, records: vec![Record::new("k", 1.0, 1, "u2")] };
        e.process_batch(&b2, false).unwrap();
        assert!(e.store.due_predictions(0, 3).is_empty());
        let b3 = MicroBatch { window_start: 0, trigger_index: 3, records: vec![] };
        assert!(e.process_batch(&b3, false).unwrap().is_empty());
    }
}
