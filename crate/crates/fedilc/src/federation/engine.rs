//! Experiment driver shared by the in-process and wire modes.
//!
//! The engine owns the server state and the evaluation plan; callers feed
//! it one batch of client updates per round. Evaluation is chunked with a
//! fixed chunk size and reduced in chunk order, so results are identical
//! for any worker-thread count.

use rayon::prelude::*;

use crate::datasets::{FederationDataset, LabeledDataset};
use crate::error::{Error, Result};
use crate::federation::{client_update, server_round, ClientUpdate, RoundConfig, ServerState};
use crate::metrics::{self, EvalReport};
use crate::nn::{forward, Head, ModelSpec, ParamVector};
use crate::rng;

const EVAL_CHUNK: usize = 512;

/// Fixed evaluation subsets: capped per-silo train/val indices (the OOD
/// set is always evaluated in full).
#[derive(Debug, Clone)]
pub struct EvalPlan {
    train_idx: Vec<Vec<usize>>,
    val_idx: Vec<Vec<usize>>,
}

impl EvalPlan {
    fn new(data: &FederationDataset, cfg: &RoundConfig) -> Self {
        let pick = |n: usize, silo: usize, role: u64| -> Vec<usize> {
            match cfg.eval_cap {
                Some(cap) if cap < n => {
                    let mut rng = rng::stream(cfg.seed, rng::TAG_EVAL_CAP, silo as u64, role);
                    rng::sample_indices(&mut rng, n, cap)
                }
                _ => (0..n).collect(),
            }
        };
        let train_idx = data
            .silos
            .iter()
            .enumerate()
            .map(|(s, silo)| pick(silo.train.n(), s, 0))
            .collect();
        let val_idx = data
            .silos
            .iter()
            .enumerate()
            .map(|(s, silo)| pick(silo.val.n(), s, 1))
            .collect();
        Self { train_idx, val_idx }
    }
}

type ChunkEval = (f64, Vec<f64>, Vec<bool>);

struct SetEval {
    loss: f64,
    accuracy: f64,
    /// Positive-class probabilities (sigmoid head only).
    scores: Vec<f64>,
    /// Per-evaluated-row correctness, aligned with the index list.
    correct: Vec<bool>,
}

fn eval_dataset(
    spec: &ModelSpec,
    params: &ParamVector,
    ds: &LabeledDataset,
    idx: &[usize],
    pool: Option<&rayon::ThreadPool>,
) -> Result<SetEval> {
    if idx.is_empty() {
        return Err(Error::InvalidInput("empty evaluation set".into()));
    }
    let k = spec.output_dim();
    let head = spec.head();
    let chunks: Vec<&[usize]> = idx.chunks(EVAL_CHUNK).collect();
    let eval_chunk = |chunk: &&[usize]| -> Result<ChunkEval> {
        let batch = ds.batch_of(chunk)?;
        let fp = forward(spec, params, &batch)?;
        let mut loss_sum = 0.0;
        let mut scores = Vec::new();
        let mut correct = Vec::with_capacity(batch.n());
        for i in 0..batch.n() {
            let row = &fp.logits[i * k..(i + 1) * k];
            let label = batch.labels()[i];
            loss_sum += crate::nn::sample_loss(row, label, head);
            match head {
                Head::SigmoidBce => {
                    scores.push(crate::nn::sigmoid(row[0]));
                    correct.push((row[0] >= 0.0) == (label == 1));
                }
                Head::SoftmaxCe => {
                    let mut best = 0;
                    for (j, &v) in row.iter().enumerate() {
                        if v > row[best] {
                            best = j;
                        }
                    }
                    correct.push(best as u32 == label);
                }
            }
        }
        Ok((loss_sum, scores, correct))
    };

    let parts: Vec<Result<ChunkEval>> = match pool {
        Some(pool) => pool.install(|| chunks.par_iter().map(eval_chunk).collect()),
        None => chunks.iter().map(eval_chunk).collect(),
    };

    let mut loss_sum = 0.0;
    let mut scores = Vec::new();
    let mut correct = Vec::with_capacity(idx.len());
    for part in parts {
        let (l, s, c) = part?;
        loss_sum += l;
        scores.extend(s);
        correct.extend(c);
    }
    let n = idx.len() as f64;
    let n_correct = correct.iter().filter(|&&c| c).count();
    Ok(SetEval {
        loss: loss_sum / n,
        accuracy: n_correct as f64 / n,
        scores,
        correct,
    })
}

/// Everything logged after one round.
#[derive(Debug, Clone)]
pub struct RoundRecord {
    /// 1-based round number.
    pub round: usize,
    /// Unweighted mean of per-silo train losses.
    pub train_loss: f64,
    /// Unweighted mean of per-silo validation losses.
    pub val_loss: f64,
    /// OOD-set metrics plus the per-silo validation-accuracy breakdown.
    pub ood: EvalReport,
}

/// Per-round history of one experiment.
#[derive(Debug, Clone)]
pub struct RoundLog {
    pub records: Vec<RoundRecord>,
}

impl RoundLog {
    /// The record with the lowest OOD loss (earliest on ties).
    pub fn best(&self) -> &RoundRecord {
        let mut best = &self.records[0];
        for r in &self.records[1..] {
            if r.ood.loss < best.ood.loss {
                best = r;
            }
        }
        best
    }

    /// Fixed-column CSV: one row per round, floats in shortest
    /// round-trip form.
    pub fn to_csv(&self) -> String {
        let mut out =
            String::from("round,train_loss,val_loss,ood_loss,ood_acc,ood_auroc,ood_auprc\n");
        for r in &self.records {
            out.push_str(&format!(
                "{},{},{},{},{},{},{}\n",
                r.round,
                r.train_loss,
                r.val_loss,
                r.ood.loss,
                r.ood.accuracy,
                r.ood.auroc,
                r.ood.auprc
            ));
        }
        out
    }
}

/// Round-by-round experiment state; both transports drive this.
pub struct ExperimentEngine<'a> {
    data: &'a FederationDataset,
    spec: ModelSpec,
    cfg: RoundConfig,
    state: ServerState,
    plan: EvalPlan,
    pool: Option<rayon::ThreadPool>,
    records: Vec<RoundRecord>,
}

impl<'a> ExperimentEngine<'a> {
    pub fn new(data: &'a FederationDataset, spec: &ModelSpec, cfg: &RoundConfig) -> Result<Self> {
        cfg.validate()?;
        data.validate_for_training()?;
        if spec.input_dim() != data.feature_dim() {
            return Err(Error::ShapeMismatch(format!(
                "model expects {} features, data has {}",
                spec.input_dim(),
                data.feature_dim()
            )));
        }
        let label_limit = match spec.head() {
            Head::SigmoidBce => 2,
            Head::SoftmaxCe => spec.output_dim() as u32,
        };
        let sets = data
            .silos
            .iter()
            .flat_map(|s| [&s.train, &s.val])
            .chain([&data.ood_test]);
        for set in sets {
            if set.labels.iter().any(|&y| y >= label_limit) {
                return Err(Error::InvalidInput(format!(
                    "{}: label out of range for the model head",
                    set.meta
                )));
            }
        }
        let pool = if cfg.threads > 1 {
            Some(
                rayon::ThreadPoolBuilder::new()
                    .num_threads(cfg.threads)
                    .build()
                    .map_err(|e| Error::Config(format!("thread pool: {e}")))?,
            )
        } else {
            None
        };
        Ok(Self {
            data,
            spec: spec.clone(),
            cfg: cfg.clone(),
            state: ServerState::new(spec, cfg),
            plan: EvalPlan::new(data, cfg),
            pool,
            records: Vec::with_capacity(cfg.rounds),
        })
    }

    pub fn round(&self) -> usize {
        self.state.round
    }

    pub fn finished(&self) -> bool {
        self.state.round >= self.cfg.rounds
    }

    pub fn n_clients(&self) -> usize {
        self.data.n_clients()
    }

    pub fn params(&self) -> &ParamVector {
        &self.state.params
    }

    pub fn v_bar_prev(&self) -> &[f64] {
        &self.state.v_bar_prev.values
    }

    pub fn cfg(&self) -> &RoundConfig {
        &self.cfg
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    /// Runs every client's update in-process for the current round.
    pub fn compute_local_updates(&self) -> Result<Vec<ClientUpdate>> {
        let round = self.state.round;
        let run = |(id, silo): (usize, &crate::datasets::Silo)| -> Result<ClientUpdate> {
            client_update(
                &silo.train,
                &self.spec,
                &self.state.params,
                &self.cfg,
                &self.state.v_bar_prev,
                id,
                round,
            )
        };
        match &self.pool {
            Some(pool) => pool.install(|| {
                self.data
                    .silos
                    .par_iter()
                    .enumerate()
                    .map(run)
                    .collect::<Result<Vec<_>>>()
            }),
            None => self.data.silos.iter().enumerate().map(run).collect(),
        }
    }

    /// Applies one round of uploads, then evaluates and logs.
    pub fn apply_round(&mut self, updates: &[ClientUpdate]) -> Result<()> {
        if self.finished() {
            return Err(Error::InvalidInput("experiment already finished".into()));
        }
        server_round(&mut self.state, updates, &self.cfg)?;
        let record = self.evaluate()?;
        self.records.push(record);
        Ok(())
    }

    fn evaluate(&self) -> Result<RoundRecord> {
        let pool = self.pool.as_ref();
        // silo evals are small; parallelize across silos rather than
        // inside them (the OOD eval below parallelizes over chunks)
        let eval_silo = |(s, silo): (usize, &crate::datasets::Silo)| -> Result<(SetEval, SetEval)> {
            let tr = eval_dataset(
                &self.spec,
                &self.state.params,
                &silo.train,
                &self.plan.train_idx[s],
                None,
            )?;
            let va = eval_dataset(
                &self.spec,
                &self.state.params,
                &silo.val,
                &self.plan.val_idx[s],
                None,
            )?;
            Ok((tr, va))
        };
        let silo_evals: Vec<(SetEval, SetEval)> = match pool {
            Some(pool) => pool.install(|| {
                self.data
                    .silos
                    .par_iter()
                    .enumerate()
                    .map(eval_silo)
                    .collect::<Result<Vec<_>>>()
            })?,
            None => self
                .data
                .silos
                .iter()
                .enumerate()
                .map(eval_silo)
                .collect::<Result<Vec<_>>>()?,
        };

        let mut train_losses = Vec::with_capacity(self.data.n_clients());
        let mut val_losses = Vec::with_capacity(self.data.n_clients());
        let mut per_silo_val_acc = Vec::with_capacity(self.data.n_clients());
        let mut per_subenv = Vec::new();
        for (s, silo) in self.data.silos.iter().enumerate() {
            let (tr, va) = &silo_evals[s];
            train_losses.push(tr.loss);
            let idx = &self.plan.val_idx[s];
            val_losses.push(va.loss);
            per_silo_val_acc.push(va.accuracy);
            if let Some(tags) = &silo.val.sub_env {
                let mut envs: Vec<u32> = idx.iter().map(|&i| tags[i]).collect();
                envs.sort_unstable();
                envs.dedup();
                for env in envs {
                    let mut hit = 0usize;
                    let mut total = 0usize;
                    for (pos, &i) in idx.iter().enumerate() {
                        if tags[i] == env {
                            total += 1;
                            hit += usize::from(va.correct[pos]);
                        }
                    }
                    per_subenv.push((s, env, hit as f64 / total as f64));
                }
            }
        }

        let ood_idx: Vec<usize> = (0..self.data.ood_test.n()).collect();
        let ood = eval_dataset(
            &self.spec,
            &self.state.params,
            &self.data.ood_test,
            &ood_idx,
            pool,
        )?;
        let (ood_auroc, ood_auprc) = if self.spec.head() == Head::SigmoidBce {
            let labels = &self.data.ood_test.labels;
            (
                metrics::auroc(&ood.scores, labels).unwrap_or(f64::NAN),
                metrics::auprc(&ood.scores, labels).unwrap_or(f64::NAN),
            )
        } else {
            (f64::NAN, f64::NAN)
        };

        let n = self.data.n_clients() as f64;
        Ok(RoundRecord {
            round: self.state.round,
            train_loss: train_losses.iter().sum::<f64>() / n,
            val_loss: val_losses.iter().sum::<f64>() / n,
            ood: EvalReport {
                loss: ood.loss,
                accuracy: ood.accuracy,
                auroc: ood_auroc,
                auprc: ood_auprc,
                per_silo_accuracy: per_silo_val_acc,
                per_subenv_accuracy: if per_subenv.is_empty() {
                    None
                } else {
                    Some(per_subenv)
                },
            },
        })
    }

    pub fn into_log(self) -> Result<RoundLog> {
        if self.records.is_empty() {
            return Err(Error::InvalidInput("no rounds were run".into()));
        }
        Ok(RoundLog {
            records: self.records,
        })
    }
}

/// Runs the whole experiment in-process: `rounds` rounds of local client
/// updates and server steps, evaluating after each round.
pub fn run_experiment(
    data: &FederationDataset,
    spec: &ModelSpec,
    cfg: &RoundConfig,
) -> Result<RoundLog> {
    let mut engine = ExperimentEngine::new(data, spec, cfg)?;
    while !engine.finished() {
        let updates = engine.compute_local_updates()?;
        engine.apply_round(&updates)?;
    }
    engine.into_log()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datasets::make_synth_spurious;
    use crate::federation::AlgoMode;

    fn small_cfg(mode: AlgoMode, seed: u64, rounds: usize) -> RoundConfig {
        RoundConfig {
            mode,
            lr: 3e-3,
            lambda: 1.0,
            rounds,
            batch_size: 32,
            geo_chunk: 8,
            seed,
            weight_decay: 0.001,
            ..RoundConfig::default()
        }
    }

    #[test]
    fn one_round_log_has_finite_entries() {
        let data = make_synth_spurious(48, 4, &[0.2, 0.8], 0.9, 5).unwrap();
        let spec = ModelSpec::sigmoid_mlp(5, &[8]).unwrap();
        let log = run_experiment(&data, &spec, &small_cfg(AlgoMode::FedSgd, 1, 1)).unwrap();
        assert_eq!(log.records.len(), 1);
        let r = &log.records[0];
        assert_eq!(r.round, 1);
        for v in [
            r.train_loss,
            r.val_loss,
            r.ood.loss,
            r.ood.accuracy,
            r.ood.auroc,
            r.ood.auprc,
        ] {
            assert!(v.is_finite(), "{r:?}");
        }
        assert_eq!(r.ood.per_silo_accuracy.len(), 2);
    }

    #[test]
    fn same_seed_is_bit_identical() {
        let data = make_synth_spurious(40, 4, &[0.2, 0.6], 0.9, 6).unwrap();
        let spec = ModelSpec::sigmoid_mlp(5, &[8]).unwrap();
        for mode in [AlgoMode::FishrInterGeo, AlgoMode::FishrIntraGeo] {
            let cfg = small_cfg(mode, 3, 4);
            let a = run_experiment(&data, &spec, &cfg).unwrap();
            let b = run_experiment(&data, &spec, &cfg).unwrap();
            assert_eq!(a.to_csv(), b.to_csv(), "{mode}");
        }
    }

    #[test]
    fn thread_count_does_not_change_results() {
        let data = make_synth_spurious(64, 4, &[0.2, 0.5, 0.8], 0.9, 7).unwrap();
        let spec = ModelSpec::sigmoid_mlp(5, &[8]).unwrap();
        let mut cfg = small_cfg(AlgoMode::FishrIntraGeo, 4, 3);
        let serial = run_experiment(&data, &spec, &cfg).unwrap();
        cfg.threads = 4;
        let parallel = run_experiment(&data, &spec, &cfg).unwrap();
        assert_eq!(serial.to_csv(), parallel.to_csv());
    }

    #[test]
    fn eval_cap_is_deterministic_and_smaller() {
        let data = make_synth_spurious(200, 4, &[0.3], 0.9, 8).unwrap();
        let spec = ModelSpec::sigmoid_mlp(5, &[8]).unwrap();
        let mut cfg = small_cfg(AlgoMode::FedSgd, 5, 2);
        cfg.eval_cap = Some(50);
        let a = run_experiment(&data, &spec, &cfg).unwrap();
        let b = run_experiment(&data, &spec, &cfg).unwrap();
        assert_eq!(a.to_csv(), b.to_csv());
    }

    #[test]
    fn best_round_takes_first_minimum() {
        let mk = |round: usize, loss: f64| RoundRecord {
            round,
            train_loss: 0.0,
            val_loss: 0.0,
            ood: EvalReport {
                loss,
                accuracy: 0.0,
                auroc: f64::NAN,
                auprc: f64::NAN,
                per_silo_accuracy: vec![],
                per_subenv_accuracy: None,
            },
        };
        let log = RoundLog {
            records: vec![mk(1, 0.5), mk(2, 0.3), mk(3, 0.3), mk(4, 0.4)],
        };
        assert_eq!(log.best().round, 2);
    }

    #[test]
    fn csv_has_fixed_columns() {
        let data = make_synth_spurious(32, 3, &[0.2], 0.9, 9).unwrap();
        let spec = ModelSpec::sigmoid_mlp(4, &[6]).unwrap();
        let log = run_experiment(&data, &spec, &small_cfg(AlgoMode::Geometric, 6, 2)).unwrap();
        let csv = log.to_csv();
        let mut lines = csv.lines();
        assert_eq!(
            lines.next().unwrap(),
            "round,train_loss,val_loss,ood_loss,ood_acc,ood_auroc,ood_auprc"
        );
        assert_eq!(lines.count(), 2);
    }
}
