//! Round-based server-client protocol.
//!
//! Each round every client computes a gradient over a seeded mini-batch of
//! its silo (plus the head-gradient variance diagonal and, for the Fishr
//! modes, the variance penalty against last round's broadcast mean), and
//! the server combines the uploads arithmetically or with the weighted
//! geometric mean before one optimizer step. Rounds run in-process or over
//! the HTTP+JSON wire protocol in [`http`]; both paths drive the same
//! [`ExperimentEngine`] and produce identical logs.

mod engine;
pub mod http;
pub mod wire;

pub use engine::{run_experiment, EvalPlan, ExperimentEngine, RoundLog, RoundRecord};

use crate::aggregation::{
    arith_mean, fishr_penalty_grad, grad_variance_diag, mean_variance_diag, weighted_geo_mean,
    GradientSet, VarianceDiag,
};
use crate::datasets::LabeledDataset;
use crate::error::{Error, Result};
use crate::nn::{
    backward_full, per_sample_head_grads, AdamState, Batch, ModelSpec, Optimizer, ParamVector,
};
use crate::rng;

/// The six experiment arms: how clients aggregate locally and how the
/// server combines uploads.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AlgoMode {
    /// Arithmetic mean of client gradients.
    FedSgd,
    /// Weighted geometric mean of client gradients, no penalty.
    Geometric,
    /// Arithmetic mean plus the variance penalty on clients.
    FedCurv,
    /// Weighted geometric mean across clients plus the variance penalty.
    FishrInterGeo,
    /// Arithmetic mean of within-client chunk means plus the penalty.
    FishrIntraArith,
    /// Weighted geometric mean over within-client chunks plus the penalty.
    FishrIntraGeo,
}

impl AlgoMode {
    pub const ALL: [AlgoMode; 6] = [
        AlgoMode::FedSgd,
        AlgoMode::Geometric,
        AlgoMode::FedCurv,
        AlgoMode::FishrInterGeo,
        AlgoMode::FishrIntraArith,
        AlgoMode::FishrIntraGeo,
    ];

    /// Whether clients add the variance penalty to their head gradient.
    pub fn uses_fishr_penalty(&self) -> bool {
        matches!(
            self,
            AlgoMode::FedCurv
                | AlgoMode::FishrInterGeo
                | AlgoMode::FishrIntraArith
                | AlgoMode::FishrIntraGeo
        )
    }

    /// Whether clients aggregate per-chunk gradients inside the silo.
    pub fn is_intra(&self) -> bool {
        matches!(self, AlgoMode::FishrIntraArith | AlgoMode::FishrIntraGeo)
    }

    /// Whether the server combines uploads with the geometric mean.
    pub fn server_combines_geo(&self) -> bool {
        matches!(self, AlgoMode::Geometric | AlgoMode::FishrInterGeo)
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            AlgoMode::FedSgd => "fed_sgd",
            AlgoMode::Geometric => "geometric",
            AlgoMode::FedCurv => "fed_curv",
            AlgoMode::FishrInterGeo => "fishr_inter_geo",
            AlgoMode::FishrIntraArith => "fishr_intra_arith",
            AlgoMode::FishrIntraGeo => "fishr_intra_geo",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Self::ALL
            .iter()
            .copied()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown algorithm mode {s:?}")))
    }
}

impl std::fmt::Display for AlgoMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Server-side optimizer choice.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OptimizerKind {
    Adam,
    Sgd,
}

impl OptimizerKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            OptimizerKind::Adam => "adam",
            OptimizerKind::Sgd => "sgd",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "adam" => Ok(OptimizerKind::Adam),
            "sgd" => Ok(OptimizerKind::Sgd),
            other => Err(Error::Config(format!("unknown optimizer {other:?}"))),
        }
    }
}

/// Per-run hyperparameters shared by server and clients.
#[derive(Debug, Clone)]
pub struct RoundConfig {
    pub mode: AlgoMode,
    pub lr: f64,
    /// Fishr coefficient; 0 disables the penalty entirely.
    pub lambda: f64,
    pub rounds: usize,
    pub batch_size: usize,
    /// Chunk size for the intra-silo geometric mean.
    pub geo_chunk: usize,
    pub seed: u64,
    pub weight_decay: f64,
    pub optimizer: OptimizerKind,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    /// Cap on evaluated train/val rows per silo (the OOD set is never
    /// capped); indices are fixed per run.
    pub eval_cap: Option<usize>,
    /// Worker threads for client updates and evaluation. Results are
    /// identical for any value.
    pub threads: usize,
}

impl Default for RoundConfig {
    fn default() -> Self {
        Self {
            mode: AlgoMode::FedSgd,
            lr: 3e-4,
            lambda: 0.0,
            rounds: 500,
            batch_size: 64,
            geo_chunk: 8,
            seed: 0,
            weight_decay: 0.0,
            optimizer: OptimizerKind::Adam,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            eval_cap: None,
            threads: 1,
        }
    }
}

impl RoundConfig {
    pub fn validate(&self) -> Result<()> {
        if self.rounds == 0 {
            return Err(Error::Config("rounds must be >= 1".into()));
        }
        if self.batch_size == 0 || self.geo_chunk == 0 {
            return Err(Error::Config("batch_size and geo_chunk must be >= 1".into()));
        }
        if !(self.lr.is_finite() && self.lr > 0.0) {
            return Err(Error::Config(format!("bad learning rate {}", self.lr)));
        }
        if !(self.lambda.is_finite() && self.lambda >= 0.0) {
            return Err(Error::Config(format!("bad lambda {}", self.lambda)));
        }
        if self.threads == 0 {
            return Err(Error::Config("threads must be >= 1".into()));
        }
        Ok(())
    }

    pub(crate) fn build_optimizer(&self, n_params: usize) -> Optimizer {
        match self.optimizer {
            OptimizerKind::Adam => Optimizer::Adam(
                AdamState::new(n_params, self.lr, self.weight_decay)
                    .with_betas(self.adam_beta1, self.adam_beta2),
            ),
            OptimizerKind::Sgd => Optimizer::Sgd {
                lr: self.lr,
                weight_decay: self.weight_decay,
            },
        }
    }
}

/// One client's per-round upload.
#[derive(Debug, Clone)]
pub struct ClientUpdate {
    pub client_id: usize,
    pub grad: Vec<f64>,
    pub var_diag: VarianceDiag,
    pub n: usize,
}

/// Server state carried across rounds.
#[derive(Debug, Clone)]
pub struct ServerState {
    pub params: ParamVector,
    pub optimizer: Optimizer,
    /// Mean variance diagonal of the previous round's uploads; zeros
    /// before round 0 has completed.
    pub v_bar_prev: VarianceDiag,
    pub round: usize,
}

impl ServerState {
    pub fn new(spec: &ModelSpec, cfg: &RoundConfig) -> Self {
        let params = crate::nn::init_params(spec, cfg.seed);
        let optimizer = cfg.build_optimizer(params.len());
        Self {
            params,
            optimizer,
            v_bar_prev: VarianceDiag::zeros(spec.head_param_count()),
            round: 0,
        }
    }
}

/// The round's seeded mini-batch: the whole silo in natural order when
/// `batch_size` covers it, otherwise `batch_size` rows drawn without
/// replacement from the client/round stream.
fn sample_batch(
    data: &LabeledDataset,
    cfg: &RoundConfig,
    client_id: usize,
    round: usize,
) -> Result<Batch> {
    let n = data.n();
    if n == 0 {
        return Err(Error::InvalidInput(format!("client {client_id} has no data")));
    }
    if cfg.batch_size >= n {
        data.to_batch()
    } else {
        let mut rng = rng::client_round_stream(cfg.seed, client_id, round);
        let idx = rng::sample_indices(&mut rng, n, cfg.batch_size);
        data.batch_of(&idx)
    }
}

fn add_penalty(
    grad: &mut [f64],
    spec: &ModelSpec,
    params: &ParamVector,
    batch: &Batch,
    cfg: &RoundConfig,
    v_bar_prev: &VarianceDiag,
) -> Result<()> {
    if cfg.mode.uses_fishr_penalty() && cfg.lambda > 0.0 {
        let penalty = fishr_penalty_grad(spec, params, batch, v_bar_prev)?;
        let head = &mut grad[spec.head_offset()..];
        for (g, p) in head.iter_mut().zip(penalty.iter()) {
            *g += cfg.lambda * p;
        }
    }
    Ok(())
}

/// Inter-silo client update: one full-batch gradient over the round's
/// mini-batch, the penalty folded into the head block, and the variance
/// diagonal of the per-sample head gradients.
pub fn client_update_inter(
    data: &LabeledDataset,
    spec: &ModelSpec,
    params: &ParamVector,
    cfg: &RoundConfig,
    v_bar_prev: &VarianceDiag,
    client_id: usize,
    round: usize,
) -> Result<ClientUpdate> {
    let batch = sample_batch(data, cfg, client_id, round)?;
    let mut grad = backward_full(spec, params, &batch)?;
    let per_sample = per_sample_head_grads(spec, params, &batch)?;
    let var_diag = grad_variance_diag(&per_sample)?;
    add_penalty(&mut grad, spec, params, &batch, cfg, v_bar_prev)?;
    Ok(ClientUpdate {
        client_id,
        grad,
        var_diag,
        n: batch.n(),
    })
}

/// Intra-silo client update: the round's mini-batch is cut into
/// `geo_chunk`-sized chunks (in draw order, last chunk possibly short),
/// one full-parameter gradient per chunk, combined with the weighted
/// geometric mean (or the arithmetic mean for `FishrIntraArith`). The
/// penalty and variance diagonal come from the whole mini-batch.
pub fn client_update_intra(
    data: &LabeledDataset,
    spec: &ModelSpec,
    params: &ParamVector,
    cfg: &RoundConfig,
    v_bar_prev: &VarianceDiag,
    client_id: usize,
    round: usize,
) -> Result<ClientUpdate> {
    let batch = sample_batch(data, cfg, client_id, round)?;
    let n = batch.n();
    let mut chunk_grads = Vec::with_capacity(n.div_ceil(cfg.geo_chunk));
    let mut start = 0;
    while start < n {
        let end = (start + cfg.geo_chunk).min(n);
        let rows: Vec<usize> = (start..end).collect();
        let mut inputs = Vec::with_capacity(rows.len() * batch.dim());
        let mut labels = Vec::with_capacity(rows.len());
        for &r in &rows {
            inputs.extend_from_slice(batch.row(r));
            labels.push(batch.labels()[r]);
        }
        let chunk = Batch::new(inputs, batch.dim(), labels)?;
        chunk_grads.push(backward_full(spec, params, &chunk)?);
        start = end;
    }
    let set = GradientSet::new(chunk_grads)?;
    let mut grad = if cfg.mode == AlgoMode::FishrIntraArith {
        arith_mean(&set)
    } else {
        weighted_geo_mean(&set)
    };
    let per_sample = per_sample_head_grads(spec, params, &batch)?;
    let var_diag = grad_variance_diag(&per_sample)?;
    add_penalty(&mut grad, spec, params, &batch, cfg, v_bar_prev)?;
    Ok(ClientUpdate {
        client_id,
        grad,
        var_diag,
        n,
    })
}

/// Dispatches to the intra- or inter-silo update for the config's mode.
pub fn client_update(
    data: &LabeledDataset,
    spec: &ModelSpec,
    params: &ParamVector,
    cfg: &RoundConfig,
    v_bar_prev: &VarianceDiag,
    client_id: usize,
    round: usize,
) -> Result<ClientUpdate> {
    if cfg.mode.is_intra() {
        client_update_intra(data, spec, params, cfg, v_bar_prev, client_id, round)
    } else {
        client_update_inter(data, spec, params, cfg, v_bar_prev, client_id, round)
    }
}

/// Cross-client combination for the mode, over updates sorted by client
/// id. The sort makes the result independent of arrival order.
pub fn combine_gradients(mode: AlgoMode, updates: &[ClientUpdate]) -> Result<Vec<f64>> {
    if updates.is_empty() {
        return Err(Error::InvalidInput("no client updates".into()));
    }
    let mut order: Vec<&ClientUpdate> = updates.iter().collect();
    order.sort_by_key(|u| u.client_id);
    let set = GradientSet::new(order.iter().map(|u| u.grad.clone()).collect())?;
    Ok(if mode.server_combines_geo() {
        weighted_geo_mean(&set)
    } else {
        arith_mean(&set)
    })
}

/// One server round: combine sorted uploads, take an optimizer step,
/// refresh the broadcast variance mean, advance the round counter.
pub fn server_round(
    state: &mut ServerState,
    updates: &[ClientUpdate],
    cfg: &RoundConfig,
) -> Result<()> {
    if updates.is_empty() {
        return Err(Error::InvalidInput("no client updates".into()));
    }
    let mut order: Vec<&ClientUpdate> = updates.iter().collect();
    order.sort_by_key(|u| u.client_id);
    for pair in order.windows(2) {
        if pair[0].client_id == pair[1].client_id {
            return Err(Error::InvalidInput(format!(
                "duplicate update from client {}",
                pair[0].client_id
            )));
        }
    }
    let n_params = state.params.len();
    let head_len = state.v_bar_prev.len();
    for u in &order {
        if u.grad.len() != n_params {
            return Err(Error::ShapeMismatch(format!(
                "client {} sent {} gradient values, expected {n_params}",
                u.client_id,
                u.grad.len()
            )));
        }
        if u.var_diag.len() != head_len {
            return Err(Error::ShapeMismatch(format!(
                "client {} sent {} variance values, expected {head_len}",
                u.client_id,
                u.var_diag.len()
            )));
        }
    }

    let combined = combine_gradients(cfg.mode, updates)?;
    state
        .optimizer
        .step(state.params.values_mut(), &combined)?;
    let diags: Vec<VarianceDiag> = order.iter().map(|u| u.var_diag.clone()).collect();
    state.v_bar_prev = mean_variance_diag(&diags)?;
    state.round += 1;
    Ok(())
}
