//! Wire message types for the HTTP+JSON protocol.
//!
//! Endpoints:
//! - `POST /register` -> [`RegisterResponse`]
//! - `GET /round` -> [`RoundInfo`]
//! - `POST /update` with [`UpdateRequest`] -> [`Ack`]
//!
//! Numbers travel as JSON doubles in shortest round-trip form, so every
//! `f64` survives the trip bit-exactly and wire-mode runs reproduce
//! in-process runs byte for byte.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RegisterResponse {
    pub client_id: usize,
}

/// Broadcast state for the current round. Clients stop polling once
/// `round` reaches their configured round count.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RoundInfo {
    pub round: usize,
    pub mode: String,
    pub lambda: f64,
    pub w: Vec<f64>,
    pub v_bar_prev: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct UpdateRequest {
    pub client_id: usize,
    pub round: usize,
    pub grad: Vec<f64>,
    pub var_diag: Vec<f64>,
    pub n: usize,
}

impl UpdateRequest {
    /// Finiteness never survives NaN round-trips through JSON anyway;
    /// reject bad payloads before they reach the aggregation math.
    pub fn validate(&self) -> Result<()> {
        if self.n == 0 {
            return Err(Error::Wire("update with zero samples".into()));
        }
        if self.grad.iter().any(|v| !v.is_finite()) {
            return Err(Error::Wire("non-finite gradient value".into()));
        }
        if self.var_diag.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(Error::Wire("variance diagonal must be finite and >= 0".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Ack {
    pub ack: bool,
}

/// Error payload for 4xx responses; `expected_round` accompanies stale
/// or duplicate updates.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct WireError {
    pub error: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub expected_round: Option<usize>,
}
