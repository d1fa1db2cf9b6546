//! Process-separated mode: one HTTP server, N polling clients.
//!
//! The server executes the same [`ExperimentEngine`] as the in-process
//! runner and advances a round once every registered client has posted
//! its update; requests are handled strictly one at a time, so arrival
//! order cannot perturb the math. Clients poll `GET /round`, compute
//! their update locally from the broadcast weights, and exit once the
//! round counter reaches their configured total.

use std::collections::BTreeMap;
use std::net::TcpListener;
use std::time::Duration;

use crate::aggregation::VarianceDiag;
use crate::datasets::FederationDataset;
use crate::error::{Error, Result};
use crate::federation::wire::{Ack, RegisterResponse, RoundInfo, UpdateRequest, WireError};
use crate::federation::{client_update, ClientUpdate, ExperimentEngine, RoundConfig, RoundLog};
use crate::nn::{ModelSpec, ParamVector};

const CLIENT_POLL: Duration = Duration::from_millis(2);
const RETRY_BASE: Duration = Duration::from_millis(50);
const MAX_ATTEMPTS: usize = 5;

fn json_response(status: u16, body: &impl serde::Serialize) -> tiny_http::Response<std::io::Cursor<Vec<u8>>> {
    let payload = serde_json::to_vec(body).expect("wire types serialize");
    let header =
        tiny_http::Header::from_bytes(&b"Content-Type"[..], &b"application/json"[..]).unwrap();
    tiny_http::Response::from_data(payload)
        .with_status_code(status)
        .with_header(header)
}

fn error_response(
    status: u16,
    msg: impl Into<String>,
    expected_round: Option<usize>,
) -> tiny_http::Response<std::io::Cursor<Vec<u8>>> {
    json_response(
        status,
        &WireError {
            error: msg.into(),
            expected_round,
        },
    )
}

/// Serves one experiment on an already-bound listener and returns the
/// same round log an in-process run would produce. The server keeps
/// answering `GET /round` after the last round until every client has
/// seen the final round number, then shuts down.
pub fn serve_experiment(
    data: &FederationDataset,
    spec: &ModelSpec,
    cfg: &RoundConfig,
    listener: TcpListener,
) -> Result<RoundLog> {
    let server = tiny_http::Server::from_listener(listener, None)
        .map_err(|e| Error::Wire(format!("cannot start server: {e}")))?;
    let mut engine = ExperimentEngine::new(data, spec, cfg)?;
    let n_clients = engine.n_clients();
    let n_params = engine.params().len();
    let head_len = engine.v_bar_prev().len();

    let mut registered = 0usize;
    let mut pending: BTreeMap<usize, ClientUpdate> = BTreeMap::new();
    let mut final_gets = 0usize;

    loop {
        let mut request = server.recv()?;
        let method = request.method().clone();
        let url = request.url().to_string();
        match (method.as_str(), url.as_str()) {
            ("POST", "/register") => {
                if registered == n_clients {
                    request.respond(error_response(
                        409,
                        format!("all {n_clients} clients already registered"),
                        None,
                    ))?;
                } else {
                    let client_id = registered;
                    registered += 1;
                    request.respond(json_response(200, &RegisterResponse { client_id }))?;
                }
            }
            ("GET", "/round") => {
                let info = RoundInfo {
                    round: engine.round(),
                    mode: cfg.mode.as_str().to_string(),
                    lambda: cfg.lambda,
                    w: engine.params().values().to_vec(),
                    v_bar_prev: engine.v_bar_prev().to_vec(),
                };
                let finished = engine.finished();
                request.respond(json_response(200, &info))?;
                if finished {
                    final_gets += 1;
                    if final_gets == n_clients {
                        break;
                    }
                }
            }
            ("POST", "/update") => {
                let mut body = String::new();
                request.as_reader().read_to_string(&mut body)?;
                let parsed: std::result::Result<UpdateRequest, _> = serde_json::from_str(&body);
                let response = match parsed {
                    Err(e) => error_response(400, format!("malformed update: {e}"), None),
                    Ok(update) => {
                        let expected = engine.round();
                        if let Err(e) = update.validate() {
                            error_response(400, e.to_string(), None)
                        } else if update.client_id >= n_clients {
                            error_response(
                                400,
                                format!("unknown client {}", update.client_id),
                                None,
                            )
                        } else if engine.finished() {
                            error_response(409, "experiment already finished", Some(expected))
                        } else if update.round != expected {
                            error_response(
                                409,
                                format!("stale update for round {}", update.round),
                                Some(expected),
                            )
                        } else if pending.contains_key(&update.client_id) {
                            error_response(
                                409,
                                format!("duplicate update from client {}", update.client_id),
                                Some(expected),
                            )
                        } else if update.grad.len() != n_params {
                            error_response(
                                400,
                                format!(
                                    "gradient has {} values, expected {n_params}",
                                    update.grad.len()
                                ),
                                None,
                            )
                        } else if update.var_diag.len() != head_len {
                            error_response(
                                400,
                                format!(
                                    "variance diagonal has {} values, expected {head_len}",
                                    update.var_diag.len()
                                ),
                                None,
                            )
                        } else {
                            pending.insert(
                                update.client_id,
                                ClientUpdate {
                                    client_id: update.client_id,
                                    grad: update.grad,
                                    var_diag: VarianceDiag {
                                        values: update.var_diag,
                                        sample_count: update.n,
                                    },
                                    n: update.n,
                                },
                            );
                            json_response(200, &Ack { ack: true })
                        }
                    }
                };
                request.respond(response)?;
                if pending.len() == n_clients {
                    let updates: Vec<ClientUpdate> = std::mem::take(&mut pending)
                        .into_values()
                        .collect();
                    engine.apply_round(&updates)?;
                }
            }
            _ => {
                request.respond(error_response(404, format!("no such endpoint {url}"), None))?;
            }
        }
    }
    engine.into_log()
}

fn agent() -> ureq::Agent {
    ureq::Agent::config_builder()
        .http_status_as_error(false)
        .build()
        .into()
}

fn with_retries<T>(what: &str, mut op: impl FnMut() -> std::result::Result<T, ureq::Error>) -> Result<T> {
    let mut attempt = 0;
    loop {
        match op() {
            Ok(v) => return Ok(v),
            Err(e) => {
                attempt += 1;
                if attempt >= MAX_ATTEMPTS {
                    return Err(Error::Wire(format!(
                        "{what} failed after {MAX_ATTEMPTS} attempts: {e}"
                    )));
                }
                std::thread::sleep(RETRY_BASE * attempt as u32);
            }
        }
    }
}

fn expect_ok<T: serde::de::DeserializeOwned>(
    what: &str,
    response: &mut ureq::http::Response<ureq::Body>,
) -> Result<T> {
    let status = response.status().as_u16();
    if status != 200 {
        let err: WireError = response
            .body_mut()
            .read_json()
            .unwrap_or_else(|_| WireError {
                error: format!("http status {status}"),
                expected_round: None,
            });
        return Err(Error::Wire(format!("{what}: {} (status {status})", err.error)));
    }
    response
        .body_mut()
        .read_json()
        .map_err(|e| Error::Wire(format!("{what}: bad response body: {e}")))
}

/// Runs one client against a serving experiment: registers, then computes
/// and posts an update for every round of the shared config. The client
/// regenerates its silo from the same dataset the server holds and takes
/// the one matching its assigned id. Returns the assigned client id.
pub fn run_wire_client(
    base_url: &str,
    data: &FederationDataset,
    spec: &ModelSpec,
    cfg: &RoundConfig,
) -> Result<usize> {
    let agent = agent();
    let base = base_url.trim_end_matches('/');

    let mut response = with_retries("register", || {
        agent.post(format!("{base}/register")).send_empty()
    })?;
    let reg: RegisterResponse = expect_ok("register", &mut response)?;
    let client_id = reg.client_id;
    let silo = data
        .silos
        .get(client_id)
        .ok_or_else(|| Error::Wire(format!("server assigned unknown silo {client_id}")))?;

    let mut last_done: Option<usize> = None;
    loop {
        let mut response =
            with_retries("fetch round", || agent.get(format!("{base}/round")).call())?;
        let info: RoundInfo = expect_ok("fetch round", &mut response)?;
        if info.round >= cfg.rounds {
            break;
        }
        if last_done == Some(info.round) {
            // server is still collecting this round's updates
            std::thread::sleep(CLIENT_POLL);
            continue;
        }
        if info.mode != cfg.mode.as_str() {
            return Err(Error::Wire(format!(
                "server runs mode {}, client configured for {}",
                info.mode, cfg.mode
            )));
        }
        let params = ParamVector::from_values(spec, info.w)?;
        let v_bar = VarianceDiag {
            values: info.v_bar_prev,
            sample_count: 1,
        };
        let update = client_update(
            &silo.train,
            spec,
            &params,
            cfg,
            &v_bar,
            client_id,
            info.round,
        )?;
        let request = UpdateRequest {
            client_id,
            round: info.round,
            grad: update.grad,
            var_diag: update.var_diag.values,
            n: update.n,
        };
        let mut response = with_retries("post update", || {
            agent.post(format!("{base}/update")).send_json(&request)
        })?;
        let _: Ack = expect_ok("post update", &mut response)?;
        last_done = Some(info.round);
    }
    Ok(client_id)
}
