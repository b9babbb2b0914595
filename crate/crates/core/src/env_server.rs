//! Newline-delimited JSON environment protocol. One scenario maker slot is
//! driven by a remote client; every other maker runs its configured policy.
//!
//! Requests carry `"v": 1` and a `type` of `hello`, `reset`, `step` or
//! `close`. Every request gets exactly one response line.

use std::io::{BufRead, BufReader, BufWriter, Write};
use std::net::{SocketAddr, TcpListener};

use log::{info, warn};
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::agents::{MmAction, MmObservation, StepRewards};
use crate::config::ScenarioConfig;
use crate::engine::Simulation;
use crate::error::{Result, SimError};

pub const PROTOCOL_VERSION: u64 = 1;

/// Observation vector layout, in order. Bump [`PROTOCOL_VERSION`] if changed.
pub const OBS_FIELDS: [&str; 9] = [
    "inventory",
    "mid",
    "s_ref0",
    "depth",
    "net_flow_prev",
    "abs_volume_prev",
    "market_volume_prev",
    "market_share_prev",
    "inv_pnl_prev",
];

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ObservationFeatures {
    pub inventory: f64,
    pub mid: f64,
    pub s_ref0: f64,
    pub depth: f64,
    pub net_flow_prev: f64,
    pub abs_volume_prev: f64,
    pub market_volume_prev: f64,
    pub market_share_prev: f64,
    pub inv_pnl_prev: f64,
}

impl ObservationFeatures {
    pub fn to_vec(&self) -> Vec<f64> {
        vec![
            self.inventory,
            self.mid,
            self.s_ref0,
            self.depth,
            self.net_flow_prev,
            self.abs_volume_prev,
            self.market_volume_prev,
            self.market_share_prev,
            self.inv_pnl_prev,
        ]
    }

    pub fn decode(v: &[f64]) -> Result<Self> {
        let [inventory, mid, s_ref0, depth, net_flow_prev, abs_volume_prev, market_volume_prev, market_share_prev, inv_pnl_prev] =
            <[f64; 9]>::try_from(v).map_err(|_| {
                SimError::Protocol(format!(
                    "observation width {} != {}",
                    v.len(),
                    OBS_FIELDS.len()
                ))
            })?;
        Ok(Self {
            inventory,
            mid,
            s_ref0,
            depth,
            net_flow_prev,
            abs_volume_prev,
            market_volume_prev,
            market_share_prev,
            inv_pnl_prev,
        })
    }
}

pub fn encode_observation(obs: &MmObservation) -> ObservationFeatures {
    ObservationFeatures {
        inventory: obs.inventory,
        mid: obs.mid,
        s_ref0: obs.s_ref0,
        depth: obs.depth,
        net_flow_prev: obs.net_flow_prev(),
        abs_volume_prev: obs.abs_volume_prev(),
        market_volume_prev: obs.market_volume_prev,
        market_share_prev: obs.market_share_prev,
        inv_pnl_prev: obs.inv_pnl_prev,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Request {
    Hello {
        #[serde(default)]
        digest: Option<String>,
    },
    Reset {
        seed: u64,
    },
    Step {
        eps_b: f64,
        eps_s: f64,
        x: f64,
    },
    Close,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Response {
    Hello {
        v: u64,
        digest: String,
        agent_id: String,
        fields: Vec<String>,
        episode_length: u64,
    },
    Observation {
        v: u64,
        obs: Vec<f64>,
        fields: Vec<String>,
        t: u64,
    },
    Step {
        v: u64,
        obs: Vec<f64>,
        reward: f64,
        components: StepRewards,
        done: bool,
        clamped: bool,
        t: u64,
    },
    Error {
        v: u64,
        message: String,
        /// The session ends after a fatal error.
        fatal: bool,
    },
    Bye {
        v: u64,
    },
}

impl Response {
    fn error(message: impl Into<String>, fatal: bool) -> Self {
        Response::Error {
            v: PROTOCOL_VERSION,
            message: message.into(),
            fatal,
        }
    }

    pub fn ends_session(&self) -> bool {
        matches!(
            self,
            Response::Error { fatal: true, .. } | Response::Bye { .. }
        )
    }
}

/// Protocol state for one client connection. Owns its own engine.
#[derive(Debug)]
pub struct Session {
    config: ScenarioConfig,
    digest: String,
    slot: usize,
    greeted: bool,
    sim: Option<Simulation>,
    done: bool,
    steps_in_episode: u64,
}

impl Session {
    pub fn new(config: ScenarioConfig) -> Result<Self> {
        config.validate()?;
        let slots = config.external_slots();
        if slots.len() != 1 {
            return Err(SimError::invalid(
                "agents",
                format!(
                    "serving needs exactly one external agent, found {}",
                    slots.len()
                ),
            ));
        }
        let digest = config.digest()?;
        Ok(Self {
            slot: slots[0],
            config,
            digest,
            greeted: false,
            sim: None,
            done: false,
            steps_in_episode: 0,
        })
    }

    pub fn digest(&self) -> &str {
        &self.digest
    }

    /// Handles one request line and returns its response.
    pub fn handle_line(&mut self, line: &str) -> Response {
        let value: Value = match serde_json::from_str(line) {
            Ok(v) => v,
            Err(e) => return Response::error(format!("malformed message: {e}"), false),
        };
        let version = value.get("v").and_then(Value::as_u64);
        let is_hello = value.get("type").and_then(Value::as_str) == Some("hello");
        if version != Some(PROTOCOL_VERSION) {
            let msg = format!(
                "unsupported protocol version {:?}, expected {PROTOCOL_VERSION}",
                value.get("v")
            );
            return Response::error(msg, is_hello);
        }
        let req: Request = match serde_json::from_value(value) {
            Ok(r) => r,
            Err(e) => return Response::error(format!("malformed message: {e}"), false),
        };
        self.handle(req)
    }

    pub fn handle(&mut self, req: Request) -> Response {
        match req {
            Request::Hello { digest } => {
                if let Some(d) = digest {
                    if d != self.digest {
                        return Response::error(
                            format!("config digest mismatch: client {d}, server {}", self.digest),
                            true,
                        );
                    }
                }
                self.greeted = true;
                Response::Hello {
                    v: PROTOCOL_VERSION,
                    digest: self.digest.clone(),
                    agent_id: self.config.agents[self.slot].id.clone(),
                    fields: fields(),
                    episode_length: self.config.episode_length,
                }
            }
            _ if !self.greeted => Response::error("send hello first", false),
            Request::Reset { seed } => match self.reset(seed) {
                Ok(r) => r,
                Err(e) => Response::error(e.to_string(), false),
            },
            Request::Step { eps_b, eps_s, x } => match self.step(MmAction::new(eps_b, eps_s, x)) {
                Ok(r) => r,
                Err(e) => Response::error(e.to_string(), false),
            },
            Request::Close => Response::Bye {
                v: PROTOCOL_VERSION,
            },
        }
    }

    fn reset(&mut self, seed: u64) -> Result<Response> {
        match &mut self.sim {
            Some(sim) => sim.reseed(seed)?,
            None => self.sim = Some(Simulation::new(&self.config, seed)?),
        }
        self.done = false;
        self.steps_in_episode = 0;
        let sim = self.sim.as_ref().expect("simulation just created");
        let obs = encode_observation(&sim.world().observation(self.slot)).to_vec();
        Ok(Response::Observation {
            v: PROTOCOL_VERSION,
            obs,
            fields: fields(),
            t: 0,
        })
    }

    fn step(&mut self, action: MmAction) -> Result<Response> {
        if self.done {
            return Err(SimError::Protocol("episode is done; send reset".into()));
        }
        let sim = self
            .sim
            .as_mut()
            .ok_or_else(|| SimError::Protocol("send reset before step".into()))?;
        if !action.is_finite() {
            return Err(SimError::NonFinite("action"));
        }
        let out = sim.step(Some(action))?;
        let i = self.slot;
        self.steps_in_episode += 1;
        self.done = out.episode_end;
        let components = out.rewards[i];
        let obs = encode_observation(&out.observations[i]).to_vec();
        Ok(Response::Step {
            v: PROTOCOL_VERSION,
            obs,
            reward: scalar_reward(&components),
            components,
            done: self.done,
            clamped: out.clamped[i],
            t: self.steps_in_episode,
        })
    }
}

/// Training reward: total PnL plus the risk penalty.
pub fn scalar_reward(r: &StepRewards) -> f64 {
    r.total_pnl + r.penalty
}

fn fields() -> Vec<String> {
    OBS_FIELDS.iter().map(|s| s.to_string()).collect()
}

/// Runs one session over a line stream until close, EOF or a fatal error.
pub fn run_session<R: BufRead, W: Write>(
    session: &mut Session,
    reader: R,
    mut writer: W,
) -> Result<()> {
    for line in reader.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let resp = session.handle_line(&line);
        serde_json::to_writer(&mut writer, &resp)?;
        writer.write_all(b"\n")?;
        writer.flush()?;
        if resp.ends_session() {
            if let Response::Error { message, .. } = &resp {
                warn!("session refused: {message}");
            }
            break;
        }
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Endpoint {
    Stdio,
    Tcp(String),
}

impl std::str::FromStr for Endpoint {
    type Err = SimError;

    fn from_str(s: &str) -> Result<Self> {
        if s == "stdio" || s == "-" {
            return Ok(Endpoint::Stdio);
        }
        if let Some(addr) = s.strip_prefix("tcp:") {
            if addr.parse::<SocketAddr>().is_ok()
                || addr
                    .rsplit_once(':')
                    .is_some_and(|(h, p)| !h.is_empty() && p.parse::<u16>().is_ok())
            {
                return Ok(Endpoint::Tcp(addr.to_string()));
            }
        }
        Err(SimError::Config(format!(
            "bad endpoint `{s}`: expected `stdio` or `tcp:HOST:PORT`"
        )))
    }
}

/// A bound TCP server handing out one session per connection, in turn.
pub struct TcpServer {
    listener: TcpListener,
    config: ScenarioConfig,
}

impl TcpServer {
    pub fn bind(config: ScenarioConfig, addr: &str) -> Result<Self> {
        Session::new(config.clone())?;
        let listener = TcpListener::bind(addr)?;
        info!("listening on {}", listener.local_addr()?);
        Ok(Self { listener, config })
    }

    pub fn local_addr(&self) -> Result<SocketAddr> {
        Ok(self.listener.local_addr()?)
    }

    /// Serves connections one at a time; stops after `max_sessions` if set.
    pub fn run(&self, max_sessions: Option<usize>) -> Result<()> {
        for (served, stream) in self.listener.incoming().enumerate() {
            let stream = stream?;
            let peer = stream.peer_addr().ok();
            info!("session from {peer:?}");
            let mut session = Session::new(self.config.clone())?;
            let reader = BufReader::new(stream.try_clone()?);
            if let Err(e) = run_session(&mut session, reader, BufWriter::new(stream)) {
                warn!("session from {peer:?} ended with error: {e}");
            }
            if max_sessions.is_some_and(|m| served + 1 >= m) {
                break;
            }
        }
        Ok(())
    }
}

/// Serves `config` on `endpoint` until stdin closes or forever for TCP.
pub fn serve(config: ScenarioConfig, endpoint: &Endpoint) -> Result<()> {
    match endpoint {
        Endpoint::Stdio => {
            let mut session = Session::new(config)?;
            let stdin = std::io::stdin();
            run_session(&mut session, stdin.lock(), std::io::stdout().lock())
        }
        Endpoint::Tcp(addr) => TcpServer::bind(config, addr)?.run(None),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn endpoint_parsing() {
        assert_eq!("stdio".parse::<Endpoint>().unwrap(), Endpoint::Stdio);
        assert_eq!(
            "tcp:127.0.0.1:9000".parse::<Endpoint>().unwrap(),
            Endpoint::Tcp("127.0.0.1:9000".into())
        );
        assert_eq!(
            "tcp:localhost:9000".parse::<Endpoint>().unwrap(),
            Endpoint::Tcp("localhost:9000".into())
        );
        for bad in ["", "udp:1.2.3.4:5", "tcp:", "tcp:host", "tcp:host:99999"] {
            assert!(bad.parse::<Endpoint>().is_err(), "{bad}");
        }
    }

    #[test]
    fn observation_codec_round_trip() {
        let f = ObservationFeatures {
            inventory: -3.5,
            mid: 101.25,
            s_ref0: 5e-5,
            depth: 123.0,
            net_flow_prev: 2.0,
            abs_volume_prev: 8.0,
            market_volume_prev: 20.0,
            market_share_prev: 0.4,
            inv_pnl_prev: -0.75,
        };
        let v = f.to_vec();
        assert_eq!(v.len(), OBS_FIELDS.len());
        assert_eq!(ObservationFeatures::decode(&v).unwrap(), f);
        assert!(ObservationFeatures::decode(&v[..8]).is_err());
    }
}
