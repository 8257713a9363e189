//! TOML scenario documents.
//!
//! ```toml
//! version = 1
//! name = "example"
//!
//! [leader]
//! s = [[1.0, 1.0], [0.0, 1.0]]
//! v0 = [0.0, 1.0]
//!
//! [[graphs]]
//! weights = [[0, 0], [1, 0]]
//!
//! [signal.periodic]
//! period = 1
//! dwell = 1
//! segments = [[1, 1]]
//!
//! [[followers]]
//! a = [[1.0]]
//! # b, c, d, e, f, x0; optional eta0, s0, random_components
//!
//! [[gains]]
//! kind = "user"
//! kx = [[-0.5]]
//!
//! [observer]
//! mode = "distributed"
//!
//! [run]
//! horizon = 100
//! ```
//!
//! Unknown keys are rejected. `gains` may be omitted, in which case every
//! follower uses identity-weight Riccati synthesis.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::linalg::{from_rows, to_rows, Matrix, Vector};
use crate::observers::{LeaderModel, ObserverMode};
use crate::regulation::{GainMethod, PlantModel, DEFAULT_SOLVER_TOL};
use crate::simkit::{ConnectivityCheck, FollowerSpec, Scenario, Thresholds};
use crate::topology::{SignalSchedule, SwitchingSignal, SwitchingTopology, WeightedDigraph};

pub const CONFIG_VERSION: u32 = 1;

type Rows = Vec<Vec<f64>>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub version: u32,
    #[serde(default)]
    pub name: String,
    pub leader: LeaderConfig,
    pub graphs: Vec<GraphConfig>,
    pub signal: SignalConfig,
    pub followers: Vec<FollowerConfig>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub gains: Vec<GainConfig>,
    #[serde(default)]
    pub observer: ObserverConfig,
    #[serde(default)]
    pub run: RunConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LeaderConfig {
    pub s: Rows,
    pub v0: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GraphConfig {
    pub weights: Rows,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum SignalConfig {
    Periodic {
        period: usize,
        dwell: usize,
        /// `(mode, length)` pairs.
        segments: Vec<(usize, usize)>,
    },
    Table {
        dwell: usize,
        /// `(t, mode)` pairs.
        table: Vec<(usize, usize)>,
        tail: usize,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FollowerConfig {
    pub a: Rows,
    pub b: Rows,
    pub c: Rows,
    pub d: Rows,
    pub e: Rows,
    pub f: Rows,
    pub x0: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eta0: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub s0: Option<Rows>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub random_components: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum GainConfig {
    User {
        kx: Rows,
    },
    Riccati {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        q: Option<Rows>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        r: Option<Rows>,
    },
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObserverConfig {
    #[serde(default)]
    pub mode: ObserverMode,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub horizon: usize,
    pub tol: f64,
    pub connectivity_window: usize,
    pub connectivity_horizon: usize,
    pub final_threshold: f64,
    pub rate_threshold: f64,
}

impl Default for RunConfig {
    fn default() -> Self {
        let th = Thresholds::default();
        Self {
            horizon: 300,
            tol: DEFAULT_SOLVER_TOL,
            connectivity_window: 0,
            connectivity_horizon: 100,
            final_threshold: th.final_value,
            rate_threshold: th.rate,
        }
    }
}

fn matrix(key: &str, rows: &Rows) -> Result<Matrix> {
    from_rows(rows).map_err(|e| Error::Config(format!("{key}: {e}")))
}

fn located<T>(key: &str, r: Result<T>) -> Result<T> {
    r.map_err(|e| match e {
        Error::Config(msg) => Error::Config(msg),
        other => Error::Config(format!("{key}: {other}")),
    })
}

impl ScenarioConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        if cfg.version != CONFIG_VERSION {
            return Err(Error::Config(format!(
                "version: unsupported config version {}, expected {CONFIG_VERSION}",
                cfg.version
            )));
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_toml_str(&text).map_err(|e| match e {
            Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("scenario config serializes to TOML")
    }

    /// SHA-256 of the canonical TOML rendering.
    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(self.to_toml_string().as_bytes()))
    }

    pub fn to_scenario(&self) -> Result<Scenario> {
        let leader = located(
            "leader",
            LeaderModel::new(
                matrix("leader.s", &self.leader.s)?,
                Vector::from_vec(self.leader.v0.clone()),
            ),
        )?;
        let q = leader.dim();

        let graphs = self
            .graphs
            .iter()
            .enumerate()
            .map(|(i, g)| {
                let key = format!("graphs[{i}].weights");
                located(&key, WeightedDigraph::new(matrix(&key, &g.weights)?))
            })
            .collect::<Result<Vec<_>>>()?;

        let signal = match &self.signal {
            SignalConfig::Periodic {
                period,
                dwell,
                segments,
            } => {
                let total: usize = segments.iter().map(|s| s.1).sum();
                if total != *period {
                    return Err(Error::Config(format!(
                        "signal.periodic.period: {period} does not match segment lengths summing to {total}"
                    )));
                }
                located("signal.periodic", SwitchingSignal::periodic(segments.clone(), *dwell))?
            }
            SignalConfig::Table { dwell, table, tail } => {
                let mut map = BTreeMap::new();
                for &(t, mode) in table {
                    if map.insert(t, mode).is_some() {
                        return Err(Error::Config(format!("signal.table.table: time {t} listed twice")));
                    }
                }
                located("signal.table", SwitchingSignal::table(map, *tail, *dwell))?
            }
        };
        let topology = located("graphs/signal", SwitchingTopology::new(graphs, signal))?;

        if !self.gains.is_empty() && self.gains.len() != self.followers.len() {
            return Err(Error::Config(format!(
                "gains: {} entries for {} followers",
                self.gains.len(),
                self.followers.len()
            )));
        }
        let mut followers = Vec::with_capacity(self.followers.len());
        for (i, fc) in self.followers.iter().enumerate() {
            let key = |k: &str| format!("followers[{i}].{k}");
            let plant = located(
                &key("plant"),
                PlantModel::new(
                    matrix(&key("a"), &fc.a)?,
                    matrix(&key("b"), &fc.b)?,
                    matrix(&key("c"), &fc.c)?,
                    matrix(&key("d"), &fc.d)?,
                    matrix(&key("e"), &fc.e)?,
                    matrix(&key("f"), &fc.f)?,
                ),
            )?;
            let gain = match self.gains.get(i) {
                None => GainMethod::default(),
                Some(GainConfig::User { kx }) => GainMethod::UserSupplied(matrix(&format!("gains[{i}].kx"), kx)?),
                Some(GainConfig::Riccati { q: qw, r }) => GainMethod::Riccati {
                    state_weight: qw.as_ref().map(|m| matrix(&format!("gains[{i}].q"), m)).transpose()?,
                    input_weight: r.as_ref().map(|m| matrix(&format!("gains[{i}].r"), m)).transpose()?,
                },
            };
            followers.push(FollowerSpec {
                plant,
                x0: Vector::from_vec(fc.x0.clone()),
                eta0: fc
                    .eta0
                    .as_ref()
                    .map_or_else(|| Vector::zeros(q), |e| Vector::from_vec(e.clone())),
                s0: fc.s0.as_ref().map(|m| matrix(&key("s0"), m)).transpose()?,
                gain,
                random_components: fc.random_components.clone(),
            });
        }

        let scenario = Scenario {
            name: self.name.clone(),
            leader,
            topology,
            followers,
            observer_mode: self.observer.mode,
            horizon: self.run.horizon,
            solver_tol: self.run.tol,
            connectivity: ConnectivityCheck {
                window: self.run.connectivity_window,
                horizon: self.run.connectivity_horizon,
            },
            thresholds: Thresholds {
                final_value: self.run.final_threshold,
                rate: self.run.rate_threshold,
            },
        };
        located("followers", scenario.check())?;
        Ok(scenario)
    }

    pub fn from_scenario(s: &Scenario) -> Self {
        let signal = match s.topology.signal().schedule() {
            SignalSchedule::Periodic { segments } => SignalConfig::Periodic {
                period: s.topology.signal().period().unwrap_or(0),
                dwell: s.topology.signal().dwell(),
                segments: segments.clone(),
            },
            SignalSchedule::Table { table, tail } => SignalConfig::Table {
                dwell: s.topology.signal().dwell(),
                table: table.iter().map(|(&t, &m)| (t, m)).collect(),
                tail: *tail,
            },
        };
        let vec = |v: &Vector| v.iter().copied().collect::<Vec<f64>>();
        ScenarioConfig {
            version: CONFIG_VERSION,
            name: s.name.clone(),
            leader: LeaderConfig {
                s: to_rows(s.leader.s()),
                v0: vec(s.leader.v0()),
            },
            graphs: s
                .topology
                .graphs()
                .iter()
                .map(|g| GraphConfig {
                    weights: to_rows(g.weights()),
                })
                .collect(),
            signal,
            followers: s
                .followers
                .iter()
                .map(|f| FollowerConfig {
                    a: to_rows(&f.plant.a),
                    b: to_rows(&f.plant.b),
                    c: to_rows(&f.plant.c),
                    d: to_rows(&f.plant.d),
                    e: to_rows(&f.plant.e),
                    f: to_rows(&f.plant.f),
                    x0: vec(&f.x0),
                    eta0: Some(vec(&f.eta0)),
                    s0: f.s0.as_ref().map(to_rows),
                    random_components: f.random_components.clone(),
                })
                .collect(),
            gains: s
                .followers
                .iter()
                .map(|f| match &f.gain {
                    GainMethod::UserSupplied(k) => GainConfig::User { kx: to_rows(k) },
                    GainMethod::Riccati {
                        state_weight,
                        input_weight,
                    } => GainConfig::Riccati {
                        q: state_weight.as_ref().map(to_rows),
                        r: input_weight.as_ref().map(to_rows),
                    },
                })
                .collect(),
            observer: ObserverConfig {
                mode: s.observer_mode,
            },
            run: RunConfig {
                horizon: s.horizon,
                tol: s.solver_tol,
                connectivity_window: s.connectivity.window,
                connectivity_horizon: s.connectivity.horizon,
                final_threshold: s.thresholds.final_value,
                rate_threshold: s.thresholds.rate,
            },
        }
    }
}
