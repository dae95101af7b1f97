//! Model roster: maps the model names used in grids to scripted or hosted
//! policies. API keys never appear in the file, only the names of the
//! environment variables that hold them.

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use choicebench_core::policy::{PolicySpec, RemoteSpec};
use choicebench_core::runner::{PolicyRegistry, ScriptedFactory};
use choicebench_remote::{Recording, RemoteClient, RemoteFactory, Throttle};
use serde::Deserialize;

/// Key variable used for models given only on the command line.
pub const DEFAULT_KEY_ENV: &str = "CHOICEBENCH_API_KEY";

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ThrottleSettings {
    #[serde(default = "default_in_flight")]
    pub max_in_flight: usize,
    #[serde(default)]
    pub requests_per_minute: Option<u32>,
}

fn default_in_flight() -> usize {
    4
}

impl Default for ThrottleSettings {
    fn default() -> Self {
        ThrottleSettings {
            max_in_flight: default_in_flight(),
            requests_per_minute: None,
        }
    }
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Roster {
    #[serde(default)]
    pub throttle: ThrottleSettings,
    #[serde(default)]
    pub models: BTreeMap<String, PolicySpec>,
}

impl Roster {
    pub fn parse(text: &str) -> Result<Roster> {
        let roster: Roster = toml::from_str(text)?;
        for (name, spec) in &roster.models {
            if let PolicySpec::Remote(r) = spec {
                if r.endpoint.is_empty() {
                    bail!("model `{name}` has an empty endpoint");
                }
            }
        }
        Ok(roster)
    }

    pub fn load(path: &Path) -> Result<Roster> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading roster {}", path.display()))?;
        Roster::parse(&text).with_context(|| format!("parsing roster {}", path.display()))
    }

    /// Points every hosted model at `endpoint`, and adds `model` as a
    /// hosted model when the roster does not list it.
    pub fn override_endpoint(&mut self, endpoint: &str, model: Option<&str>) {
        for spec in self.models.values_mut() {
            if let PolicySpec::Remote(r) = spec {
                r.endpoint = endpoint.to_string();
            }
        }
        if let Some(m) = model {
            self.models.entry(m.to_string()).or_insert_with(|| {
                let mut spec = RemoteSpec::new(endpoint, m);
                spec.api_key_env = Some(DEFAULT_KEY_ENV.into());
                PolicySpec::Remote(spec)
            });
        }
    }

    /// One factory per model; hosted models share a throttle and the
    /// recording.
    pub fn registry(&self, recording: Recording) -> Result<PolicyRegistry> {
        let throttle = Arc::new(Throttle::new(self.throttle.max_in_flight, self.throttle.requests_per_minute));
        let recording = Arc::new(recording);
        let mut registry = PolicyRegistry::new();
        for (name, spec) in &self.models {
            match spec {
                PolicySpec::Scripted(s) => registry.register(name.clone(), Arc::new(ScriptedFactory { spec: s.clone() })),
                PolicySpec::Remote(r) => {
                    let client = RemoteClient::new(r.clone(), throttle.clone(), recording.clone())
                        .with_context(|| format!("model `{name}`"))?;
                    registry.register(name.clone(), Arc::new(RemoteFactory { client: Arc::new(client) }));
                }
            }
        }
        Ok(registry)
    }
}
