use std::collections::{BTreeMap, HashMap};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::sync::{Arc, Mutex};

use log::warn;
use serde::{Deserialize, Serialize};

use super::{GatewayError, ModelReply, TemplateId, VisionModel, VisionRequest};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScriptedError {
    Transport,
    Auth,
    RateLimit,
}

impl ScriptedError {
    fn to_error(self, fingerprint: &str) -> GatewayError {
        let msg = format!("scripted failure for {fingerprint}");
        match self {
            ScriptedError::Transport => GatewayError::Transport(msg),
            ScriptedError::Auth => GatewayError::Auth(msg),
            ScriptedError::RateLimit => GatewayError::RateLimit(msg),
        }
    }
}

/// One line of a mock script.
///
/// `fingerprint` is either a request fingerprint or `template:<TemplateId>`,
/// which answers any request for that template without an exact entry. An
/// entry may fail its first `fail_times` calls with `error` (transport by
/// default) before answering; an entry with `error` and no response always
/// fails.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScriptEntry {
    pub fingerprint: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub response_text: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub template: Option<String>,
    #[serde(default, skip_serializing_if = "is_zero")]
    pub fail_times: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<ScriptedError>,
}

fn is_zero(n: &u32) -> bool {
    *n == 0
}

impl ScriptEntry {
    pub fn reply(fingerprint: impl Into<String>, text: impl Into<String>) -> Self {
        Self {
            fingerprint: fingerprint.into(),
            response_text: Some(text.into()),
            template: None,
            fail_times: 0,
            error: None,
        }
    }

    /// Default reply for every request of `template`.
    pub fn template_default(template: TemplateId, text: impl Into<String>) -> Self {
        Self::reply(format!("template:{}", template.as_str()), text)
    }

    pub fn failing(mut self, times: u32, error: ScriptedError) -> Self {
        self.fail_times = times;
        self.error = Some(error);
        self
    }
}

/// Replays canned responses keyed by request fingerprint. Call counts are
/// tracked per key so scripted failures happen on the first calls only.
#[derive(Debug, Default)]
pub struct ScriptedMock {
    entries: HashMap<String, ScriptEntry>,
    calls: Mutex<HashMap<String, u32>>,
    log: Mutex<Vec<(TemplateId, String)>>,
}

impl ScriptedMock {
    /// The first entry for a fingerprint wins; later duplicates are ignored.
    pub fn new(entries: impl IntoIterator<Item = ScriptEntry>) -> Self {
        let mut map = HashMap::new();
        for e in entries {
            if map.contains_key(&e.fingerprint) {
                warn!("duplicate mock script entry {} ignored", e.fingerprint);
                continue;
            }
            map.insert(e.fingerprint.clone(), e);
        }
        Self {
            entries: map,
            ..Default::default()
        }
    }

    /// Reads a JSONL script. Blank lines are skipped.
    pub fn load(path: impl AsRef<Path>) -> Result<Self, GatewayError> {
        let file = File::open(path.as_ref())?;
        let mut entries = Vec::new();
        for (n, line) in BufReader::new(file).lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let entry: ScriptEntry = serde_json::from_str(&line)
                .map_err(|e| GatewayError::Io(format!("{}:{}: {e}", path.as_ref().display(), n + 1)))?;
            entries.push(entry);
        }
        Ok(Self::new(entries))
    }

    /// Total number of calls received.
    pub fn call_count(&self) -> usize {
        self.log.lock().expect("mock log").len()
    }

    pub fn calls_for(&self, template: TemplateId) -> usize {
        self.log
            .lock()
            .expect("mock log")
            .iter()
            .filter(|(t, _)| *t == template)
            .count()
    }

    /// Every call as (template, fingerprint), in arrival order.
    pub fn call_log(&self) -> Vec<(TemplateId, String)> {
        self.log.lock().expect("mock log").clone()
    }
}

impl VisionModel for ScriptedMock {
    fn complete(&self, request: &VisionRequest) -> Result<ModelReply, GatewayError> {
        self.log
            .lock()
            .expect("mock log")
            .push((request.template, request.fingerprint.clone()));
        let default_key = format!("template:{}", request.template.as_str());
        let entry = self
            .entries
            .get(&request.fingerprint)
            .or_else(|| self.entries.get(&default_key))
            .ok_or_else(|| GatewayError::MockMiss {
                template: request.template.to_string(),
                fingerprint: request.fingerprint.clone(),
            })?;
        let n = {
            let mut calls = self.calls.lock().expect("mock counters");
            let c = calls.entry(entry.fingerprint.clone()).or_insert(0);
            *c += 1;
            *c
        };
        let error = entry.error.unwrap_or(ScriptedError::Transport);
        match &entry.response_text {
            Some(text) if n > entry.fail_times => Ok(ModelReply::text(text.clone())),
            Some(_) => Err(error.to_error(&request.fingerprint)),
            None => Err(error.to_error(&request.fingerprint)),
        }
    }

    fn describe(&self) -> String {
        format!("scripted-mock ({} entries)", self.entries.len())
    }
}

/// Passes requests to another model and keeps the first response per
/// fingerprint so the session can be replayed by [`ScriptedMock`].
pub struct RecordingModel {
    inner: Arc<dyn VisionModel>,
    recorded: Mutex<BTreeMap<String, ScriptEntry>>,
}

impl RecordingModel {
    pub fn new(inner: Arc<dyn VisionModel>) -> Self {
        Self {
            inner,
            recorded: Mutex::new(BTreeMap::new()),
        }
    }

    pub fn entries(&self) -> Vec<ScriptEntry> {
        self.recorded.lock().expect("recording").values().cloned().collect()
    }

    /// Writes the recorded entries as JSONL sorted by fingerprint.
    pub fn write_script(&self, path: impl AsRef<Path>) -> Result<(), GatewayError> {
        let mut f = BufWriter::new(File::create(path)?);
        for e in self.entries() {
            let line = serde_json::to_string(&e).map_err(|e| GatewayError::Io(e.to_string()))?;
            writeln!(f, "{line}")?;
        }
        f.flush()?;
        Ok(())
    }
}

impl VisionModel for RecordingModel {
    fn complete(&self, request: &VisionRequest) -> Result<ModelReply, GatewayError> {
        let reply = self.inner.complete(request)?;
        let mut rec = self.recorded.lock().expect("recording");
        rec.entry(request.fingerprint.clone()).or_insert_with(|| ScriptEntry {
            fingerprint: request.fingerprint.clone(),
            response_text: Some(reply.text.clone()),
            template: Some(request.template.to_string()),
            fail_times: 0,
            error: None,
        });
        Ok(reply)
    }

    fn describe(&self) -> String {
        format!("recording({})", self.inner.describe())
    }
}
