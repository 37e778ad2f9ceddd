//! Policy backed by an HTTP endpoint that receives the prompt as JSON and
//! replies with a decision.

use std::time::Duration;

use serde::Serialize;

use super::policy::{Decision, Policy, PolicyContext, PolicyError, PolicyView, TaskView};
use super::prompt::{build_prompt, PromptDocument, PromptMode};
use crate::model::{FrontierId, SnapshotId};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RemoteSnapshot {
    pub id: SnapshotId,
    pub classes: Vec<String>,
    pub image_ref: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub crops: Option<Vec<String>>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RemoteFrontier {
    pub id: FrontierId,
    pub image_ref: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RemoteRequest {
    pub task: TaskView,
    pub snapshots: Vec<RemoteSnapshot>,
    pub frontiers: Vec<RemoteFrontier>,
    pub mode: PromptMode,
    pub step: u32,
    pub prompt: PromptDocument,
}

impl RemoteRequest {
    pub fn from_view(view: &PolicyView) -> Self {
        let mode = PromptMode::for_task(view.task.kind);
        RemoteRequest {
            task: view.task.clone(),
            snapshots: view
                .snapshots
                .iter()
                .map(|s| RemoteSnapshot {
                    id: s.id,
                    classes: s.classes.clone(),
                    image_ref: s.image_ref.clone(),
                    crops: (mode == PromptMode::Goat)
                        .then(|| s.objects.iter().map(|o| super::policy::crop_ref(s.frame, o.id)).collect()),
                })
                .collect(),
            frontiers: view
                .frontiers
                .iter()
                .map(|f| RemoteFrontier { id: f.id, image_ref: f.image_ref.clone() })
                .collect(),
            mode,
            step: view.step,
            prompt: build_prompt(view, mode),
        }
    }
}

/// Sends one JSON request body and returns the reply body.
pub trait Transport: Send {
    fn post_json(&self, body: &str) -> Result<String, String>;
}

pub struct HttpTransport {
    url: String,
    agent: ureq::Agent,
}

impl HttpTransport {
    pub fn new(url: impl Into<String>, timeout: Duration) -> Self {
        let agent = ureq::Agent::config_builder().timeout_global(Some(timeout)).build().into();
        Self { url: url.into(), agent }
    }
}

impl Transport for HttpTransport {
    fn post_json(&self, body: &str) -> Result<String, String> {
        let mut resp = self
            .agent
            .post(&self.url)
            .header("Content-Type", "application/json")
            .send(body)
            .map_err(|e| e.to_string())?;
        resp.body_mut().read_to_string().map_err(|e| e.to_string())
    }
}

pub struct RemotePolicy<T: Transport> {
    transport: T,
    label: String,
}

impl RemotePolicy<HttpTransport> {
    pub fn http(url: &str) -> Self {
        Self::new(HttpTransport::new(url, Duration::from_secs(60)), format!("remote:{url}"))
    }
}

impl<T: Transport> RemotePolicy<T> {
    pub fn new(transport: T, label: impl Into<String>) -> Self {
        Self { transport, label: label.into() }
    }
}

fn parse_reply(reply: &str, view: &PolicyView) -> Result<Decision, String> {
    let d: Decision = serde_json::from_str(reply.trim()).map_err(|e| format!("unparsable reply: {e}"))?;
    match &d {
        Decision::ChooseFrontier { id, .. } if !view.frontiers.iter().any(|f| f.id == *id) => {
            Err(format!("reply names unknown frontier {id}"))
        }
        Decision::ChooseSnapshot { id, .. } if !view.snapshots.iter().any(|s| s.id == *id) => {
            Err(format!("reply names unknown snapshot {id}"))
        }
        _ => Ok(d),
    }
}

impl<T: Transport> Policy for RemotePolicy<T> {
    fn name(&self) -> String {
        self.label.clone()
    }

    /// A bad reply earns one retry; a second bad reply is an invalid decision.
    fn decide(&mut self, view: &PolicyView, _: &PolicyContext) -> Result<Decision, PolicyError> {
        let body = serde_json::to_string(&RemoteRequest::from_view(view)).expect("request serialization is infallible");
        let mut last = String::new();
        for _ in 0..2 {
            let reply = self.transport.post_json(&body).map_err(PolicyError::PolicyUnavailable)?;
            match parse_reply(&reply, view) {
                Ok(d) => return Ok(d),
                Err(e) => last = e,
            }
        }
        Err(PolicyError::InvalidDecision(last))
    }
}
