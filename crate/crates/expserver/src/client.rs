//! In-process HTTP client for scripted sessions against the router.

use axum::body::{Body, Bytes};
use axum::http::{Method, Request, StatusCode};
use axum::Router;
use http_body_util::BodyExt;
use serde::de::DeserializeOwned;
use serde::Serialize;
use thiserror::Error;
use tower::ServiceExt;

use crate::{AudioRef, Created, FinishAck, JudgmentAck, JudgmentRequest, Payload, VerbalizationAck, VerbalizationRequest};

#[derive(Debug, Error)]
#[error("HTTP {status}: {body}")]
pub struct ClientError {
    pub status: StatusCode,
    pub body: String,
}

#[derive(Clone)]
pub struct Client {
    app: Router,
}

impl Client {
    pub fn new(app: Router) -> Self {
        Self { app }
    }

    pub async fn raw(&self, method: Method, uri: &str, body: Option<Vec<u8>>) -> (StatusCode, Bytes) {
        let mut req = Request::builder().method(method).uri(uri);
        if body.is_some() {
            req = req.header("content-type", "application/json");
        }
        let req = req.body(body.map_or_else(Body::empty, Body::from)).expect("valid request");
        let resp = self.app.clone().oneshot(req).await.expect("router is infallible");
        let status = resp.status();
        let bytes = resp.into_body().collect().await.map(|b| b.to_bytes()).unwrap_or_default();
        (status, bytes)
    }

    async fn call<B: Serialize, T: DeserializeOwned>(&self, method: Method, uri: &str, body: Option<&B>) -> Result<T, ClientError> {
        let body = body.map(|b| serde_json::to_vec(b).expect("request serializes"));
        let (status, bytes) = self.raw(method, uri, body).await;
        if !status.is_success() {
            return Err(ClientError {
                status,
                body: String::from_utf8_lossy(&bytes).into_owned(),
            });
        }
        serde_json::from_slice(&bytes).map_err(|e| ClientError {
            status,
            body: format!("undecodable response: {e}"),
        })
    }

    pub async fn create(&self) -> Result<Created, ClientError> {
        self.call::<(), _>(Method::POST, "/session", None).await
    }

    pub async fn trial(&self, id: u32) -> Result<Payload, ClientError> {
        self.call::<(), _>(Method::GET, &format!("/session/{id}/trial"), None).await
    }

    pub async fn judge(&self, id: u32, req: &JudgmentRequest) -> Result<JudgmentAck, ClientError> {
        self.call(Method::POST, &format!("/session/{id}/judgment"), Some(req)).await
    }

    pub async fn verbalize(&self, id: u32, req: &VerbalizationRequest) -> Result<VerbalizationAck, ClientError> {
        self.call(Method::POST, &format!("/session/{id}/verbalization"), Some(req)).await
    }

    pub async fn finish(&self, id: u32) -> Result<FinishAck, ClientError> {
        self.call::<(), _>(Method::POST, &format!("/session/{id}/finish"), None).await
    }

    /// Runs one participant from creation to finish. `choose` returns the
    /// (best, worst) positions for the four stimuli shown.
    pub async fn run_session<F>(&self, mut choose: F) -> Result<FinishAck, ClientError>
    where
        F: FnMut(&[AudioRef]) -> (usize, usize),
    {
        let created = self.create().await?;
        let id = created.participant_id;
        let mut next = created.next;
        loop {
            next = match next {
                Payload::Trial {
                    trial_index, stimuli, ..
                } => {
                    let (b, w) = choose(&stimuli);
                    let req = JudgmentRequest {
                        trial_index,
                        best_id: stimuli[b].id.clone(),
                        worst_id: stimuli[w].id.clone(),
                        rt_ms: 1000 + 37 * trial_index as u64,
                    };
                    self.judge(id, &req).await?.next
                }
                Payload::Verbalization { index, positive, .. } => {
                    let req = VerbalizationRequest {
                        positive_id: positive.id.clone(),
                        text: format!("sound {index}, maybe {}", positive.id),
                    };
                    self.verbalize(id, &req).await?.next
                }
                Payload::Complete => return self.finish(id).await,
            };
        }
    }
}
