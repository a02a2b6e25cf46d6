//! A [`TaskBroker`] that talks to a remote service, for `hopper worker`.

use std::time::Duration;

use hopper_fabric::{BrokerError, ReportAck, TaskBroker, TaskKey, TaskOutcome, TaskView};
use reqwest::blocking::Client;
use reqwest::StatusCode;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::api::{LeaseBody, ReportBody, ReserveBody};

pub struct HttpBroker {
    base: String,
    client: Client,
}

#[derive(Deserialize)]
struct LeaseOk {
    ok: bool,
}

#[derive(Deserialize)]
struct Ack {
    ack: ReportAck,
}

impl HttpBroker {
    pub fn new(base: &str) -> Result<Self, BrokerError> {
        let client = Client::builder()
            .timeout(Duration::from_secs(30))
            .build()
            .map_err(|e| BrokerError::Unreachable(e.to_string()))?;
        Ok(HttpBroker {
            base: base.trim_end_matches('/').to_string(),
            client,
        })
    }

    fn post<B: Serialize, T: DeserializeOwned>(&self, path: &str, body: &B) -> Result<Option<T>, BrokerError> {
        let url = format!("{}/v1/tasks/{path}", self.base);
        let resp = self
            .client
            .post(&url)
            .json(body)
            .send()
            .map_err(|e| BrokerError::Unreachable(e.to_string()))?;
        match resp.status() {
            StatusCode::NO_CONTENT => Ok(None),
            s if s.is_success() => resp.json().map(Some).map_err(|e| BrokerError::Unreachable(e.to_string())),
            StatusCode::NOT_FOUND => Err(BrokerError::Unreachable(format!("{url}: not found"))),
            s => Err(BrokerError::Unreachable(format!("{url}: {s}: {}", resp.text().unwrap_or_default()))),
        }
    }

    fn lease(&self, path: &str, key: &TaskKey, worker: &str) -> Result<bool, BrokerError> {
        let body = LeaseBody {
            key: key.clone(),
            worker: worker.into(),
        };
        let r: Option<LeaseOk> = self.post(path, &body)?;
        Ok(r.is_some_and(|r| r.ok))
    }
}

impl TaskBroker for HttpBroker {
    fn reserve(&self, worker: &str, job: Option<&str>) -> Result<Option<TaskView>, BrokerError> {
        self.post(
            "reserve",
            &ReserveBody {
                worker: worker.into(),
                job: job.map(str::to_string),
            },
        )
    }

    fn start(&self, key: &TaskKey, worker: &str) -> Result<bool, BrokerError> {
        self.lease("start", key, worker)
    }

    fn heartbeat(&self, key: &TaskKey, worker: &str) -> Result<bool, BrokerError> {
        self.lease("heartbeat", key, worker)
    }

    fn report(&self, key: &TaskKey, worker: &str, outcome: TaskOutcome) -> Result<ReportAck, BrokerError> {
        let body = ReportBody {
            key: key.clone(),
            worker: worker.into(),
            outcome,
        };
        let r: Option<Ack> = self.post("report", &body)?;
        r.map(|a| a.ack).ok_or_else(|| BrokerError::Unreachable("empty report response".into()))
    }
}
