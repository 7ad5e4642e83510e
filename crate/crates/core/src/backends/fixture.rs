//! Replay backend: canned responses keyed by request digest.
//!
//! Layout: one JSON file per request under the fixture directory, named
//! `<digest>.json`, holding the endpoint, a digest-view of the request (for
//! humans diagnosing misses) and the response. Replay is a pure function of
//! the request digest, so identical runs produce byte-identical backend
//! output. The record mode wraps the HTTP backend and writes these files.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::digest::BackendRequest;
use super::{
    request_digest, BackendError, ChatRequest, ChatResponse, DetectSegmentRequest,
    DetectSegmentResponse, HttpBackend, InferenceBackend, PointRequest, PointResponse,
    SegmentPointsRequest, SegmentPointsResponse,
};

#[derive(Debug, Serialize, Deserialize)]
struct FixtureFile {
    endpoint: String,
    request: Value,
    response: Value,
}

/// Write one fixture file; used by the recorder and by dataset generators.
pub fn write_fixture<R: BackendRequest>(
    dir: &Path,
    req: &R,
    response: &impl Serialize,
) -> Result<String, BackendError> {
    std::fs::create_dir_all(dir)?;
    let digest = request_digest(req);
    let file = FixtureFile {
        endpoint: R::ENDPOINT.to_string(),
        request: req.digest_payload(),
        response: serde_json::to_value(response)
            .map_err(|e| BackendError::InvalidResponse(e.to_string()))?,
    };
    let path = dir.join(format!("{digest}.json"));
    std::fs::write(
        &path,
        serde_json::to_vec_pretty(&file)
            .map_err(|e| BackendError::InvalidResponse(e.to_string()))?,
    )?;
    Ok(digest)
}

/// Read-only store of canned responses.
pub struct FixtureBackend {
    dir: PathBuf,
}

impl FixtureBackend {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        FixtureBackend { dir: dir.into() }
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    fn load<R, T>(&self, req: &R) -> Result<T, BackendError>
    where
        R: BackendRequest,
        T: serde::de::DeserializeOwned,
    {
        let digest = request_digest(req);
        let path = self.dir.join(format!("{digest}.json"));
        let bytes = std::fs::read(&path).map_err(|_| BackendError::FixtureMiss {
            endpoint: R::ENDPOINT.to_string(),
            digest: digest.clone(),
        })?;
        let file: FixtureFile =
            serde_json::from_slice(&bytes).map_err(|e| BackendError::FixtureInvalid {
                digest: digest.clone(),
                message: e.to_string(),
            })?;
        if file.endpoint != R::ENDPOINT {
            return Err(BackendError::FixtureInvalid {
                digest,
                message: format!(
                    "endpoint mismatch: file says {}, request is {}",
                    file.endpoint,
                    R::ENDPOINT
                ),
            });
        }
        serde_json::from_value(file.response).map_err(|e| BackendError::FixtureInvalid {
            digest,
            message: e.to_string(),
        })
    }
}

impl InferenceBackend for FixtureBackend {
    fn chat(&self, req: &ChatRequest) -> Result<ChatResponse, BackendError> {
        self.load(req)
    }

    fn detect_segment(
        &self,
        req: &DetectSegmentRequest,
    ) -> Result<DetectSegmentResponse, BackendError> {
        self.load(req)
    }

    fn point(&self, req: &PointRequest) -> Result<PointResponse, BackendError> {
        self.load(req)
    }

    fn segment_points(
        &self,
        req: &SegmentPointsRequest,
    ) -> Result<SegmentPointsResponse, BackendError> {
        let resp: SegmentPointsResponse = self.load(req)?;
        // fixture construction rule: prompt points lie inside the stored mask
        for &(x, y) in &req.points {
            if !resp.mask.contains(x, y) {
                return Err(BackendError::FixtureInvalid {
                    digest: request_digest(req),
                    message: format!("prompt point ({x}, {y}) outside the fixture mask"),
                });
            }
        }
        Ok(resp)
    }
}

/// Wraps the HTTP backend and records every successful response as a fixture.
pub struct RecordingBackend {
    inner: HttpBackend,
    dir: PathBuf,
}

impl RecordingBackend {
    pub fn new(inner: HttpBackend, dir: impl Into<PathBuf>) -> Self {
        RecordingBackend {
            inner,
            dir: dir.into(),
        }
    }
}

impl InferenceBackend for RecordingBackend {
    fn chat(&self, req: &ChatRequest) -> Result<ChatResponse, BackendError> {
        let resp = self.inner.chat(req)?;
        write_fixture(&self.dir, req, &resp)?;
        Ok(resp)
    }

    fn detect_segment(
        &self,
        req: &DetectSegmentRequest,
    ) -> Result<DetectSegmentResponse, BackendError> {
        let resp = self.inner.detect_segment(req)?;
        write_fixture(&self.dir, req, &resp)?;
        Ok(resp)
    }

    fn point(&self, req: &PointRequest) -> Result<PointResponse, BackendError> {
        let resp = self.inner.point(req)?;
        write_fixture(&self.dir, req, &resp)?;
        Ok(resp)
    }

    fn segment_points(
        &self,
        req: &SegmentPointsRequest,
    ) -> Result<SegmentPointsResponse, BackendError> {
        let resp = self.inner.segment_points(req)?;
        write_fixture(&self.dir, req, &resp)?;
        Ok(resp)
    }
}
