//! Canonical request digests.
//!
//! A digest is the SHA-256 of the canonical JSON of the request, with image
//! bytes replaced by their own SHA-256 first so large payloads never enter the
//! canonical form. Canonical means serde_json's default object encoding:
//! sorted keys, no whitespace. The digest keys fixture files and makes the
//! replay backend a pure function of the request.

use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use super::{ChatRequest, DetectSegmentRequest, PointRequest, SegmentPointsRequest};

fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Anything the backends can be asked; knows its endpoint and digest payload.
pub trait BackendRequest {
    const ENDPOINT: &'static str;
    /// JSON view of the request with image bytes already hashed.
    fn digest_payload(&self) -> Value;
}

impl BackendRequest for ChatRequest {
    const ENDPOINT: &'static str = "/v1/chat";
    fn digest_payload(&self) -> Value {
        json!({
            "system": self.system,
            "user": self.user,
            "temperature": self.temperature,
        })
    }
}

impl BackendRequest for DetectSegmentRequest {
    const ENDPOINT: &'static str = "/v1/detect_segment";
    fn digest_payload(&self) -> Value {
        json!({
            "image_sha256": sha256_hex(&self.image_png),
            "query": self.query,
        })
    }
}

impl BackendRequest for PointRequest {
    const ENDPOINT: &'static str = "/v1/point";
    fn digest_payload(&self) -> Value {
        json!({
            "image_sha256": sha256_hex(&self.image_png),
            "query": self.query,
        })
    }
}

impl BackendRequest for SegmentPointsRequest {
    const ENDPOINT: &'static str = "/v1/segment_points";
    fn digest_payload(&self) -> Value {
        json!({
            "image_sha256": sha256_hex(&self.image_png),
            "points": self.points,
        })
    }
}

/// Digest of (endpoint, canonicalized payload).
pub fn request_digest<R: BackendRequest>(req: &R) -> String {
    let canonical = json!({
        "endpoint": R::ENDPOINT,
        "request": req.digest_payload(),
    });
    sha256_hex(canonical.to_string().as_bytes())
}
