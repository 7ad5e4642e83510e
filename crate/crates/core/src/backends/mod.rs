//! Model inference interfaces.
//!
//! The pipeline talks to four channels: a chat LLM, an open-vocabulary
//! detector+segmentor, a pointing VLM, and a promptable segmentor. Two
//! interchangeable implementations exist: [`HttpBackend`] posts JSON to an
//! external service and [`FixtureBackend`] replays canned responses keyed by a
//! request digest, which makes whole runs byte-reproducible without models.
//!
//! Every response is schema-validated here before it reaches geometry code:
//! masks must decode to the request image's dimensions, scores and normalized
//! point coordinates must lie in [0, 1].

mod digest;
mod fixture;
mod http;

pub use digest::request_digest;
pub use fixture::{write_fixture, FixtureBackend, RecordingBackend};
pub use http::{HttpBackend, HttpConfig};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::masks::RleMask;

#[derive(Debug, Error)]
pub enum BackendError {
    #[error("transport failure after {attempts} attempts: {log}")]
    Transport { attempts: u32, log: String },
    #[error("no fixture for {endpoint} request {digest}")]
    FixtureMiss { endpoint: String, digest: String },
    #[error("fixture {digest} invalid: {message}")]
    FixtureInvalid { digest: String, message: String },
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("invalid response: {0}")]
    InvalidResponse(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

mod b64 {
    use base64::engine::general_purpose::STANDARD;
    use base64::Engine;
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(bytes: &[u8], s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&STANDARD.encode(bytes))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<u8>, D::Error> {
        let text = String::deserialize(d)?;
        STANDARD.decode(text).map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ChatRequest {
    pub system: String,
    pub user: String,
    pub temperature: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatResponse {
    pub text: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DetectSegmentRequest {
    /// Encoded PNG bytes; travels as base64 inside the JSON body.
    #[serde(with = "b64", rename = "image")]
    pub image_png: Vec<u8>,
    pub query: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MaskDetection {
    pub rle: RleMask,
    pub score: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DetectSegmentResponse {
    pub masks: Vec<MaskDetection>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PointRequest {
    #[serde(with = "b64", rename = "image")]
    pub image_png: Vec<u8>,
    pub query: String,
}

/// A point normalized to the image size: both coordinates in [0, 1].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormalizedPoint {
    pub x: f64,
    pub y: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PointResponse {
    pub points: Vec<NormalizedPoint>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SegmentPointsRequest {
    #[serde(with = "b64", rename = "image")]
    pub image_png: Vec<u8>,
    /// Prompt points in pixel coordinates.
    pub points: Vec<(u32, u32)>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SegmentPointsResponse {
    pub mask: RleMask,
}

/// The four inference channels. Implementations must be callable from
/// multiple workers concurrently.
pub trait InferenceBackend: Send + Sync {
    fn chat(&self, req: &ChatRequest) -> Result<ChatResponse, BackendError>;
    fn detect_segment(
        &self,
        req: &DetectSegmentRequest,
    ) -> Result<DetectSegmentResponse, BackendError>;
    fn point(&self, req: &PointRequest) -> Result<PointResponse, BackendError>;
    fn segment_points(
        &self,
        req: &SegmentPointsRequest,
    ) -> Result<SegmentPointsResponse, BackendError>;
}

fn png_dimensions(bytes: &[u8]) -> Result<(u32, u32), BackendError> {
    image::ImageReader::new(std::io::Cursor::new(bytes))
        .with_guessed_format()
        .map_err(|e| BackendError::InvalidRequest(format!("unreadable image: {e}")))?
        .into_dimensions()
        .map_err(|e| BackendError::InvalidRequest(format!("unreadable image: {e}")))
}

fn validate_mask_against_image(
    mask: &RleMask,
    width: u32,
    height: u32,
) -> Result<(), BackendError> {
    mask.validate()
        .map_err(|e| BackendError::InvalidResponse(e.to_string()))?;
    if (mask.width, mask.height) != (width, height) {
        return Err(BackendError::InvalidResponse(format!(
            "mask is {}x{} but request image is {width}x{height}",
            mask.width, mask.height
        )));
    }
    if mask.area() == 0 {
        return Err(BackendError::InvalidResponse(
            "mask decodes to zero foreground pixels".into(),
        ));
    }
    Ok(())
}

/// Chat with the LLM; the response text comes back verbatim, no parsing here.
pub fn chat(
    backend: &dyn InferenceBackend,
    req: &ChatRequest,
) -> Result<ChatResponse, BackendError> {
    if req.system.is_empty() || req.user.is_empty() {
        return Err(BackendError::InvalidRequest(
            "chat system and user messages must be non-empty".into(),
        ));
    }
    if req.temperature.is_nan() || req.temperature < 0.0 {
        return Err(BackendError::InvalidRequest(format!(
            "temperature must be >= 0, got {}",
            req.temperature
        )));
    }
    backend.chat(req)
}

/// Open-vocabulary detection: an empty mask list is a valid "object absent"
/// answer; any returned mask must match the image dimensions with a score in
/// [0, 1], delivered in backend order.
pub fn detect_segment(
    backend: &dyn InferenceBackend,
    req: &DetectSegmentRequest,
) -> Result<DetectSegmentResponse, BackendError> {
    let (width, height) = png_dimensions(&req.image_png)?;
    let resp = backend.detect_segment(req)?;
    for detection in &resp.masks {
        validate_mask_against_image(&detection.rle, width, height)?;
        if !(0.0..=1.0).contains(&detection.score) {
            return Err(BackendError::InvalidResponse(format!(
                "detection score {} outside [0, 1]",
                detection.score
            )));
        }
    }
    Ok(resp)
}

/// Pointing query: coordinates are normalized [0, 1] floats; out-of-range is a
/// validation error, never clamped. An empty point list means "not present".
pub fn point(
    backend: &dyn InferenceBackend,
    req: &PointRequest,
) -> Result<PointResponse, BackendError> {
    png_dimensions(&req.image_png)?;
    let resp = backend.point(req)?;
    for p in &resp.points {
        if !(0.0..=1.0).contains(&p.x) || !(0.0..=1.0).contains(&p.y) {
            return Err(BackendError::InvalidResponse(format!(
                "point ({}, {}) outside the unit square",
                p.x, p.y
            )));
        }
    }
    Ok(resp)
}

/// Promptable segmentation from pixel points.
pub fn segment_points(
    backend: &dyn InferenceBackend,
    req: &SegmentPointsRequest,
) -> Result<SegmentPointsResponse, BackendError> {
    let (width, height) = png_dimensions(&req.image_png)?;
    if req.points.is_empty() {
        return Err(BackendError::InvalidRequest(
            "segment_points requires at least one prompt point".into(),
        ));
    }
    for &(x, y) in &req.points {
        if x >= width || y >= height {
            return Err(BackendError::InvalidRequest(format!(
                "prompt point ({x}, {y}) outside {width}x{height} image"
            )));
        }
    }
    let resp = backend.segment_points(req)?;
    validate_mask_against_image(&resp.mask, width, height)?;
    Ok(resp)
}

#[cfg(test)]
pub(crate) fn test_png(width: u32, height: u32, tint: u8) -> Vec<u8> {
    use image::{DynamicImage, ImageBuffer, Rgb};
    let buf: ImageBuffer<Rgb<u8>, Vec<u8>> = ImageBuffer::from_fn(width, height, |x, y| {
        Rgb([tint, (x % 251) as u8, (y % 251) as u8])
    });
    let mut bytes = Vec::new();
    DynamicImage::ImageRgb8(buf)
        .write_to(
            &mut std::io::Cursor::new(&mut bytes),
            image::ImageFormat::Png,
        )
        .unwrap();
    bytes
}

#[cfg(test)]
mod tests {
    use super::*;

    struct Canned {
        detect: DetectSegmentResponse,
        points: PointResponse,
    }

    impl InferenceBackend for Canned {
        fn chat(&self, _req: &ChatRequest) -> Result<ChatResponse, BackendError> {
            Ok(ChatResponse { text: "hi".into() })
        }
        fn detect_segment(
            &self,
            _req: &DetectSegmentRequest,
        ) -> Result<DetectSegmentResponse, BackendError> {
            Ok(self.detect.clone())
        }
        fn point(&self, _req: &PointRequest) -> Result<PointResponse, BackendError> {
            Ok(self.points.clone())
        }
        fn segment_points(
            &self,
            _req: &SegmentPointsRequest,
        ) -> Result<SegmentPointsResponse, BackendError> {
            Ok(SegmentPointsResponse {
                mask: self.detect.masks[0].rle.clone(),
            })
        }
    }

    fn canned(mask_w: u32, mask_h: u32) -> Canned {
        Canned {
            detect: DetectSegmentResponse {
                masks: vec![MaskDetection {
                    rle: RleMask::from_pixels(mask_w, mask_h, [(0, 0)]).unwrap(),
                    score: 0.5,
                }],
            },
            points: PointResponse {
                points: vec![NormalizedPoint { x: 0.5, y: 0.5 }],
            },
        }
    }

    #[test]
    fn empty_mask_list_is_valid_absence() {
        let backend = Canned {
            detect: DetectSegmentResponse { masks: Vec::new() },
            points: PointResponse { points: Vec::new() },
        };
        let req = DetectSegmentRequest {
            image_png: test_png(8, 6, 0),
            query: "cabinet".into(),
        };
        let resp = detect_segment(&backend, &req).unwrap();
        assert!(resp.masks.is_empty());
        let presp = point(
            &backend,
            &PointRequest {
                image_png: test_png(8, 6, 0),
                query: "q".into(),
            },
        )
        .unwrap();
        assert!(presp.points.is_empty());
    }

    #[test]
    fn wrong_mask_size_is_rejected() {
        let backend = canned(4, 4);
        let req = DetectSegmentRequest {
            image_png: test_png(8, 6, 0),
            query: "cabinet".into(),
        };
        let err = detect_segment(&backend, &req).unwrap_err();
        assert!(matches!(err, BackendError::InvalidResponse(_)), "{err}");
    }

    #[test]
    fn multiple_masks_preserve_order() {
        let mut backend = canned(8, 6);
        backend.detect.masks = vec![
            MaskDetection {
                rle: RleMask::from_pixels(8, 6, [(0, 0)]).unwrap(),
                score: 0.40,
            },
            MaskDetection {
                rle: RleMask::from_pixels(8, 6, [(1, 1)]).unwrap(),
                score: 0.30,
            },
        ];
        let req = DetectSegmentRequest {
            image_png: test_png(8, 6, 0),
            query: "cabinet".into(),
        };
        let resp = detect_segment(&backend, &req).unwrap();
        let scores: Vec<f64> = resp.masks.iter().map(|m| m.score).collect();
        assert_eq!(scores, vec![0.40, 0.30]);
    }

    #[test]
    fn out_of_range_points_are_errors_not_clamped() {
        let mut backend = canned(8, 6);
        backend.points.points = vec![NormalizedPoint { x: 1.2, y: 0.5 }];
        let err = point(
            &backend,
            &PointRequest {
                image_png: test_png(8, 6, 0),
                query: "q".into(),
            },
        )
        .unwrap_err();
        assert!(matches!(err, BackendError::InvalidResponse(_)));
    }

    #[test]
    fn wire_format_round_trips_images() {
        let req = DetectSegmentRequest {
            image_png: test_png(4, 4, 9),
            query: "knob".into(),
        };
        let json = serde_json::to_string(&req).unwrap();
        assert!(json.contains("\"image\""));
        let back: DetectSegmentRequest = serde_json::from_str(&json).unwrap();
        assert_eq!(back.image_png, req.image_png);
        assert_eq!(back.query, req.query);
    }

    #[test]
    fn detection_scores_outside_unit_interval_are_rejected() {
        let mut backend = canned(8, 6);
        backend.detect.masks[0].score = 1.2;
        let err = detect_segment(
            &backend,
            &DetectSegmentRequest {
                image_png: test_png(8, 6, 0),
                query: "q".into(),
            },
        )
        .unwrap_err();
        assert!(matches!(err, BackendError::InvalidResponse(_)), "{err}");
    }

    #[test]
    fn chat_requests_must_be_well_formed() {
        let backend = canned(8, 6);
        let empty_user = ChatRequest {
            system: "s".into(),
            user: String::new(),
            temperature: 0.0,
        };
        assert!(matches!(
            chat(&backend, &empty_user),
            Err(BackendError::InvalidRequest(_))
        ));
        let negative_temperature = ChatRequest {
            system: "s".into(),
            user: "u".into(),
            temperature: -0.5,
        };
        assert!(matches!(
            chat(&backend, &negative_temperature),
            Err(BackendError::InvalidRequest(_))
        ));
    }

    #[test]
    fn segment_points_rejects_out_of_image_prompts() {
        let backend = canned(8, 6);
        let err = segment_points(
            &backend,
            &SegmentPointsRequest {
                image_png: test_png(8, 6, 0),
                points: vec![(8, 0)],
            },
        )
        .unwrap_err();
        assert!(matches!(err, BackendError::InvalidRequest(_)), "{err}");
        let err = segment_points(
            &backend,
            &SegmentPointsRequest {
                image_png: test_png(8, 6, 0),
                points: Vec::new(),
            },
        )
        .unwrap_err();
        assert!(matches!(err, BackendError::InvalidRequest(_)), "{err}");
    }
}
