//! Wire types for the editing API and decoding of request layers.

use std::io::Cursor;

use base64::engine::general_purpose::STANDARD;
use base64::Engine;
use fegan_core::data::{io, MaskKind};
use fegan_core::pipeline::UserLayers;
use serde::{Deserialize, Serialize};

/// All layers are base64-encoded PNGs of identical size. `strokes` is RGBA;
/// alpha > 0 marks a color hint.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EditRequest {
    pub image: String,
    pub mask: String,
    pub sketch: String,
    pub strokes: String,
    /// Label map of the unedited image (indexed or grayscale PNG).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub parsing: Option<String>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub options: EditOptions,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EditOptions {
    #[serde(default)]
    pub return_parsing: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EditResponse {
    pub image: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub parsing: Option<String>,
    pub width: usize,
    pub height: usize,
    pub timing_ms: f64,
    pub fingerprint: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParseResponse {
    pub parsing: String,
    pub width: usize,
    pub height: usize,
    pub timing_ms: f64,
    pub fingerprint: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HealthResponse {
    pub status: String,
    pub ready: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fingerprint: Option<String>,
    /// `[height, width]` the model runs at.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub resolution: Option<[usize; 2]>,
    pub workers: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub error: ErrorDetail,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ErrorDetail {
    pub code: String,
    pub message: String,
}

/// A request failure with its HTTP status and stable code.
#[derive(Clone, Debug, PartialEq, thiserror::Error)]
#[error("{code}: {message}")]
pub struct ApiError {
    pub status: u16,
    pub code: &'static str,
    pub message: String,
}

impl ApiError {
    pub fn new(status: u16, code: &'static str, message: impl Into<String>) -> Self {
        Self { status, code, message: message.into() }
    }

    pub fn bad_request(code: &'static str, message: impl Into<String>) -> Self {
        Self::new(400, code, message)
    }

    pub fn body(&self) -> ErrorBody {
        ErrorBody { error: ErrorDetail { code: self.code.to_string(), message: self.message.clone() } }
    }
}

impl From<fegan_core::Error> for ApiError {
    fn from(e: fegan_core::Error) -> Self {
        use fegan_core::Error as E;
        match &e {
            E::Shape(_) => Self::bad_request("dimension_mismatch", e.to_string()),
            E::Codec(_) => Self::bad_request("invalid_image", e.to_string()),
            E::InvalidArgument(_) => Self::bad_request("invalid_argument", e.to_string()),
            _ => Self::new(500, "internal", e.to_string()),
        }
    }
}

pub fn encode_png(bytes: &[u8]) -> String {
    STANDARD.encode(bytes)
}

pub fn decode_base64(field: &str, text: &str) -> Result<Vec<u8>, ApiError> {
    STANDARD.decode(text.trim()).map_err(|e| ApiError::bad_request("invalid_base64", format!("{field}: {e}")))
}

/// Reads width and height from an encoded image header.
fn png_dims(field: &str, bytes: &[u8]) -> Result<(usize, usize), ApiError> {
    let reader = image::ImageReader::new(Cursor::new(bytes))
        .with_guessed_format()
        .map_err(|e| ApiError::bad_request("invalid_image", format!("{field}: {e}")))?;
    let (w, h) = reader.into_dimensions().map_err(|e| ApiError::bad_request("invalid_image", format!("{field}: {e}")))?;
    Ok((h as usize, w as usize))
}

/// Size limit applied to every layer before it is decoded.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SizeLimit {
    pub max_height: usize,
    pub max_width: usize,
}

impl Default for SizeLimit {
    fn default() -> Self {
        Self { max_height: 1024, max_width: 1024 }
    }
}

impl EditRequest {
    /// Decodes every layer. Oversized layers fail with 413 before decoding.
    pub fn layers(&self, num_classes: usize, limit: SizeLimit) -> Result<UserLayers, ApiError> {
        let mut fields = vec![("image", &self.image), ("mask", &self.mask), ("sketch", &self.sketch), ("strokes", &self.strokes)];
        if let Some(p) = &self.parsing {
            fields.push(("parsing", p));
        }
        let mut bytes = Vec::with_capacity(fields.len());
        let mut dims = Vec::with_capacity(fields.len());
        for (name, text) in fields {
            let raw = decode_base64(name, text)?;
            let (h, w) = png_dims(name, &raw)?;
            if h > limit.max_height || w > limit.max_width {
                return Err(ApiError::new(
                    413,
                    "image_too_large",
                    format!("{name} is {w}x{h}; the limit is {}x{}", limit.max_width, limit.max_height),
                ));
            }
            dims.push((name, (h, w)));
            bytes.push(raw);
        }
        let want = dims[0].1;
        if let Some((name, (h, w))) = dims.iter().find(|(_, d)| *d != want) {
            return Err(ApiError::bad_request(
                "dimension_mismatch",
                format!("{name} is {w}x{h} but the image is {}x{}", want.1, want.0),
            ));
        }
        let image = io::decode_image(&bytes[0])?;
        let mask = io::decode_mask(&bytes[1], MaskKind::Edit)?;
        let sketch = io::decode_mask(&bytes[2], MaskKind::Sketch)?;
        let (stroke_mask, stroke_colors) = io::decode_strokes(&bytes[3])?;
        let parsing = match bytes.get(4) {
            Some(raw) => Some(io::decode_parsing(raw, num_classes).map_err(|e| ApiError::bad_request("invalid_parsing", e.to_string()))?),
            None => None,
        };
        Ok(UserLayers { image, mask, sketch, stroke_mask, stroke_colors, parsing })
    }
}
