use std::fmt::Write as _;

use super::{ImageLevelLabels, VocError};

/// Parse an image-level label file: `image_id class1 class2 ...` per line.
/// An id with no classes is a valid, label-free image.
pub fn parse_labels(text: &str) -> Result<Vec<ImageLevelLabels>, VocError> {
    let mut out: Vec<ImageLevelLabels> = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let trimmed = raw.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let mut fields = trimmed.split_whitespace();
        let id = fields.next().expect("nonempty line has a field");
        if out.iter().any(|l| l.image_id == id) {
            return Err(VocError::Data {
                line: idx + 1,
                message: format!("duplicate image id {id:?}"),
            });
        }
        out.push(ImageLevelLabels::new(id, fields));
    }
    Ok(out)
}

pub fn write_labels(labels: &[ImageLevelLabels]) -> String {
    let mut out = String::new();
    for l in labels {
        out.push_str(&l.image_id);
        for c in &l.classes {
            let _ = write!(out, " {c}");
        }
        out.push('\n');
    }
    out
}
