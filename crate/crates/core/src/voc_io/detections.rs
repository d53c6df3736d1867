use std::fmt::Write as _;

use super::{Detection, VocError};
use crate::geometry::BBox;
use crate::scalar::Scalar;

/// Parse `image_id class score xmin ymin xmax ymax` records.
///
/// Blank lines and lines starting with `#` are skipped. Line numbers in errors
/// are 1-based.
pub fn parse_detections<T: Scalar>(text: &str) -> Result<Vec<Detection<T>>, VocError> {
    let mut out = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let trimmed = raw.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = trimmed.split_whitespace().collect();
        if fields.len() != 7 {
            return Err(VocError::Syntax {
                line,
                message: format!("expected 7 fields, found {}", fields.len()),
            });
        }
        let mut nums = [0.0f64; 5];
        for (slot, field) in nums.iter_mut().zip(&fields[2..]) {
            *slot = field.parse::<f64>().map_err(|_| VocError::Syntax {
                line,
                message: format!("not a number: {field:?}"),
            })?;
        }
        let conv = |v: f64| {
            T::from_f64(v).ok_or_else(|| VocError::Data {
                line,
                message: format!("value {v} not representable"),
            })
        };
        let score = conv(nums[0])?;
        let bbox = BBox::new(conv(nums[1])?, conv(nums[2])?, conv(nums[3])?, conv(nums[4])?).map_err(|e| {
            VocError::Data {
                line,
                message: e.to_string(),
            }
        })?;
        let det = Detection::new(fields[0], fields[1], score, bbox).map_err(|e| VocError::Data {
            line,
            message: e.to_string(),
        })?;
        out.push(det);
    }
    Ok(out)
}

/// Scores with six decimals, coordinates with two.
pub fn write_detections<T: Scalar>(dets: &[Detection<T>]) -> String {
    let mut out = String::new();
    for d in dets {
        let [x0, y0, x1, y1] = d.bbox.corners().map(Scalar::to_f64_lossy);
        let _ = writeln!(
            out,
            "{} {} {:.6} {:.2} {:.2} {:.2} {:.2}",
            d.image_id,
            d.class_name,
            d.score.to_f64_lossy(),
            x0,
            y0,
            x1,
            y1
        );
    }
    out
}
