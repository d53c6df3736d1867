use std::fmt::Write as _;

use roxmltree::{Document, Node};

use super::{AnnotatedObject, ImageAnnotation, VocError};
use crate::geometry::BBox;
use crate::scalar::Scalar;

/// A box that extended past the image and was clamped while parsing.
#[derive(Debug, Clone, PartialEq)]
pub struct ClampWarning {
    pub image_id: String,
    pub object_index: usize,
    pub original: [f64; 4],
    pub clamped: [f64; 4],
}

pub fn parse_annotation<T: Scalar>(xml_text: &str) -> Result<ImageAnnotation<T>, VocError> {
    let (annotation, warnings) = parse_annotation_with_warnings(xml_text)?;
    for w in &warnings {
        log::warn!(
            "{}: object {} clamped from {:?} to {:?}",
            w.image_id,
            w.object_index,
            w.original,
            w.clamped
        );
    }
    Ok(annotation)
}

/// Same as [`parse_annotation`] for raw bytes; invalid UTF-8 is a syntax error.
pub fn parse_annotation_bytes<T: Scalar>(bytes: &[u8]) -> Result<ImageAnnotation<T>, VocError> {
    let text = std::str::from_utf8(bytes).map_err(|e| {
        let prefix = &bytes[..e.valid_up_to()];
        let line = 1 + prefix.iter().filter(|&&b| b == b'\n').count() as u32;
        VocError::Xml {
            line,
            column: 0,
            message: format!("invalid UTF-8: {e}"),
        }
    })?;
    parse_annotation(text)
}

pub fn parse_annotation_with_warnings<T: Scalar>(
    xml_text: &str,
) -> Result<(ImageAnnotation<T>, Vec<ClampWarning>), VocError> {
    let doc = Document::parse(xml_text).map_err(|e| {
        let pos = e.pos();
        VocError::Xml {
            line: pos.row,
            column: pos.col,
            message: e.to_string(),
        }
    })?;
    let root = doc.root_element();
    if root.tag_name().name() != "annotation" {
        return Err(VocError::MissingTag {
            tag: "annotation".into(),
        });
    }

    let filename = required_text(root, "filename", "annotation/filename")?;
    let image_id = image_id_from_filename(&filename);
    if image_id.is_empty() {
        return Err(VocError::EmptyImageId);
    }
    let size = required_child(root, "size", "annotation/size")?;
    let width = parse_dimension(size, "width")?;
    let height = parse_dimension(size, "height")?;

    let mut objects = Vec::new();
    let mut warnings = Vec::new();
    for (index, obj) in root
        .children()
        .filter(|n| n.has_tag_name("object"))
        .enumerate()
    {
        let class_name = required_text(obj, "name", "object/name")?;
        let bndbox = required_child(obj, "bndbox", "object/bndbox")?;
        let mut coords = [0.0f64; 4];
        for (slot, tag) in coords.iter_mut().zip(["xmin", "ymin", "xmax", "ymax"]) {
            let path = format!("object/bndbox/{tag}");
            let text = required_text(bndbox, tag, &path)?;
            *slot = text.parse::<f64>().map_err(|_| VocError::InvalidValue {
                tag: path,
                value: text.clone(),
            })?;
        }
        let original = to_box::<T>(coords).map_err(|source| VocError::InvalidObject { index, source })?;
        let bbox = if original.within(T::from_count(width as usize), T::from_count(height as usize)) {
            original
        } else {
            let clamped = original
                .clamp_to(T::from_count(width as usize), T::from_count(height as usize))
                .ok_or_else(|| VocError::InvalidObject {
                    index,
                    source: crate::geometry::GeometryError::Degenerate {
                        xmin: coords[0].clamp(0.0, width as f64),
                        ymin: coords[1].clamp(0.0, height as f64),
                        xmax: coords[2].clamp(0.0, width as f64),
                        ymax: coords[3].clamp(0.0, height as f64),
                    },
                })?;
            warnings.push(ClampWarning {
                image_id: image_id.clone(),
                object_index: index,
                original: coords,
                clamped: clamped.corners().map(Scalar::to_f64_lossy),
            });
            clamped
        };
        objects.push(AnnotatedObject { class_name, bbox });
    }

    Ok((
        ImageAnnotation {
            image_id,
            width,
            height,
            objects,
        },
        warnings,
    ))
}

fn to_box<T: Scalar>(c: [f64; 4]) -> Result<BBox<T>, crate::geometry::GeometryError> {
    let conv = |v: f64| T::from_f64(v).ok_or(crate::geometry::GeometryError::NonFinite);
    BBox::new(conv(c[0])?, conv(c[1])?, conv(c[2])?, conv(c[3])?)
}

/// `000001.jpg` -> `000001`. Only the final extension is removed.
fn image_id_from_filename(filename: &str) -> String {
    match filename.rsplit_once('.') {
        Some((stem, _)) if !stem.is_empty() => stem.to_string(),
        _ => filename.to_string(),
    }
}

fn required_child<'a, 'i>(node: Node<'a, 'i>, tag: &str, path: &str) -> Result<Node<'a, 'i>, VocError> {
    node.children()
        .find(|n| n.has_tag_name(tag))
        .ok_or_else(|| VocError::MissingTag { tag: path.into() })
}

fn required_text(node: Node<'_, '_>, tag: &str, path: &str) -> Result<String, VocError> {
    let child = required_child(node, tag, path)?;
    Ok(child.text().unwrap_or("").trim().to_string())
}

fn parse_dimension(size: Node<'_, '_>, tag: &str) -> Result<u32, VocError> {
    let path = format!("annotation/size/{tag}");
    let text = required_text(size, tag, &path)?;
    match text.parse::<u32>() {
        Ok(v) if v > 0 => Ok(v),
        _ => Err(VocError::InvalidValue { tag: path, value: text }),
    }
}

/// Serialize in the VOC layout. Coordinates are written as integers, rounded
/// half-up; if rounding would collapse a box, its max corner is pushed one
/// pixel out so the result still parses.
pub fn write_annotation<T: Scalar>(a: &ImageAnnotation<T>) -> String {
    let mut xml = String::from("<annotation>\n");
    xml.push_str("\t<folder>VOC2007</folder>\n");
    let _ = writeln!(xml, "\t<filename>{}.jpg</filename>", escape(&a.image_id));
    xml.push_str("\t<size>\n");
    let _ = writeln!(xml, "\t\t<width>{}</width>", a.width);
    let _ = writeln!(xml, "\t\t<height>{}</height>", a.height);
    xml.push_str("\t\t<depth>3</depth>\n");
    xml.push_str("\t</size>\n");
    xml.push_str("\t<segmented>0</segmented>\n");
    for obj in &a.objects {
        let [xmin, ymin, mut xmax, mut ymax] = obj.bbox.corners().map(round_half_up);
        if xmax <= xmin {
            xmax = xmin + 1;
        }
        if ymax <= ymin {
            ymax = ymin + 1;
        }
        xml.push_str("\t<object>\n");
        let _ = writeln!(xml, "\t\t<name>{}</name>", escape(&obj.class_name));
        xml.push_str("\t\t<pose>Unspecified</pose>\n");
        xml.push_str("\t\t<truncated>0</truncated>\n");
        xml.push_str("\t\t<difficult>0</difficult>\n");
        xml.push_str("\t\t<bndbox>\n");
        let _ = writeln!(xml, "\t\t\t<xmin>{xmin}</xmin>");
        let _ = writeln!(xml, "\t\t\t<ymin>{ymin}</ymin>");
        let _ = writeln!(xml, "\t\t\t<xmax>{xmax}</xmax>");
        let _ = writeln!(xml, "\t\t\t<ymax>{ymax}</ymax>");
        xml.push_str("\t\t</bndbox>\n");
        xml.push_str("\t</object>\n");
    }
    xml.push_str("</annotation>\n");
    xml
}

fn round_half_up<T: Scalar>(v: T) -> i64 {
    (v.to_f64_lossy() + 0.5).floor() as i64
}

fn escape(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for c in s.chars() {
        match c {
            '&' => out.push_str("&amp;"),
            '<' => out.push_str("&lt;"),
            '>' => out.push_str("&gt;"),
            '"' => out.push_str("&quot;"),
            '\'' => out.push_str("&apos;"),
            _ => out.push(c),
        }
    }
    out
}
