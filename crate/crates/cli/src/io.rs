use std::fs;
use std::path::Path;

use anyhow::{Context, Result};
use wsod_core::voc_io::{parse_annotation_bytes, write_annotation};
use wsod_core::ImageAnnotation;

use crate::error::DataError;

pub fn read_text(path: &Path) -> Result<String, DataError> {
    fs::read_to_string(path).map_err(|e| DataError::new(format!("cannot read {}: {e}", path.display())))
}

/// Every `*.xml` file in `dir`, in file-name order.
pub fn load_gt_dir(dir: &Path) -> Result<Vec<ImageAnnotation<f64>>> {
    let entries = fs::read_dir(dir).map_err(|e| DataError::new(format!("cannot read {}: {e}", dir.display())))?;
    let mut paths = Vec::new();
    for entry in entries {
        let path = entry.map_err(|e| DataError::new(format!("cannot list {}: {e}", dir.display())))?.path();
        if path.extension().is_some_and(|x| x.eq_ignore_ascii_case("xml")) {
            paths.push(path);
        }
    }
    paths.sort();
    if paths.is_empty() {
        return Err(DataError::new(format!("no .xml annotations in {}", dir.display())).into());
    }
    let mut out = Vec::with_capacity(paths.len());
    for path in paths {
        let bytes = fs::read(&path).map_err(|e| DataError::new(format!("cannot read {}: {e}", path.display())))?;
        out.push(parse_annotation_bytes(&bytes).with_context(|| path.display().to_string())?);
    }
    Ok(out)
}

pub fn write_file(path: &Path, contents: &str) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).with_context(|| format!("creating {}", parent.display()))?;
    }
    fs::write(path, contents).with_context(|| format!("writing {}", path.display()))
}

pub fn write_annotations(dir: &Path, annotations: &[ImageAnnotation<f64>]) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    for a in annotations {
        if a.image_id.contains(['/', '\\']) || a.image_id == ".." {
            return Err(DataError::new(format!("image id {:?} is not a valid file name", a.image_id)).into());
        }
        write_file(&dir.join(format!("{}.xml", a.image_id)), &write_annotation(a))?;
    }
    Ok(())
}

/// Write to `path`, or standard output when absent.
pub fn emit(path: Option<&Path>, contents: &str) -> Result<()> {
    match path {
        Some(p) => write_file(p, contents),
        None => {
            use std::io::Write;
            let mut out = std::io::stdout().lock();
            out.write_all(contents.as_bytes()).context("writing standard output")?;
            out.flush().context("writing standard output")
        }
    }
}
