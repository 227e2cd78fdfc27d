//! File formats: JSON characters and motions, run configuration, BVH
//! motion interchange and Wavefront OBJ export.

mod bvh;
mod config;
mod json;
mod obj;

pub use bvh::{export_bvh, import_bvh, parse_bvh, write_bvh, BvhData, LimbNames};
pub use config::RunConfig;
pub use json::{
    character_from_str, character_to_string, load_character, load_motion, motion_from_str, motion_to_string,
    save_character, save_motion,
};
pub use obj::{export_obj_sequence, parse_obj, write_obj, ObjExport};

use std::path::Path;

use crate::error::{Error, Result};

pub(crate) fn read_text(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

pub(crate) fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Deserialize JSON, reporting syntax errors by line and schema errors by
/// their JSON path.
pub(crate) fn from_json<T: serde::de::DeserializeOwned>(text: &str) -> Result<T> {
    let mut de = serde_json::Deserializer::from_str(text);
    let value = serde_path_to_error::deserialize(&mut de).map_err(|e| {
        let path = e.path().to_string();
        let inner = e.into_inner();
        if inner.is_syntax() || inner.is_eof() {
            Error::Parse {
                line: inner.line(),
                detail: inner.to_string(),
            }
        } else {
            Error::Schema {
                path,
                detail: inner.to_string(),
            }
        }
    })?;
    de.end().map_err(|e| Error::Parse {
        line: e.line(),
        detail: e.to_string(),
    })?;
    Ok(value)
}

/// Frame rate whose reciprocal is exactly `dt`, so that saving and
/// reloading a motion keeps its interval bit-identical.
pub(crate) fn canonical_fps(dt: f64) -> f64 {
    let f = 1.0 / dt;
    [f, f.next_up(), f.next_down()]
        .into_iter()
        .find(|&c| 1.0 / c == dt)
        .unwrap_or(f)
}
