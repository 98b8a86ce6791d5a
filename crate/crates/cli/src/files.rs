use std::path::{Path, PathBuf};

use satrestore::io::{read_raster, write_raster, RasterFormat};
use satrestore::ImageGrid;

use crate::error::{io_err, CliError, CliResult};

pub const RASTER_EXTS: [&str; 3] = ["f32r", "png", "pgm"];

pub fn is_raster(path: &Path) -> bool {
    path.is_file() && RasterFormat::from_path(path).is_ok()
}

/// Raster files directly inside `dir`, sorted by name.
pub fn list_rasters(dir: &Path) -> CliResult<Vec<PathBuf>> {
    let mut out = Vec::new();
    for entry in std::fs::read_dir(dir).map_err(|e| io_err(dir, e))? {
        let path = entry.map_err(|e| io_err(dir, e))?.path();
        if is_raster(&path) {
            out.push(path);
        }
    }
    out.sort();
    Ok(out)
}

/// Name of a ground-truth raster with any `.target` suffix removed, so that
/// `scene.target.f32r` pairs with restored `scene.f32r`.
pub fn truth_key(path: &Path) -> String {
    let stem = path.file_stem().unwrap_or_default().to_string_lossy();
    stem.strip_suffix(".target").unwrap_or(&stem).to_string()
}

fn stem_ends_with(p: &Path, suffixes: &[&str]) -> bool {
    let stem = p.file_stem().unwrap_or_default().to_string_lossy();
    suffixes.iter().any(|s| stem.ends_with(s))
}

/// Ground-truth rasters of a directory. In a simulate output directory these
/// are the `.target` files; elsewhere every raster except derived maps
/// (`.std`, `.q`), degraded inputs and kernels.
pub fn truth_files(dir: &Path) -> CliResult<Vec<PathBuf>> {
    let all = list_rasters(dir)?;
    if all.iter().any(|p| stem_ends_with(p, &[".target"])) {
        return Ok(all
            .into_iter()
            .filter(|p| stem_ends_with(p, &[".target"]))
            .collect());
    }
    Ok(all
        .into_iter()
        .filter(|p| !stem_ends_with(p, &[".degraded", ".std", ".q", ".kernel"]))
        .collect())
}

/// `dir/<name>.<ext>` (or `dir/<name>.target.<ext>`) for the first raster
/// extension that exists.
pub fn find_raster(dir: &Path, name: &str) -> Option<PathBuf> {
    ["", ".target"]
        .iter()
        .flat_map(|infix| {
            RASTER_EXTS
                .iter()
                .map(move |ext| dir.join(format!("{name}{infix}.{ext}")))
        })
        .find(|p| p.is_file())
}

/// `path` with `suffix` inserted before the extension: `a/b.f32r` -> `a/b.std.f32r`.
pub fn sibling(path: &Path, suffix: &str) -> PathBuf {
    let stem = path.file_stem().unwrap_or_default().to_string_lossy();
    let name = match path.extension() {
        Some(ext) => format!("{stem}.{suffix}.{}", ext.to_string_lossy()),
        None => format!("{stem}.{suffix}"),
    };
    path.with_file_name(name)
}

pub fn read(path: &Path) -> CliResult<ImageGrid> {
    if !path.exists() {
        return Err(CliError::data(format!("missing file: {}", path.display())));
    }
    Ok(read_raster(path)?)
}

pub fn write(path: &Path, img: &ImageGrid) -> CliResult<()> {
    ensure_parent(path)?;
    Ok(write_raster(path, img)?)
}

pub fn write_text(path: &Path, text: &str) -> CliResult<()> {
    ensure_parent(path)?;
    std::fs::write(path, text).map_err(|e| io_err(path, e))
}

pub fn ensure_parent(path: &Path) -> CliResult<()> {
    match path.parent() {
        Some(dir) if !dir.as_os_str().is_empty() => {
            std::fs::create_dir_all(dir).map_err(|e| io_err(dir, e))
        }
        _ => Ok(()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn naming() {
        assert_eq!(truth_key(Path::new("d/scene.target.f32r")), "scene");
        assert_eq!(truth_key(Path::new("d/scene.png")), "scene");
        assert_eq!(sibling(Path::new("o/x.f32r"), "std"), PathBuf::from("o/x.std.f32r"));
    }
}
