//! Reading and writing sample triples (image, mask, boundary) on disk.

use std::path::{Path, PathBuf};

use bfanet_core::{canny_boundary, CannyParams, SaliencySample};

use crate::error::{Error, Result};
use crate::manifest::{Entry, Manifest, Split};
use crate::pnm::{self, Image};

/// Decodes every manifest entry; boundaries are derived from the masks.
pub fn load_samples(manifest: &Manifest) -> Result<Vec<SaliencySample>> {
    manifest.entries.iter().map(load_entry).collect()
}

pub fn load_entry(e: &Entry) -> Result<SaliencySample> {
    let img = pnm::read(&e.image)?;
    let mask = pnm::read(&e.mask)?.to_mask().map_err(|err| err.in_file(&e.mask))?;
    if (img.width, img.height) != (mask.width(), mask.height()) {
        return Err(Error::data(format!(
            "{}: image is {}x{} but mask is {}x{}",
            e.id,
            img.width,
            img.height,
            mask.width(),
            mask.height()
        )));
    }
    let boundary = canny_boundary(&mask, &CannyParams::default())?;
    Ok(SaliencySample {
        id: e.id.clone(),
        image: img.to_tensor(),
        mask,
        boundary,
    })
}

/// Writes `images/<id>.ppm`, `masks/<id>.pgm`, `boundaries/<id>.pgm` and
/// `manifest.txt` under `dir`.
pub fn write_samples(dir: &Path, samples: &[SaliencySample], split: Option<Split>) -> Result<Manifest> {
    let sub = |name: &str| -> Result<PathBuf> {
        let p = dir.join(name);
        std::fs::create_dir_all(&p).map_err(|e| Error::io(&p, e))?;
        Ok(p)
    };
    let (images, masks, bounds) = (sub("images")?, sub("masks")?, sub("boundaries")?);
    let mut manifest = Manifest {
        split,
        entries: Vec::new(),
    };
    for s in samples {
        let image = images.join(format!("{}.ppm", s.id));
        let mask = masks.join(format!("{}.pgm", s.id));
        pnm::write(&image, &Image::from_tensor(&s.image)?)?;
        pnm::write(&mask, &Image::from_mask(&s.mask))?;
        pnm::write(&bounds.join(format!("{}.pgm", s.id)), &Image::from_mask(&s.boundary))?;
        manifest.entries.push(Entry {
            id: s.id.clone(),
            image,
            mask,
        });
    }
    let path = dir.join("manifest.txt");
    std::fs::write(&path, manifest.to_text(dir)).map_err(|e| Error::io(&path, e))?;
    Ok(manifest)
}

/// Sorted `*.pgm` files of a directory.
pub fn graymaps(dir: &Path) -> Result<Vec<PathBuf>> {
    list(dir, &["pgm"])
}

/// Sorted `*.ppm` and `*.pgm` files of a directory.
pub fn anymaps(dir: &Path) -> Result<Vec<PathBuf>> {
    list(dir, &["ppm", "pgm"])
}

fn list(dir: &Path, exts: &[&str]) -> Result<Vec<PathBuf>> {
    let rd = std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut out = Vec::new();
    for entry in rd {
        let p = entry.map_err(|e| Error::io(dir, e))?.path();
        let ok = p
            .extension()
            .and_then(|e| e.to_str())
            .is_some_and(|e| exts.contains(&e));
        if ok && p.is_file() {
            out.push(p);
        }
    }
    out.sort();
    Ok(out)
}

pub fn stem(p: &Path) -> String {
    p.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default()
}
