//! Dataset directories: `manifest.tsv` with `id<TAB>image<TAB>mask` lines,
//! PPM images and PGM masks alongside.

use std::fs;
use std::path::{Path, PathBuf};

use hrmedseg_tensor::Tensor;

use super::pnm::{read_image_pnm, read_mask_pgm, write_image_ppm, write_mask_pgm};
use super::synth::Sample;
use crate::error::{Error, Result};

pub const MANIFEST: &str = "manifest.tsv";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Entry {
    pub id: String,
    pub image: PathBuf,
    pub mask: PathBuf,
}

pub fn parse_manifest(text: &str, base: &Path) -> Result<Vec<Entry>> {
    let mut out = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let parts: Vec<&str> = line.split('\t').collect();
        let [id, image, mask] = parts[..] else {
            return Err(Error::Format(format!("manifest line {}: expected 3 tab-separated fields", lineno + 1)));
        };
        out.push(Entry {
            id: id.to_string(),
            image: base.join(image),
            mask: base.join(mask),
        });
    }
    Ok(out)
}

/// Writes every sample plus the manifest into `dir`.
pub fn write_dataset(dir: impl AsRef<Path>, samples: &[Sample]) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir)?;
    let mut manifest = String::new();
    for s in samples {
        let (h, w) = s.size();
        let (img, msk) = (format!("{}.ppm", s.id), format!("{}.pgm", s.id));
        write_image_ppm(dir.join(&img), &s.image)?;
        write_mask_pgm(dir.join(&msk), &s.labels(), w, h, s.mask.shape()[0])?;
        manifest.push_str(&format!("{}\t{img}\t{msk}\n", s.id));
    }
    fs::write(dir.join(MANIFEST), manifest)?;
    Ok(())
}

/// Loads a dataset directory with `c2` mask channels. Images go through
/// 8-bit quantization, so reloaded images differ from generated ones by
/// at most half a gray level.
pub fn read_dataset(dir: impl AsRef<Path>, c2: usize) -> Result<Vec<Sample>> {
    let dir = dir.as_ref();
    let entries = parse_manifest(&fs::read_to_string(dir.join(MANIFEST))?, dir)?;
    entries
        .into_iter()
        .map(|e| {
            let image = read_image_pnm(&e.image)?;
            let (labels, w, h) = read_mask_pgm(&e.mask, c2)?;
            if (h, w) != (image.shape()[1], image.shape()[2]) {
                return Err(Error::Shape {
                    what: format!("mask of {}", e.id),
                    expected: image.shape()[1..].to_vec(),
                    found: vec![h, w],
                });
            }
            let n = h * w;
            let mut mask = vec![0.0; c2 * n];
            for (i, &k) in labels.iter().enumerate() {
                if c2 == 1 {
                    mask[i] = f64::from(k);
                } else {
                    mask[k as usize * n + i] = 1.0;
                }
            }
            Ok(Sample {
                id: e.id,
                image,
                mask: Tensor::new(&[c2, h, w], mask)?,
            })
        })
        .collect()
}
