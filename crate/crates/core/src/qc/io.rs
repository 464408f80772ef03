use std::path::{Path, PathBuf};

use image::codecs::pnm::{PnmEncoder, PnmSubtype, SampleEncoding};
use log::warn;

use super::image::{RgbImage, SlideImage};
use crate::error::{Error, Result};

pub const DEFAULT_MAGNIFICATION: &str = "20X";
pub const DEFAULT_MICRONS_PER_PIXEL: f64 = 0.24;

/// `slide.png` → `slide.png.meta`.
pub fn sidecar_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".meta");
    PathBuf::from(s)
}

/// Parse `magnification=20X mpp=0.24`.
pub fn parse_sidecar(line: &str) -> Result<(String, f64)> {
    let mut mag = None;
    let mut mpp = None;
    for field in line.split_whitespace() {
        match field.split_once('=') {
            Some(("magnification", v)) => mag = Some(v.to_string()),
            Some(("mpp", v)) => {
                mpp = Some(
                    v.parse::<f64>()
                        .map_err(|_| Error::Image(format!("bad mpp value {v:?}")))?,
                )
            }
            _ => return Err(Error::Image(format!("unrecognised metadata field {field:?}"))),
        }
    }
    match (mag, mpp) {
        (Some(m), Some(p)) => Ok((m, p)),
        _ => Err(Error::Image(format!("metadata line {line:?} needs magnification and mpp"))),
    }
}

/// Read a PNG or binary PPM slide and its sidecar. A missing sidecar falls
/// back to 20X at 0.24 µm/pixel.
pub fn read_slide(path: &Path) -> Result<SlideImage> {
    let img = image::open(path)
        .map_err(|e| Error::Image(format!("{}: {e}", path.display())))?
        .to_rgb8();
    let (w, h) = (img.width() as usize, img.height() as usize);
    let pixels = img.pixels().map(|p| p.0).collect();
    let meta = sidecar_path(path);
    let (mag, mpp) = if meta.exists() {
        let text = std::fs::read_to_string(&meta).map_err(|e| Error::io(&meta, e))?;
        parse_sidecar(text.lines().next().unwrap_or(""))?
    } else {
        warn!("{}: no sidecar metadata, assuming {DEFAULT_MAGNIFICATION}", path.display());
        (DEFAULT_MAGNIFICATION.to_string(), DEFAULT_MICRONS_PER_PIXEL)
    };
    SlideImage::new(RgbImage::from_pixels(w, h, pixels)?, &mag, mpp)
}

/// Write the slide (format from the extension) and its sidecar.
pub fn write_slide(path: &Path, slide: &SlideImage) -> Result<()> {
    let raw: Vec<u8> = slide.image.pixels.iter().flatten().copied().collect();
    let buf = image::RgbImage::from_raw(slide.width() as u32, slide.height() as u32, raw)
        .ok_or_else(|| Error::Image("pixel buffer size mismatch".into()))?;
    let is_ppm = path
        .extension()
        .is_some_and(|e| e.eq_ignore_ascii_case("ppm"));
    let written = if is_ppm {
        // binary P6; the generic writer would pick PAM
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let enc = PnmEncoder::new(std::io::BufWriter::new(file))
            .with_subtype(PnmSubtype::Pixmap(SampleEncoding::Binary));
        buf.write_with_encoder(enc)
    } else {
        buf.save(path)
    };
    written.map_err(|e| Error::Image(format!("{}: {e}", path.display())))?;
    let meta = sidecar_path(path);
    std::fs::write(
        &meta,
        format!("magnification={} mpp={}\n", slide.magnification, slide.microns_per_pixel),
    )
    .map_err(|e| Error::io(&meta, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_from;
    use crate::synth::{gen_synthetic_slide, SlideOptions};
    use crate::taxonomy::SpecimenClass;

    #[test]
    fn png_and_ppm_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let s = gen_synthetic_slide(SpecimenClass::Basaloid, &SlideOptions::default(), &mut rng_from(1)).unwrap();
        for name in ["a.png", "b.ppm"] {
            let p = dir.path().join(name);
            write_slide(&p, &s.slide).unwrap();
            assert_eq!(read_slide(&p).unwrap(), s.slide);
        }
        let bytes = std::fs::read(dir.path().join("b.ppm")).unwrap();
        assert_eq!(&bytes[..2], b"P6");
    }

    #[test]
    fn sidecar_parsing() {
        assert_eq!(parse_sidecar("magnification=40X mpp=0.47").unwrap(), ("40X".into(), 0.47));
        assert!(parse_sidecar("mpp=0.47").is_err());
        assert!(parse_sidecar("magnification=20X mpp=x").is_err());
        assert!(parse_sidecar("zoom=3").is_err());
    }
}
