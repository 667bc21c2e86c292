//! Binary PGM (P5) and PPM (P6) emission and the matching readers.
//!
//! Layout is pinned: `magic\n<width> <height>\n255\n` followed by row-major
//! bytes. Real-valued rasters in [0, 1] quantize to 0..=255; segmaps and
//! other id rasters persist their bytes verbatim.

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::{Image, SegMap, Tensor};

fn quantize(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut f = fs::File::create(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    f.write_all(bytes).map_err(|e| Error::io(path.display().to_string(), e))?;
    Ok(())
}

fn header(magic: &str, w: usize, h: usize) -> Vec<u8> {
    format!("{magic}\n{w} {h}\n255\n").into_bytes()
}

/// Grayscale bytes as-is (used for segmaps, where values are class ids).
pub fn write_pgm_bytes(path: &Path, w: usize, h: usize, data: &[u8]) -> Result<()> {
    if data.len() != w * h {
        return Err(Error::shape("write_pgm_bytes", format!("{w}x{h} vs {} bytes", data.len())));
    }
    let mut out = header("P5", w, h);
    out.extend_from_slice(data);
    write_file(path, &out)
}

/// Real-valued raster scaled to [0, 255].
pub fn write_pgm(path: &Path, w: usize, h: usize, values: &[f64]) -> Result<()> {
    if values.len() != w * h {
        return Err(Error::shape("write_pgm", format!("{w}x{h} vs {} values", values.len())));
    }
    let bytes: Vec<u8> = values.iter().map(|&v| quantize(v)).collect();
    write_pgm_bytes(path, w, h, &bytes)
}

/// `[H, W, 3]` image in [0, 1] as binary PPM.
pub fn write_ppm(path: &Path, image: &Image) -> Result<()> {
    let shape = image.shape();
    if shape.len() != 3 || shape[2] != 3 {
        return Err(Error::shape("write_ppm", format!("image must be [H,W,3], got {shape:?}")));
    }
    let (h, w) = (shape[0], shape[1]);
    let mut out = header("P6", w, h);
    out.extend(image.data().iter().map(|&v| quantize(v)));
    write_file(path, &out)
}

fn read_all(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path.display().to_string(), e))
}

/// Parse one netpbm header, returning (width, height, pixel data). The
/// header is `magic`, width, height, maxval separated by whitespace, with a
/// single whitespace byte before the binary data.
fn parse_header<'a>(path: &Path, bytes: &'a [u8], magic: &str) -> Result<(usize, usize, &'a [u8])> {
    let err = |msg: String| Error::Format {
        path: path.display().to_string(),
        msg,
    };
    let is_space = |b: u8| b == b' ' || b == b'\n' || b == b'\r' || b == b'\t';
    let mut pos = 0usize;
    let mut fields: Vec<String> = Vec::new();
    while fields.len() < 4 {
        while pos < bytes.len() && is_space(bytes[pos]) {
            pos += 1;
        }
        let start = pos;
        while pos < bytes.len() && !is_space(bytes[pos]) {
            pos += 1;
        }
        if start == pos {
            return Err(err("truncated header".to_string()));
        }
        fields.push(String::from_utf8_lossy(&bytes[start..pos]).into_owned());
    }
    if pos >= bytes.len() || !is_space(bytes[pos]) {
        return Err(err("missing whitespace after maxval".to_string()));
    }
    pos += 1;
    if fields[0] != magic {
        return Err(err(format!("expected magic {magic}, found {}", fields[0])));
    }
    if fields[3] != "255" {
        return Err(err("only maxval 255 is supported".to_string()));
    }
    let w: usize = fields[1].parse().map_err(|_| err("bad width".to_string()))?;
    let h: usize = fields[2].parse().map_err(|_| err("bad height".to_string()))?;
    Ok((w, h, &bytes[pos..]))
}

/// Read a binary PGM as raw bytes.
pub fn read_pgm_bytes(path: &Path) -> Result<(usize, usize, Vec<u8>)> {
    let bytes = read_all(path)?;
    let (w, h, data) = parse_header(path, &bytes, "P5")?;
    if data.len() != w * h {
        return Err(Error::Format {
            path: path.display().to_string(),
            msg: format!("expected {} data bytes, found {}", w * h, data.len()),
        });
    }
    Ok((w, h, data.to_vec()))
}

pub fn read_segmap(path: &Path) -> Result<SegMap> {
    let (w, h, data) = read_pgm_bytes(path)?;
    Ok(SegMap { h, w, data })
}

/// Read a binary PPM back into an `[H, W, 3]` image with values `byte/255`.
pub fn read_ppm(path: &Path) -> Result<Image> {
    let bytes = read_all(path)?;
    let (w, h, data) = parse_header(path, &bytes, "P6")?;
    if data.len() != 3 * w * h {
        return Err(Error::Format {
            path: path.display().to_string(),
            msg: format!("expected {} data bytes, found {}", 3 * w * h, data.len()),
        });
    }
    Tensor::from_vec(&[h, w, 3], data.iter().map(|&b| b as f64 / 255.0).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_pixel_pgm_bytes_are_pinned() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("one.pgm");
        write_pgm(&path, 1, 1, &[1.0]).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        assert_eq!(bytes, b"P5\n1 1\n255\n\xff");
    }

    #[test]
    fn two_pixel_ppm_black_white() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bw.ppm");
        let img = Tensor::from_vec(&[1, 2, 3], vec![0.0, 0.0, 0.0, 1.0, 1.0, 1.0]).unwrap();
        write_ppm(&path, &img).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        assert_eq!(bytes, b"P6\n2 1\n255\n\x00\x00\x00\xff\xff\xff");
    }

    #[test]
    fn pgm_roundtrip_reproduces_quantized_raster() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("r.pgm");
        let values: Vec<f64> = (0..12).map(|i| i as f64 / 11.0).collect();
        write_pgm(&path, 4, 3, &values).unwrap();
        let (w, h, data) = read_pgm_bytes(&path).unwrap();
        assert_eq!((w, h), (4, 3));
        let expect: Vec<u8> = values.iter().map(|&v| (v * 255.0).round() as u8).collect();
        assert_eq!(data, expect);
    }

    #[test]
    fn ppm_roundtrip_exact_at_byte_resolution() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("img.ppm");
        let img = Tensor::from_vec(&[2, 2, 3], (0..12).map(|i| (i * 20) as f64 / 255.0).collect()).unwrap();
        write_ppm(&path, &img).unwrap();
        let back = read_ppm(&path).unwrap();
        for (a, b) in img.data().iter().zip(back.data()) {
            assert!((a - b).abs() < 0.5 / 255.0 + 1e-12);
        }
        // writing the reread image again is byte-identical
        let path2 = dir.path().join("img2.ppm");
        write_ppm(&path2, &back).unwrap();
        assert_eq!(std::fs::read(&path).unwrap(), std::fs::read(&path2).unwrap());
    }

    #[test]
    fn segmap_bytes_roundtrip_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("seg.pgm");
        let seg = SegMap {
            h: 2,
            w: 3,
            data: vec![0, 1, 5, 2, 0, 3],
        };
        write_pgm_bytes(&path, seg.w, seg.h, &seg.data).unwrap();
        let back = read_segmap(&path).unwrap();
        assert_eq!(back, seg);
    }

    #[test]
    fn unwritable_path_is_reported() {
        let err = write_pgm(Path::new("/nonexistent-dir/x.pgm"), 1, 1, &[0.0]).unwrap_err();
        assert!(err.to_string().contains("nonexistent-dir"));
    }

    #[test]
    fn reader_rejects_wrong_magic() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.pgm");
        std::fs::write(&path, b"P6\n1 1\n255\n\x00\x00\x00").unwrap();
        assert!(read_pgm_bytes(&path).is_err());
    }
}
