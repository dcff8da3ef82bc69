//! 8-bit RGB images: PNG and binary PPM (P6).

use std::io::Cursor;
use std::path::Path;

use tdae_core::Tensor;

use crate::error::{CliError, Result};

/// Interleaved 8-bit RGB pixels, row-major.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RgbImage {
    pub width: usize,
    pub height: usize,
    pub data: Vec<u8>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ImageFormat {
    Png,
    Ppm,
}

impl ImageFormat {
    /// From the file extension, case-insensitively.
    pub fn from_path(path: &Path) -> Result<Self> {
        let ext = path.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase);
        match ext.as_deref() {
            Some("png") => Ok(ImageFormat::Png),
            Some("ppm") => Ok(ImageFormat::Ppm),
            _ => Err(CliError::image(path, "unsupported image extension (expected .png or .ppm)")),
        }
    }
}

impl RgbImage {
    pub fn new(width: usize, height: usize, data: Vec<u8>) -> Self {
        assert_eq!(data.len(), width * height * 3, "RGB buffer size");
        Self { width, height, data }
    }

    /// `[height, width, 3]` tensor with values `v / 255`.
    pub fn to_tensor(&self) -> Tensor {
        Tensor::new(
            vec![self.height, self.width, 3],
            self.data.iter().map(|&v| f64::from(v) / 255.0).collect(),
        )
        .expect("buffer size matches the shape")
    }

    /// Max absolute per-channel difference in 8-bit levels.
    pub fn max_level_diff(&self, other: &RgbImage) -> u8 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| a.abs_diff(*b))
            .max()
            .unwrap_or(0)
    }
}

pub fn read_image(path: &Path) -> Result<RgbImage> {
    let format = ImageFormat::from_path(path)?;
    let bytes = std::fs::read(path).map_err(|e| CliError::io(path, e))?;
    match format {
        ImageFormat::Png => decode_png(&bytes),
        ImageFormat::Ppm => decode_ppm(&bytes),
    }
    .map_err(|m| CliError::image(path, m))
}

pub fn write_image(path: &Path, img: &RgbImage) -> Result<()> {
    let bytes = match ImageFormat::from_path(path)? {
        ImageFormat::Png => encode_png(img).map_err(|m| CliError::image(path, m))?,
        ImageFormat::Ppm => encode_ppm(img),
    };
    std::fs::write(path, bytes).map_err(|e| CliError::io(path, e))
}

pub fn decode_png(bytes: &[u8]) -> std::result::Result<RgbImage, String> {
    let decoder = png::Decoder::new(Cursor::new(bytes));
    let mut reader = decoder.read_info().map_err(|e| format!("PNG decode: {e}"))?;
    let info = reader.info();
    if info.color_type != png::ColorType::Rgb || info.bit_depth != png::BitDepth::Eight {
        return Err(format!(
            "expected 8-bit RGB PNG, found {:?} at {:?}",
            info.color_type, info.bit_depth
        ));
    }
    let size = reader.output_buffer_size().ok_or("PNG image too large")?;
    let mut buf = vec![0; size];
    let out = reader.next_frame(&mut buf).map_err(|e| format!("PNG decode: {e}"))?;
    let (w, h) = (out.width as usize, out.height as usize);
    let row = w * 3;
    let mut data = Vec::with_capacity(row * h);
    for y in 0..h {
        data.extend_from_slice(&buf[y * out.line_size..y * out.line_size + row]);
    }
    Ok(RgbImage::new(w, h, data))
}

pub fn encode_png(img: &RgbImage) -> std::result::Result<Vec<u8>, String> {
    let mut out = Vec::new();
    let w = u32::try_from(img.width).map_err(|_| "image too wide")?;
    let h = u32::try_from(img.height).map_err(|_| "image too tall")?;
    let mut enc = png::Encoder::new(&mut out, w, h);
    enc.set_color(png::ColorType::Rgb);
    enc.set_depth(png::BitDepth::Eight);
    let mut writer = enc.write_header().map_err(|e| format!("PNG encode: {e}"))?;
    writer.write_image_data(&img.data).map_err(|e| format!("PNG encode: {e}"))?;
    writer.finish().map_err(|e| format!("PNG encode: {e}"))?;
    Ok(out)
}

pub fn encode_ppm(img: &RgbImage) -> Vec<u8> {
    let mut out = format!("P6\n{} {}\n255\n", img.width, img.height).into_bytes();
    out.extend_from_slice(&img.data);
    out
}

/// Binary PPM with maxval 255. Comments (`#` to end of line) are allowed in
/// the header; exactly one whitespace byte separates the header from the raster.
pub fn decode_ppm(bytes: &[u8]) -> std::result::Result<RgbImage, String> {
    let mut pos = 0;
    let mut fields = Vec::with_capacity(4);
    while fields.len() < 4 {
        while pos < bytes.len() {
            if bytes[pos] == b'#' {
                while pos < bytes.len() && bytes[pos] != b'\n' {
                    pos += 1;
                }
            } else if bytes[pos].is_ascii_whitespace() {
                pos += 1;
            } else {
                break;
            }
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() && bytes[pos] != b'#' {
            pos += 1;
        }
        if start == pos {
            return Err("truncated PPM header".into());
        }
        fields.push(std::str::from_utf8(&bytes[start..pos]).map_err(|_| "PPM header is not ASCII")?);
    }
    if fields[0] != "P6" {
        return Err(format!("expected binary PPM (P6), found {:?}", fields[0]));
    }
    let num = |s: &str, what: &str| s.parse::<usize>().map_err(|_| format!("bad PPM {what} {s:?}"));
    let (w, h, max) = (num(fields[1], "width")?, num(fields[2], "height")?, num(fields[3], "maxval")?);
    if max != 255 {
        return Err(format!("expected maxval 255, found {max}"));
    }
    if pos >= bytes.len() || !bytes[pos].is_ascii_whitespace() {
        return Err("missing separator after PPM header".into());
    }
    pos += 1;
    let need = w.checked_mul(h).and_then(|n| n.checked_mul(3)).ok_or("PPM dimensions overflow")?;
    let raster = &bytes[pos..];
    if raster.len() < need {
        return Err(format!("PPM raster has {} bytes, expected {need}", raster.len()));
    }
    Ok(RgbImage::new(w, h, raster[..need].to_vec()))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> RgbImage {
        RgbImage::new(5, 3, (0..45).map(|i| (i * 37 % 256) as u8).collect())
    }

    #[test]
    fn png_round_trip() {
        let img = sample();
        assert_eq!(decode_png(&encode_png(&img).unwrap()).unwrap(), img);
    }

    #[test]
    fn ppm_round_trip_and_comments() {
        let img = sample();
        assert_eq!(decode_ppm(&encode_ppm(&img)).unwrap(), img);
        let mut commented = b"P6 # a comment\n5 3\n# another\n255\n".to_vec();
        commented.extend_from_slice(&img.data);
        assert_eq!(decode_ppm(&commented).unwrap(), img);
    }

    #[test]
    fn malformed_inputs_are_rejected() {
        assert!(decode_ppm(b"P3\n1 1\n255\n000").is_err());
        assert!(decode_ppm(b"P6\n2 2\n255\n\x00\x00").is_err());
        assert!(decode_ppm(b"P6\n1 1\n65535\n\x00\x00\x00").is_err());
        assert!(decode_ppm(b"P6\n1").is_err());
        assert!(decode_png(b"not a png").is_err());
    }

    #[test]
    fn non_rgb_png_is_rejected() {
        let mut out = Vec::new();
        let mut enc = png::Encoder::new(&mut out, 2, 2);
        enc.set_color(png::ColorType::Grayscale);
        enc.set_depth(png::BitDepth::Eight);
        let mut w = enc.write_header().unwrap();
        w.write_image_data(&[0, 1, 2, 3]).unwrap();
        w.finish().unwrap();
        assert!(decode_png(&out).unwrap_err().contains("8-bit RGB"));
    }

    #[test]
    fn tensor_view_is_on_the_level_grid() {
        let t = sample().to_tensor();
        assert_eq!(t.shape(), &[3, 5, 3]);
        assert!(t.data().iter().all(|v| (v * 255.0).round() / 255.0 == *v));
    }
}
