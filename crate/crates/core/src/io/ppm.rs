use std::path::Path;

use super::{read_bytes, write_bytes, IoError};
use crate::geometry::RgbImage;

pub fn write_ppm(path: &Path, image: &RgbImage) -> Result<(), IoError> {
    let mut out = format!("P6\n{} {}\n255\n", image.width, image.height).into_bytes();
    out.reserve(3 * image.pixels.len());
    for p in &image.pixels {
        out.extend_from_slice(p);
    }
    write_bytes(path, &out)
}

/// Binary 8-bit PPM; `#` comments are allowed in the header.
pub fn read_ppm(path: &Path) -> Result<RgbImage, IoError> {
    let bytes = read_bytes(path)?;
    if bytes.len() < 2 || &bytes[..2] != b"P6" {
        return Err(IoError::BadMagic {
            path: path.to_path_buf(),
            found: String::from_utf8_lossy(&bytes[..bytes.len().min(2)]).into_owned(),
            expected: "P6",
        });
    }
    let header = |offset: usize, message: &str| IoError::Header { path: path.to_path_buf(), offset, message: message.to_string() };

    let mut pos = 2;
    let mut fields = [0usize; 3];
    for field in fields.iter_mut() {
        loop {
            match bytes.get(pos) {
                Some(b'#') => {
                    while bytes.get(pos).is_some_and(|&b| b != b'\n') {
                        pos += 1;
                    }
                }
                Some(b) if b.is_ascii_whitespace() => pos += 1,
                _ => break,
            }
        }
        let start = pos;
        while bytes.get(pos).is_some_and(u8::is_ascii_digit) {
            pos += 1;
        }
        if start == pos {
            return Err(header(pos, "expected an unsigned integer"));
        }
        *field = std::str::from_utf8(&bytes[start..pos])
            .expect("ascii digits")
            .parse()
            .map_err(|_| header(start, "integer out of range"))?;
    }
    if !bytes.get(pos).is_some_and(u8::is_ascii_whitespace) {
        return Err(header(pos, "expected whitespace after maxval"));
    }
    pos += 1;
    let [width, height, maxval] = fields;
    if maxval != 255 {
        return Err(header(pos, &format!("maxval {maxval} unsupported, expected 255")));
    }
    let expected = width * height * 3;
    let found = bytes.len() - pos;
    if found != expected {
        return Err(IoError::Truncated { path: path.to_path_buf(), offset: pos, expected, found });
    }
    let pixels = bytes[pos..].chunks_exact(3).map(|c| [c[0], c[1], c[2]]).collect();
    Ok(RgbImage { width, height, pixels })
}
