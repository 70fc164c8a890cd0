use std::io::Write;
use std::path::Path;

use super::{DataError, ImageU8, Result};

pub fn load_ppm(path: impl AsRef<Path>) -> Result<ImageU8> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|source| DataError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    parse_ppm(&bytes)
}

pub(crate) fn parse_ppm(bytes: &[u8]) -> Result<ImageU8> {
    if bytes.len() < 2 || &bytes[..2] != b"P6" {
        return Err(DataError::BadMagic);
    }
    let mut pos = 2;
    let mut fields = [0u32; 3];
    for f in &mut fields {
        *f = header_field(bytes, &mut pos)?;
    }
    let [w, h, maxval] = fields;
    if maxval != 255 {
        return Err(DataError::BadMaxval(maxval));
    }
    // exactly one whitespace byte separates the header from the raster
    if pos >= bytes.len() || !bytes[pos].is_ascii_whitespace() {
        return Err(DataError::Truncated);
    }
    pos += 1;
    let (h, w) = (h as usize, w as usize);
    let need = h.checked_mul(w).and_then(|n| n.checked_mul(3)).ok_or(DataError::Truncated)?;
    let raster = bytes.get(pos..pos + need).ok_or(DataError::Truncated)?;
    ImageU8::new(h, w, raster.to_vec())
}

fn header_field(bytes: &[u8], pos: &mut usize) -> Result<u32> {
    loop {
        match bytes.get(*pos) {
            Some(b'#') => {
                while bytes.get(*pos).is_some_and(|&b| b != b'\n') {
                    *pos += 1;
                }
            }
            Some(b) if b.is_ascii_whitespace() => *pos += 1,
            Some(_) => break,
            None => return Err(DataError::Truncated),
        }
    }
    let start = *pos;
    while bytes.get(*pos).is_some_and(u8::is_ascii_digit) {
        *pos += 1;
    }
    std::str::from_utf8(&bytes[start..*pos])
        .ok()
        .and_then(|s| s.parse().ok())
        .ok_or(DataError::Truncated)
}

/// Writes via a temporary file in the target directory, then renames.
pub fn save_ppm(img: &ImageU8, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let io = |source| DataError::Io {
        path: path.to_path_buf(),
        source,
    };
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(io)?;
    write!(tmp, "P6\n{} {}\n255\n", img.w, img.h).map_err(io)?;
    tmp.write_all(&img.data).map_err(io)?;
    tmp.persist(path).map_err(|e| io(e.error))?;
    Ok(())
}
