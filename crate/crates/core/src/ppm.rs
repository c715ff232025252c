//! Binary PPM (P6, maxval 255) frames and frame-sequence directories.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use crate::frame::Frame;
use crate::tasks::{DataError, Sequence};

fn file_err(path: &Path, msg: impl Into<String>) -> DataError {
    DataError::File {
        path: path.display().to_string(),
        msg: msg.into(),
    }
}

/// Parses a P6 image into a 3-channel frame scaled by 1/255.
pub fn decode_ppm(bytes: &[u8], path: &Path) -> Result<Frame, DataError> {
    let mut pos = 0;
    let mut token = || -> Result<String, DataError> {
        loop {
            while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            if pos < bytes.len() && bytes[pos] == b'#' {
                while pos < bytes.len() && bytes[pos] != b'\n' {
                    pos += 1;
                }
                continue;
            }
            break;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() && bytes[pos] != b'#' {
            pos += 1;
        }
        if start == pos {
            return Err(file_err(path, "truncated header"));
        }
        Ok(String::from_utf8_lossy(&bytes[start..pos]).into_owned())
    };
    let magic = token()?;
    if magic != "P6" {
        return Err(file_err(
            path,
            format!("expected P6 magic, found {magic:?}"),
        ));
    }
    let mut number = |what: &str| -> Result<usize, DataError> {
        let t = token()?;
        t.parse::<usize>()
            .map_err(|_| file_err(path, format!("malformed {what} {t:?}")))
    };
    let width = number("width")?;
    let height = number("height")?;
    let maxval = number("maxval")?;
    if maxval != 255 {
        return Err(file_err(
            path,
            format!("only 8-bit maxval 255 is supported, found {maxval}"),
        ));
    }
    if width == 0 || height == 0 {
        return Err(file_err(path, "zero-sized image"));
    }
    // exactly one whitespace byte separates the header from the raster
    let raster = &bytes[(pos + 1).min(bytes.len())..];
    let need = width * height * 3;
    if raster.len() != need {
        return Err(file_err(
            path,
            format!("raster holds {} bytes, expected {need}", raster.len()),
        ));
    }
    let plane = width * height;
    let mut data = vec![0.0; 3 * plane];
    for (i, px) in raster.chunks_exact(3).enumerate() {
        for c in 0..3 {
            data[c * plane + i] = px[c] as f64 / 255.0;
        }
    }
    Frame::new(3, height, width, data).map_err(|e| file_err(path, e.to_string()))
}

fn quantize(v: f64) -> u8 {
    (255.0 * v.clamp(0.0, 1.0)).round() as u8
}

/// Encodes a 1- or 3-channel frame; grayscale is replicated to RGB.
pub fn encode_ppm(frame: &Frame) -> Vec<u8> {
    let (c, h, w) = frame.dims();
    let plane = h * w;
    let mut out = format!("P6\n{w} {h}\n255\n").into_bytes();
    out.reserve(plane * 3);
    let d = frame.data();
    for i in 0..plane {
        for ch in 0..3 {
            let src = if c == 3 { ch } else { 0 };
            out.push(quantize(d[src * plane + i]));
        }
    }
    out
}

pub fn save_frame(frame: &Frame, path: &Path) -> Result<(), DataError> {
    let mut f = fs::File::create(path).map_err(|e| file_err(path, e.to_string()))?;
    f.write_all(&encode_ppm(frame))
        .map_err(|e| file_err(path, e.to_string()))
}

pub fn load_frame(path: &Path) -> Result<Frame, DataError> {
    let bytes = fs::read(path).map_err(|e| file_err(path, e.to_string()))?;
    decode_ppm(&bytes, path)
}

/// Sorted `*.ppm` files of a directory.
pub fn frame_paths(dir: &Path) -> Result<Vec<PathBuf>, DataError> {
    let entries = fs::read_dir(dir).map_err(|e| file_err(dir, e.to_string()))?;
    let mut paths: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_file() && p.extension().is_some_and(|x| x == "ppm"))
        .collect();
    paths.sort();
    Ok(paths)
}

/// Loads every frame of a sequence directory, in lexicographic file order.
pub fn load_sequence(dir: &Path) -> Result<Sequence, DataError> {
    let paths = frame_paths(dir)?;
    if paths.is_empty() {
        return Err(file_err(dir, "no .ppm frames found"));
    }
    let mut seq: Sequence = Vec::with_capacity(paths.len());
    for p in &paths {
        let f = load_frame(p)?;
        if let Some(first) = seq.first() {
            if first.dims() != f.dims() {
                return Err(file_err(
                    p,
                    format!(
                        "dimensions {:?} differ from {:?} of the first frame",
                        f.dims(),
                        first.dims()
                    ),
                ));
            }
        }
        seq.push(Arc::new(f));
    }
    Ok(seq)
}

/// Like [`load_sequence`], reduced to one channel by averaging when `channels == 1`.
pub fn load_sequence_as(dir: &Path, channels: usize) -> Result<Sequence, DataError> {
    let seq = load_sequence(dir)?;
    match channels {
        3 => Ok(seq),
        1 => Ok(seq.iter().map(|f| Arc::new(to_gray(f))).collect()),
        n => Err(file_err(
            dir,
            format!("cannot load frames with {n} channels"),
        )),
    }
}

fn to_gray(f: &Frame) -> Frame {
    let (c, h, w) = f.dims();
    let plane = h * w;
    let d = f.data();
    let data = (0..plane)
        .map(|i| {
            let s = (0..c).fold(0.0, |acc, ch| acc + d[ch * plane + i]);
            (s / c as f64).clamp(0.0, 1.0)
        })
        .collect();
    Frame::new(1, h, w, data).expect("averages stay in range")
}

/// Writes frames as `000000.ppm`, `000001.ppm`, ...
pub fn save_sequence(frames: &[impl AsRef<Frame>], dir: &Path) -> Result<(), DataError> {
    fs::create_dir_all(dir).map_err(|e| file_err(dir, e.to_string()))?;
    for (i, f) in frames.iter().enumerate() {
        save_frame(f.as_ref(), &dir.join(format!("{i:06}.ppm")))?;
    }
    Ok(())
}

/// Sorted subdirectories of `dir`, each loaded as a sequence.
pub fn load_dataset(dir: &Path, channels: usize) -> Result<Vec<Sequence>, DataError> {
    let entries = fs::read_dir(dir).map_err(|e| file_err(dir, e.to_string()))?;
    let mut subdirs: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_dir())
        .collect();
    subdirs.sort();
    if subdirs.is_empty() {
        return Err(file_err(dir, "no sequence directories found"));
    }
    subdirs
        .iter()
        .map(|d| load_sequence_as(d, channels))
        .collect()
}

impl AsRef<Frame> for Frame {
    fn as_ref(&self) -> &Frame {
        self
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn decodes_hand_built_file() {
        let mut bytes = b"P6\n# two by two\n2 2\n255\n".to_vec();
        bytes.extend_from_slice(&[0, 51, 255, 255, 0, 102, 127, 128, 1, 10, 20, 30]);
        let f = decode_ppm(&bytes, Path::new("x.ppm")).unwrap();
        assert_eq!(f.dims(), (3, 2, 2));
        let expected = [
            0.0, 255.0, 127.0, 10.0, // R plane
            51.0, 0.0, 128.0, 20.0, // G plane
            255.0, 102.0, 1.0, 30.0, // B plane
        ];
        let got: Vec<f64> = f.data().to_vec();
        let want: Vec<f64> = expected.iter().map(|v| v / 255.0).collect();
        assert_eq!(got, want);
    }

    #[test]
    fn rejects_bad_headers_with_filename() {
        let p = Path::new("frame_7.ppm");
        let err = decode_ppm(b"P3\n1 1\n255\n0 0 0", p).unwrap_err();
        assert!(err.to_string().contains("frame_7.ppm"));
        assert!(decode_ppm(b"P6\n1 1\n65535\n\0\0\0\0\0\0", p).is_err());
        assert!(decode_ppm(b"P6\n2 1\n255\n\0\0\0", p).is_err());
        assert!(decode_ppm(b"P6\nx 1\n255\n\0\0\0", p).is_err());
    }

    #[test]
    fn encode_replicates_gray() {
        let f = Frame::new(1, 1, 2, vec![0.5, 1.0]).unwrap();
        let bytes = encode_ppm(&f);
        assert!(bytes.ends_with(&[128, 128, 128, 255, 255, 255]));
    }
}
