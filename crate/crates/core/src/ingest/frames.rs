//! Frame files on disk: `frame_%05d.png`, ordered by their numeric index.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;

use ndarray::{Array4, Axis};

use crate::error::{Error, Result};

pub const FRAME_PREFIX: &str = "frame_";

pub fn frame_name(index: usize) -> String {
    format!("{FRAME_PREFIX}{index:05}.png")
}

fn frame_index(name: &str) -> Option<u64> {
    name.strip_prefix(FRAME_PREFIX)?.strip_suffix(".png")?.parse().ok()
}

/// Frame files in `dir`, sorted by index. A missing directory is an error;
/// an empty one is not.
pub fn list_frames(dir: &Path) -> Result<Vec<PathBuf>> {
    if !dir.is_dir() {
        return Err(Error::MissingFile(dir.to_path_buf()));
    }
    let mut frames: Vec<(u64, PathBuf)> = fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|entry| entry.ok())
        .filter_map(|entry| {
            let path = entry.path();
            let idx = frame_index(path.file_name()?.to_str()?)?;
            Some((idx, path))
        })
        .collect();
    frames.sort();
    Ok(frames.into_iter().map(|(_, p)| p).collect())
}

pub fn decode_rgb(path: &Path) -> Result<image::RgbImage> {
    let img = image::open(path).map_err(|e| Error::Decode {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    Ok(img.into_rgb8())
}

/// Raw bytes `(N, 3, H, W)` in RGB order.
pub fn load_frames_u8(dir: &Path) -> Result<Array4<u8>> {
    let paths = list_frames(dir)?;
    let mut out: Option<Array4<u8>> = None;
    let mut dims = (0, 0);
    for (i, path) in paths.iter().enumerate() {
        let img = decode_rgb(path)?;
        let (w, h) = img.dimensions();
        let arr = out.get_or_insert_with(|| {
            dims = (w, h);
            Array4::zeros((paths.len(), 3, h as usize, w as usize))
        });
        if (w, h) != dims {
            return Err(Error::InconsistentResolution {
                path: path.clone(),
                expected_w: dims.0,
                expected_h: dims.1,
                found_w: w,
                found_h: h,
            });
        }
        let mut frame = arr.index_axis_mut(Axis(0), i);
        for (x, y, px) in img.enumerate_pixels() {
            for c in 0..3 {
                frame[[c, y as usize, x as usize]] = px[c];
            }
        }
    }
    Ok(out.unwrap_or_else(|| Array4::zeros((0, 3, 0, 0))))
}

/// Frames scaled to `[0, 1]`.
pub fn load_frames(dir: &Path) -> Result<Array4<f32>> {
    Ok(load_frames_u8(dir)?.mapv(|v| v as f32 / 255.0))
}

pub fn write_frame(path: &Path, rgb: &image::RgbImage) -> Result<()> {
    rgb.save(path).map_err(|e| Error::io(path, std::io::Error::other(e)))
}

fn shell_quote(p: &Path) -> String {
    format!("'{}'", p.to_string_lossy().replace('\'', r"'\''"))
}

/// Runs a decoder command template such as
/// `ffmpeg -loglevel error -i {input} {output_dir}/frame_%05d.png` through
/// `sh -c` and returns the number of frames it produced.
pub fn run_decoder(template: &str, input: &Path, output_dir: &Path) -> Result<usize> {
    if !input.is_file() {
        return Err(Error::MissingFile(input.to_path_buf()));
    }
    fs::create_dir_all(output_dir).map_err(|e| Error::io(output_dir, e))?;
    let cmd = template
        .replace("{input}", &shell_quote(input))
        .replace("{output_dir}", &shell_quote(output_dir));
    let out = Command::new("sh")
        .arg("-c")
        .arg(&cmd)
        .output()
        .map_err(|e| Error::Decoder(format!("cannot spawn `{cmd}`: {e}")))?;
    if !out.status.success() {
        return Err(Error::Decoder(format!(
            "`{cmd}` exited with {}: {}",
            out.status,
            String::from_utf8_lossy(&out.stderr).trim()
        )));
    }
    let n = list_frames(output_dir)?.len();
    if n == 0 {
        return Err(Error::Decoder(format!("`{cmd}` produced no frame_*.png files")));
    }
    Ok(n)
}
