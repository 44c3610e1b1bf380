//! Classification maps as binary PPM (`P6`, maxval 255).

use std::io::{Read, Write};

use crate::error::{Error, Result};

/// Colour of class `c` is `PALETTE[(c - 1) % 16]`; label 0 is [`UNLABELED`].
pub const PALETTE: [[u8; 3]; 16] = [
    [255, 0, 0],
    [0, 255, 0],
    [0, 0, 255],
    [255, 255, 0],
    [255, 0, 255],
    [0, 255, 255],
    [255, 128, 0],
    [128, 0, 255],
    [0, 128, 0],
    [128, 64, 0],
    [255, 128, 192],
    [128, 128, 128],
    [0, 0, 128],
    [128, 128, 0],
    [0, 128, 128],
    [255, 255, 255],
];

pub const UNLABELED: [u8; 3] = [0, 0, 0];

pub fn class_color(label: i32) -> [u8; 3] {
    if label <= 0 {
        UNLABELED
    } else {
        PALETTE[(label as usize - 1) % PALETTE.len()]
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Rgb {
    pub h: usize,
    pub w: usize,
    /// Row-major RGB triples.
    pub pixels: Vec<u8>,
}

/// Renders a row-major label raster.
pub fn render_labels(h: usize, w: usize, labels: &[i32]) -> Result<Rgb> {
    if labels.len() != h * w {
        return Err(Error::Shape(format!("{} labels for a {h}×{w} image", labels.len())));
    }
    Ok(Rgb {
        h,
        w,
        pixels: labels.iter().flat_map(|&l| class_color(l)).collect(),
    })
}

pub fn write_ppm<W: Write>(mut out: W, img: &Rgb) -> Result<()> {
    write!(out, "P6\n{} {}\n255\n", img.w, img.h)?;
    out.write_all(&img.pixels)?;
    Ok(())
}

fn header_token(buf: &[u8], pos: &mut usize) -> Result<String> {
    loop {
        while *pos < buf.len() && buf[*pos].is_ascii_whitespace() {
            *pos += 1;
        }
        if *pos < buf.len() && buf[*pos] == b'#' {
            while *pos < buf.len() && buf[*pos] != b'\n' {
                *pos += 1;
            }
        } else {
            break;
        }
    }
    let start = *pos;
    while *pos < buf.len() && !buf[*pos].is_ascii_whitespace() {
        *pos += 1;
    }
    if start == *pos {
        return Err(Error::Format("PPM header truncated".into()));
    }
    Ok(String::from_utf8_lossy(&buf[start..*pos]).into_owned())
}

pub fn read_ppm<R: Read>(mut r: R) -> Result<Rgb> {
    let mut buf = Vec::new();
    r.read_to_end(&mut buf)?;
    let mut pos = 0;
    if header_token(&buf, &mut pos)? != "P6" {
        return Err(Error::Format("not a binary PPM (P6)".into()));
    }
    let mut num = || -> Result<usize> {
        let t = header_token(&buf, &mut pos)?;
        t.parse().map_err(|_| Error::Format(format!("bad PPM header field `{t}`")))
    };
    let (w, h, maxval) = (num()?, num()?, num()?);
    if maxval != 255 {
        return Err(Error::Format(format!("unsupported PPM maxval {maxval}")));
    }
    // Exactly one whitespace byte separates the header from the raster.
    pos += 1;
    let need = h * w * 3;
    if buf.len() < pos + need {
        return Err(Error::Format("PPM raster truncated".into()));
    }
    Ok(Rgb {
        h,
        w,
        pixels: buf[pos..pos + need].to_vec(),
    })
}
