//! Prototype images and PGM input/output.
//!
//! The stock prototype set covers every object and context concept the
//! default graph's prompts can produce. Patterns are procedural in relative
//! coordinates so other resolutions work, but their geometry is tuned at
//! 16x16: same-branch objects (apple/lemon, bird/cat) sit close together,
//! context shapes (table, road) sit at mid distance, and the car pattern is
//! inverted so it is far from every compact shape. Those spacings are what
//! give shared-phase reuse its visible cost when prompts diverge.

use crate::diffusion::{Component, Dims, Latent, MixtureModel};
use crate::error::{Error, Result};
use std::path::Path;

/// Concepts with builtin prototypes, in classification id order.
pub const BUILTIN_CONCEPTS: [&str; 7] = ["apple", "bird", "car", "cat", "lemon", "road", "table"];

const BG: f64 = 0.05;
const FG: f64 = 0.95;

struct Canvas {
    data: Vec<f64>,
    w: usize,
    h: usize,
}

impl Canvas {
    fn new(dims: Dims, fill: f64) -> Self {
        Canvas {
            data: vec![fill; dims.len()],
            w: dims.width,
            h: dims.height,
        }
    }

    fn disk(&mut self, cy: f64, cx: f64, r: f64, v: f64) {
        for y in 0..self.h {
            for x in 0..self.w {
                let (dy, dx) = (y as f64 - cy, x as f64 - cx);
                if dy * dy + dx * dx <= r * r {
                    self.data[y * self.w + x] = v;
                }
            }
        }
    }

    fn ellipse(&mut self, cy: f64, cx: f64, ry: f64, rx: f64, v: f64) {
        for y in 0..self.h {
            for x in 0..self.w {
                let (dy, dx) = ((y as f64 - cy) / ry, (x as f64 - cx) / rx);
                if dy * dy + dx * dx <= 1.0 {
                    self.data[y * self.w + x] = v;
                }
            }
        }
    }

    fn rect(&mut self, y0: usize, y1: usize, x0: usize, x1: usize, v: f64) {
        for y in y0..y1.min(self.h) {
            for x in x0..x1.min(self.w) {
                self.data[y * self.w + x] = v;
            }
        }
    }
}

/// The builtin prototype image for a concept, or None if the concept has no
/// stock pattern.
pub fn builtin_prototype(concept: &str, dims: Dims) -> Option<Vec<f64>> {
    let (w, h) = (dims.width as f64, dims.height as f64);
    // relative scale: patterns were designed on a 16x16 grid
    let sy = h / 16.0;
    let sx = w / 16.0;
    let px = |v: f64, s: f64| (v * s).round() as usize;
    let mut c = Canvas::new(dims, BG);
    match concept {
        "apple" => {
            c.disk(5.0 * sy, 5.0 * sx, 3.2 * sx.min(sy), FG);
            c.rect(px(1.0, sy), px(3.0, sy), px(5.0, sx), px(6.0, sx), FG);
        }
        "lemon" => {
            c.ellipse(5.0 * sy, 6.0 * sx, 2.4 * sy, 3.6 * sx, FG);
        }
        "bird" => {
            c.disk(4.0 * sy, 10.0 * sx, 2.2 * sx.min(sy), FG);
            c.rect(px(6.0, sy), px(9.0, sy), px(8.0, sx), px(14.0, sx), FG);
            c.rect(px(9.0, sy), px(12.0, sy), px(11.0, sx), px(12.0, sx), FG);
        }
        "cat" => {
            c.disk(5.0 * sy, 10.0 * sx, 2.6 * sx.min(sy), FG);
            c.rect(px(1.0, sy), px(3.0, sy), px(8.0, sx), px(9.0, sx), FG);
            c.rect(px(1.0, sy), px(3.0, sy), px(12.0, sx), px(13.0, sx), FG);
            c.rect(px(8.0, sy), px(10.0, sy), px(9.0, sx), px(12.0, sx), FG);
        }
        "table" => {
            c.rect(px(7.0, sy), px(11.0, sy), 0, dims.width, FG);
            c.rect(px(11.0, sy), px(15.0, sy), px(2.0, sx), px(4.0, sx), FG);
            c.rect(px(11.0, sy), px(15.0, sy), px(12.0, sx), px(14.0, sx), FG);
        }
        "road" => {
            for y in 0..dims.height {
                let i = (y as f64 / sy).round() as isize;
                let x0 = ((i - 2).max(0) as f64 * sx).round() as usize;
                let x1 = (((i + 3) as f64 * sx).round() as usize).min(dims.width);
                c.rect(y, y + 1, x0, x1, FG);
            }
        }
        "car" => {
            c = Canvas::new(dims, FG);
            c.rect(px(9.0, sy), px(13.0, sy), px(3.0, sx), px(13.0, sx), BG);
            c.disk(12.0 * sy, 5.0 * sx, 1.4 * sx.min(sy), BG);
            c.disk(12.0 * sy, 11.0 * sx, 1.4 * sx.min(sy), BG);
        }
        _ => return None,
    }
    Some(c.data)
}

/// Build a mixture from the builtin prototype set with one component per
/// concept, equal weights and a common sigma0.
pub fn builtin_mixture(dims: Dims, sigma0: f64) -> Result<MixtureModel> {
    let components = BUILTIN_CONCEPTS
        .iter()
        .map(|concept| Component {
            concept: concept.to_string(),
            weight: 1.0,
            mean: builtin_prototype(concept, dims).expect("builtin concept"),
            sigma0,
        })
        .collect();
    MixtureModel::new(components, dims)
}

/// Build a mixture from `<concept>.pgm` files in a directory.
pub fn mixture_from_dir(dir: &Path, concepts: &[String], sigma0: f64) -> Result<MixtureModel> {
    let mut components = Vec::new();
    let mut dims: Option<Dims> = None;
    for concept in concepts {
        let path = dir.join(format!("{concept}.pgm"));
        let img = read_pgm(&path)
            .map_err(|e| Error::Config(format!("prototype {}: {e}", path.display())))?;
        if let Some(d) = dims {
            if d != img.dims {
                return Err(Error::dimension(format!(
                    "prototype {concept} is {}x{}, expected {}x{}",
                    img.dims.width, img.dims.height, d.width, d.height
                )));
            }
        } else {
            dims = Some(img.dims);
        }
        components.push(Component {
            concept: concept.clone(),
            weight: 1.0,
            mean: img.data,
            sigma0,
        });
    }
    MixtureModel::new(
        components,
        dims.ok_or_else(|| Error::Config("no prototypes given".into()))?,
    )
}

/// Pixel value as stored in a maxval-255 PGM: clamp to [0,1], scale, round.
pub fn to_gray(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Encode as binary PGM (P5, maxval 255).
pub fn pgm_bytes(latent: &Latent) -> Vec<u8> {
    let mut out = format!("P5\n{} {}\n255\n", latent.dims.width, latent.dims.height).into_bytes();
    out.extend(latent.data.iter().map(|&v| to_gray(v)));
    out
}

pub fn write_pgm(path: &Path, latent: &Latent) -> Result<()> {
    std::fs::write(path, pgm_bytes(latent))?;
    Ok(())
}

/// Decode a binary PGM back into a latent with values k/255.
pub fn pgm_from_bytes(bytes: &[u8]) -> Result<Latent> {
    let bad = |m: &str| Error::domain(format!("invalid PGM: {m}"));
    // header tokens may be separated by whitespace and # comments
    let mut pos = 0usize;
    let mut tokens = Vec::new();
    while tokens.len() < 4 && pos < bytes.len() {
        while pos < bytes.len() && (bytes[pos] as char).is_whitespace() {
            pos += 1;
        }
        if pos < bytes.len() && bytes[pos] == b'#' {
            while pos < bytes.len() && bytes[pos] != b'\n' {
                pos += 1;
            }
            continue;
        }
        let start = pos;
        while pos < bytes.len() && !(bytes[pos] as char).is_whitespace() {
            pos += 1;
        }
        if pos > start {
            tokens.push(std::str::from_utf8(&bytes[start..pos]).map_err(|_| bad("header"))?);
        }
    }
    if tokens.len() < 4 || tokens[0] != "P5" {
        return Err(bad("expected P5 header"));
    }
    let w: usize = tokens[1].parse().map_err(|_| bad("width"))?;
    let h: usize = tokens[2].parse().map_err(|_| bad("height"))?;
    let maxval: usize = tokens[3].parse().map_err(|_| bad("maxval"))?;
    if maxval != 255 {
        return Err(bad("only maxval 255 is supported"));
    }
    pos += 1; // single whitespace after maxval
    let pixels = &bytes[pos.min(bytes.len())..];
    if pixels.len() != w * h {
        return Err(bad(&format!(
            "payload is {} bytes, expected {}",
            pixels.len(),
            w * h
        )));
    }
    let data = pixels.iter().map(|&b| b as f64 / 255.0).collect();
    Latent::new(data, Dims::new(w, h), 0)
}

pub fn read_pgm(path: &Path) -> Result<Latent> {
    pgm_from_bytes(&std::fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::RngStreams;

    #[test]
    fn builtin_set_covers_all_concepts_at_default_dims() {
        let dims = Dims::new(16, 16);
        let mix = builtin_mixture(dims, 0.7).unwrap();
        assert_eq!(mix.components().len(), 7);
        for c in mix.components() {
            assert!(c.mean.iter().all(|v| (0.0..=1.0).contains(v)));
        }
        assert!(builtin_prototype("nothing", dims).is_none());
    }

    #[test]
    fn prototype_geometry_orders_semantic_distances() {
        // the split/mismatch dynamics rely on these orderings:
        // same-branch < object-to-context < object-to-far-branch
        let dims = Dims::new(16, 16);
        let d2 = |a: &str, b: &str| -> f64 {
            let pa = builtin_prototype(a, dims).unwrap();
            let pb = builtin_prototype(b, dims).unwrap();
            pa.iter().zip(&pb).map(|(x, y)| (x - y) * (x - y)).sum()
        };
        let al = d2("apple", "lemon");
        let at = d2("apple", "table");
        let ar = d2("apple", "road");
        let ac = d2("apple", "car");
        assert!(al + 50.0 <= at, "apple-lemon {al} vs apple-table {at}");
        assert!(ar + 60.0 <= ac, "apple-road {ar} vs apple-car {ac}");
        let bc = d2("bird", "cat");
        let bt = d2("bird", "table");
        assert!(bc + 40.0 <= bt, "bird-cat {bc} vs bird-table {bt}");
    }

    #[test]
    fn pgm_roundtrip_reproduces_clamped_scaled_pixels() {
        let streams = RngStreams::new(3);
        let mut s = streams.stream("pgm", 0);
        let dims = Dims::new(16, 16);
        let data: Vec<f64> = (0..256).map(|_| s.standard_normal()).collect();
        let latent = Latent::new(data, dims, 0).unwrap();
        let bytes = pgm_bytes(&latent);
        let back = pgm_from_bytes(&bytes).unwrap();
        assert_eq!(back.dims, dims);
        for (orig, read) in latent.data.iter().zip(&back.data) {
            let expect = to_gray(*orig) as f64 / 255.0;
            assert_eq!(*read, expect);
        }
        // byte-stable re-encoding of an already quantized image
        assert_eq!(pgm_bytes(&back), bytes);
    }

    #[test]
    fn pgm_rejects_malformed_input() {
        assert!(pgm_from_bytes(b"P6\n2 2\n255\nxxxx").is_err());
        assert!(pgm_from_bytes(b"P5\n2 2\n255\nxx").is_err());
        assert!(pgm_from_bytes(b"P5\n2 2\n65535\nxxxx").is_err());
    }

    #[test]
    fn mixture_from_dir_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let dims = Dims::new(16, 16);
        for concept in ["apple", "lemon"] {
            let img = Latent::new(builtin_prototype(concept, dims).unwrap(), dims, 0).unwrap();
            write_pgm(&dir.path().join(format!("{concept}.pgm")), &img).unwrap();
        }
        let mix =
            mixture_from_dir(dir.path(), &["apple".to_string(), "lemon".to_string()], 0.5).unwrap();
        assert_eq!(mix.components().len(), 2);
        // stored PGM is already 8-bit, so values match the quantized builtin
        let builtin = builtin_prototype("apple", dims).unwrap();
        for (loaded, orig) in mix.components()[0].mean.iter().zip(&builtin) {
            assert_eq!(*loaded, to_gray(*orig) as f64 / 255.0);
        }
        assert!(mixture_from_dir(dir.path(), &["ghost".to_string()], 0.5).is_err());
    }
}
