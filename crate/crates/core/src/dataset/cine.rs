use std::fmt;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::DatasetError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum ViewKind {
    Lax,
    SaxApical,
    SaxMid,
    SaxBasal,
}

impl ViewKind {
    /// Storage order of the views in a cine file.
    pub const ALL: [ViewKind; 4] = [ViewKind::Lax, ViewKind::SaxApical, ViewKind::SaxMid, ViewKind::SaxBasal];

    pub fn name(self) -> &'static str {
        match self {
            ViewKind::Lax => "LAX",
            ViewKind::SaxApical => "SAX-apical",
            ViewKind::SaxMid => "SAX-mid",
            ViewKind::SaxBasal => "SAX-basal",
        }
    }
}

impl fmt::Display for ViewKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub mean: f64,
    pub std: f64,
}

pub const NORM_EPS: f64 = 1e-8;

/// Z-score over the whole stack, `(x − mean) / max(std, 1e-8)` with the
/// population standard deviation.
pub fn zscore_normalize(x: &[f64]) -> (Vec<f64>, NormStats) {
    let n = x.len().max(1) as f64;
    let mean = x.iter().sum::<f64>() / n;
    let var = x.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    let stats = NormStats { mean, std: var.sqrt() };
    (apply_norm(x, &stats), stats)
}

fn apply_norm(x: &[f64], s: &NormStats) -> Vec<f64> {
    let d = s.std.max(NORM_EPS);
    x.iter().map(|v| (v - s.mean) / d).collect()
}

/// Raw intensities of `frames × views × size × size` pixels, row-major.
/// Values are held at single precision, the precision of the file format,
/// so a stored sequence reloads exactly.
#[derive(Debug, Clone, PartialEq)]
pub struct CineSequence {
    pub frames: usize,
    pub views: Vec<ViewKind>,
    pub size: usize,
    pub mm_per_px: f64,
    pub data: Vec<f32>,
    pub stats: NormStats,
}

impl CineSequence {
    pub fn new(frames: usize, views: Vec<ViewKind>, size: usize, mm_per_px: f64, data: Vec<f32>) -> Self {
        assert_eq!(data.len(), frames * views.len() * size * size, "cine data length");
        let raw: Vec<f64> = data.iter().map(|&v| v as f64).collect();
        let (_, stats) = zscore_normalize(&raw);
        CineSequence { frames, views, size, mm_per_px, data, stats }
    }

    pub fn pixels_per_image(&self) -> usize {
        self.size * self.size
    }

    pub fn view_index(&self, v: ViewKind) -> Option<usize> {
        self.views.iter().position(|&k| k == v)
    }

    pub fn image(&self, frame: usize, view: usize) -> &[f32] {
        let p = self.pixels_per_image();
        let start = (frame * self.views.len() + view) * p;
        &self.data[start..start + p]
    }

    /// Normalized `[frames, views, H, W]` values using the stored statistics.
    pub fn normalized(&self) -> Vec<f64> {
        let raw: Vec<f64> = self.data.iter().map(|&v| v as f64).collect();
        apply_norm(&raw, &self.stats)
    }

    /// Normalized pixels of the selected views for every frame, laid out
    /// `[frames, selected, H, W]`.
    pub fn normalized_views(&self, views: &[ViewKind]) -> Vec<f64> {
        let p = self.pixels_per_image();
        let idx: Vec<usize> = views.iter().map(|v| self.view_index(*v).expect("view present in sequence")).collect();
        let d = self.stats.std.max(NORM_EPS);
        let mut out = Vec::with_capacity(self.frames * idx.len() * p);
        for t in 0..self.frames {
            for &v in &idx {
                out.extend(self.image(t, v).iter().map(|&x| (x as f64 - self.stats.mean) / d));
            }
        }
        out
    }
}

const MAGIC: &[u8; 4] = b"CDIM";
const VERSION: u32 = 1;

/// `CDIM`, version, `(frames, views, H, W)` as u32, then f32 pixels, all
/// little-endian. View kinds are not stored; files use [`ViewKind::ALL`]
/// order when they hold four views and LAX alone when they hold one.
pub fn write_cine(seq: &CineSequence, path: &Path) -> Result<(), DatasetError> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    for d in [seq.frames, seq.views.len(), seq.size, seq.size] {
        w.write_all(&(d as u32).to_le_bytes())?;
    }
    for v in &seq.data {
        w.write_all(&v.to_le_bytes())?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a cine file; `mm_per_px` is not part of the format.
pub fn read_cine(path: &Path, mm_per_px: f64) -> Result<CineSequence, DatasetError> {
    let bad = |detail: String| DatasetError::Format { path: path.display().to_string(), detail };
    let mut r = BufReader::new(File::open(path)?);
    let mut head = [0u8; 24];
    r.read_exact(&mut head).map_err(|_| bad("truncated header".into()))?;
    if &head[..4] != MAGIC {
        return Err(bad("not a CDIM file".into()));
    }
    let u = |i: usize| u32::from_le_bytes(head[i..i + 4].try_into().unwrap()) as usize;
    if u(4) as u32 != VERSION {
        return Err(bad(format!("unsupported version {}", u(4))));
    }
    let (frames, views, h, w) = (u(8), u(12), u(16), u(20));
    if h != w {
        return Err(bad(format!("non-square images {h}×{w}")));
    }
    let kinds = match views {
        4 => ViewKind::ALL.to_vec(),
        1 => vec![ViewKind::Lax],
        n => return Err(bad(format!("unsupported view count {n}"))),
    };
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes)?;
    let n = frames * views * h * w;
    if bytes.len() != n * 4 {
        return Err(bad(format!("payload has {} bytes, expected {}", bytes.len(), n * 4)));
    }
    let data = bytes.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect();
    Ok(CineSequence::new(frames, kinds, h, mm_per_px, data))
}
