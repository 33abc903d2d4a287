//! Bit-exact sample file formats and the dataset manifest.
//!
//! - points: text, one "x,y,z,h" line per point, 9 significant digits, LF.
//! - clip:   binary LE: magic "PVAD", u32 version=1, u32 T/C/H/W, f32 data.
//! - meta:   "key=value" lines (id, category, affordance, split, viewpoint,
//!           focal, image_size).
//! - manifest: "id,split,points_path,clip_path,meta_path" lines.

use super::{
    Affordance, Category, Manifest, ManifestEntry, Sample, SplitTag, VideoClip,
};
use crate::error::{Result, VagError};
use crate::geometry::{CameraParams, PointCloud, Vec3};
use std::fs;
use std::io::{Read, Write};
use std::path::Path;

const CLIP_MAGIC: &[u8; 4] = b"PVAD";
const CLIP_VERSION: u32 = 1;

/// Rounds to the 9-significant-digit decimal the points file stores, so
/// generated values survive a write/read cycle bitwise.
pub fn canon9(v: f64) -> f64 {
    format!("{v:.8e}").parse().expect("canonical float reparses")
}

fn fmt9(v: f64) -> String {
    format!("{v:.8e}")
}

fn parse_f64(s: &str, what: &str) -> Result<f64> {
    s.trim().parse::<f64>().map_err(|_| {
        VagError::contract("parse", format!("bad float '{s}' in {what}"))
    })
}

// ── points file ──────────────────────────────────────────────────────

pub fn write_points(path: &Path, pc: &PointCloud) -> Result<()> {
    let heat = pc
        .heatmap
        .as_ref()
        .ok_or_else(|| VagError::contract("write_points", "heatmap required"))?;
    let mut out = String::with_capacity(pc.len() * 64);
    for (p, h) in pc.coords.iter().zip(heat) {
        out.push_str(&format!(
            "{},{},{},{}\n",
            fmt9(p[0]),
            fmt9(p[1]),
            fmt9(p[2]),
            fmt9(*h)
        ));
    }
    fs::write(path, out)?;
    Ok(())
}

pub fn read_points(path: &Path) -> Result<PointCloud> {
    let text = fs::read_to_string(path)?;
    let mut coords = Vec::new();
    let mut heat = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 4 {
            return Err(VagError::Format {
                offset: lineno as u64,
                detail: format!("points line {} has {} fields, expected 4", lineno + 1, fields.len()),
            });
        }
        coords.push([
            parse_f64(fields[0], "points")?,
            parse_f64(fields[1], "points")?,
            parse_f64(fields[2], "points")?,
        ]);
        heat.push(parse_f64(fields[3], "points")?);
    }
    PointCloud::new(coords, Some(heat))
}

// ── clip file ────────────────────────────────────────────────────────

pub fn write_clip(path: &Path, clip: &VideoClip) -> Result<()> {
    let mut buf = Vec::with_capacity(24 + clip.data.len() * 4);
    buf.extend_from_slice(CLIP_MAGIC);
    buf.extend_from_slice(&CLIP_VERSION.to_le_bytes());
    for dim in [clip.t, clip.c, clip.h, clip.w] {
        buf.extend_from_slice(&(dim as u32).to_le_bytes());
    }
    for v in &clip.data {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    fs::write(path, buf)?;
    Ok(())
}

pub fn read_clip(path: &Path) -> Result<VideoClip> {
    let mut file = fs::File::open(path)?;
    let mut buf = Vec::new();
    file.read_to_end(&mut buf)?;
    if buf.len() < 24 {
        return Err(VagError::Truncated {
            detail: format!("clip header needs 24 bytes, file has {}", buf.len()),
        });
    }
    if &buf[0..4] != CLIP_MAGIC {
        return Err(VagError::Format {
            offset: 0,
            detail: format!("bad magic {:?}, expected {CLIP_MAGIC:?}", &buf[0..4]),
        });
    }
    let u32_at = |off: usize| u32::from_le_bytes(buf[off..off + 4].try_into().unwrap());
    let version = u32_at(4);
    if version != CLIP_VERSION {
        return Err(VagError::Format {
            offset: 4,
            detail: format!("unsupported clip version {version}"),
        });
    }
    let (t, c, h, w) = (u32_at(8), u32_at(12), u32_at(16), u32_at(20));
    let numel = (t as u64)
        .checked_mul(c as u64)
        .and_then(|v| v.checked_mul(h as u64))
        .and_then(|v| v.checked_mul(w as u64))
        .filter(|&v| v <= (u32::MAX as u64))
        .ok_or_else(|| VagError::Format {
            offset: 8,
            detail: format!("clip dimensions {t}x{c}x{h}x{w} overflow"),
        })? as usize;
    let expected = 24 + numel * 4;
    if buf.len() != expected {
        return Err(VagError::Truncated {
            detail: format!(
                "clip payload: header declares {numel} floats ({expected} bytes), file has {}",
                buf.len()
            ),
        });
    }
    let data: Vec<f32> = buf[24..]
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
        .collect();
    Ok(VideoClip {
        t: t as usize,
        c: c as usize,
        h: h as usize,
        w: w as usize,
        data,
    })
}

// ── meta file ────────────────────────────────────────────────────────

fn fmt17(v: f64) -> String {
    format!("{v:.17e}")
}

pub fn write_meta(path: &Path, s: &Sample) -> Result<()> {
    let vp = &s.viewpoint;
    let nine: Vec<String> = vp
        .eye
        .iter()
        .chain(vp.look_at.iter())
        .chain(vp.up.iter())
        .map(|&v| fmt17(v))
        .collect();
    let text = format!(
        "id={}\ncategory={}\naffordance={}\nsplit={}\nviewpoint={}\nfocal={}\nimage_size={},{}\n",
        s.id,
        s.category.as_str(),
        s.affordance.as_str(),
        s.split_tag.as_str(),
        nine.join(","),
        fmt17(vp.focal),
        vp.image_size.0,
        vp.image_size.1
    );
    fs::write(path, text)?;
    Ok(())
}

pub struct Meta {
    pub id: String,
    pub category: Category,
    pub affordance: Affordance,
    pub split: SplitTag,
    pub viewpoint: CameraParams,
}

pub fn read_meta(path: &Path) -> Result<Meta> {
    let text = fs::read_to_string(path)?;
    let mut kv = std::collections::HashMap::new();
    for (lineno, line) in text.lines().enumerate() {
        let (k, v) = line.split_once('=').ok_or_else(|| VagError::Format {
            offset: lineno as u64,
            detail: format!("meta line {} missing '='", lineno + 1),
        })?;
        kv.insert(k.to_string(), v.to_string());
    }
    let get = |k: &str| -> Result<String> {
        kv.get(k)
            .cloned()
            .ok_or_else(|| VagError::contract("read_meta", format!("missing key '{k}'")))
    };
    let nine: Vec<f64> = get("viewpoint")?
        .split(',')
        .map(|s| parse_f64(s, "viewpoint"))
        .collect::<Result<_>>()?;
    if nine.len() != 9 {
        return Err(VagError::contract(
            "read_meta",
            format!("viewpoint has {} floats, expected 9", nine.len()),
        ));
    }
    let size: Vec<usize> = get("image_size")?
        .split(',')
        .map(|s| {
            s.trim()
                .parse::<usize>()
                .map_err(|_| VagError::contract("read_meta", format!("bad image_size '{s}'")))
        })
        .collect::<Result<_>>()?;
    if size.len() != 2 {
        return Err(VagError::contract("read_meta", "image_size needs 2 fields"));
    }
    let v3 = |i: usize| -> Vec3 { [nine[i], nine[i + 1], nine[i + 2]] };
    Ok(Meta {
        id: get("id")?,
        category: Category::parse(&get("category")?)?,
        affordance: Affordance::parse(&get("affordance")?)?,
        split: SplitTag::parse(&get("split")?)?,
        viewpoint: CameraParams {
            eye: v3(0),
            look_at: v3(3),
            up: v3(6),
            focal: parse_f64(&get("focal")?, "meta")?,
            image_size: (size[0], size[1]),
        },
    })
}

// ── sample / manifest / dataset ──────────────────────────────────────

pub fn write_sample(dir: &Path, entry: &ManifestEntry, s: &Sample) -> Result<()> {
    write_points(&dir.join(&entry.points_path), &s.points)?;
    write_clip(&dir.join(&entry.clip_path), &s.clip)?;
    write_meta(&dir.join(&entry.meta_path), s)?;
    Ok(())
}

pub fn read_sample(dir: &Path, entry: &ManifestEntry) -> Result<Sample> {
    let points = read_points(&dir.join(&entry.points_path))?;
    let clip = read_clip(&dir.join(&entry.clip_path))?;
    let meta = read_meta(&dir.join(&entry.meta_path))?;
    if meta.id != entry.id {
        return Err(VagError::contract(
            "read_sample",
            format!("meta id '{}' does not match manifest id '{}'", meta.id, entry.id),
        ));
    }
    Ok(Sample {
        id: meta.id,
        category: meta.category,
        affordance: meta.affordance,
        points,
        clip,
        viewpoint: meta.viewpoint,
        split_tag: meta.split,
    })
}

pub fn write_manifest(path: &Path, manifest: &Manifest) -> Result<()> {
    let mut out = String::new();
    for e in &manifest.entries {
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            e.id,
            e.split.as_str(),
            e.points_path,
            e.clip_path,
            e.meta_path
        ));
    }
    let mut f = fs::File::create(path)?;
    f.write_all(out.as_bytes())?;
    Ok(())
}

pub fn read_manifest(path: &Path) -> Result<Manifest> {
    let text = fs::read_to_string(path)?;
    let mut entries = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 5 {
            return Err(VagError::Format {
                offset: lineno as u64,
                detail: format!("manifest line {} has {} fields, expected 5", lineno + 1, fields.len()),
            });
        }
        entries.push(ManifestEntry {
            id: fields[0].to_string(),
            split: SplitTag::parse(fields[1])?,
            points_path: fields[2].to_string(),
            clip_path: fields[3].to_string(),
            meta_path: fields[4].to_string(),
        });
    }
    Ok(Manifest { entries })
}

/// An in-memory dataset loaded from (or about to be written to) a
/// manifest directory.
#[derive(Debug, Clone, Default)]
pub struct Dataset {
    pub samples: Vec<Sample>,
}

impl Dataset {
    pub fn split(&self, tag: SplitTag) -> Vec<&Sample> {
        self.samples.iter().filter(|s| s.split_tag == tag).collect()
    }

    pub fn by_id(&self, id: &str) -> Option<&Sample> {
        self.samples.iter().find(|s| s.id == id)
    }
}

/// Writes every sample plus `manifest.csv` under `dir`.
pub fn write_dataset(dir: &Path, samples: &[Sample], manifest: &Manifest) -> Result<()> {
    fs::create_dir_all(dir.join("samples"))?;
    for (s, e) in samples.iter().zip(&manifest.entries) {
        write_sample(dir, e, s)?;
    }
    write_manifest(&dir.join("manifest.csv"), manifest)?;
    Ok(())
}

/// Loads every sample listed in `dir/manifest.csv`.
pub fn load_dataset(dir: &Path) -> Result<Dataset> {
    let manifest = read_manifest(&dir.join("manifest.csv"))?;
    let samples = manifest
        .entries
        .iter()
        .map(|e| read_sample(dir, e))
        .collect::<Result<Vec<_>>>()?;
    Ok(Dataset { samples })
}
