//! Synthetic paired video / point-cloud samples: generation protocol,
//! Seen/Unseen splits, and bit-exact file formats.

mod generate;
mod io;

pub use generate::{
    build_object, generate_sample, make_splits, orbit_camera, replicate_image_to_clip,
    BuiltObject, PartShape, AZIMUTH_STEP_DEG, CLIP_SIZE, FRAMES, POINTS_PER_CLOUD,
};
pub use io::{
    load_dataset, read_manifest, read_sample, write_dataset, write_manifest, write_sample,
    Dataset,
};

use crate::error::{Result, VagError};
use crate::geometry::{CameraParams, PointCloud};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Category {
    Mug,
    Hammer,
    Kettle,
    Barbell,
    Lamp,
    Cart,
}

impl Category {
    pub const ALL: [Category; 6] = [
        Category::Mug,
        Category::Hammer,
        Category::Kettle,
        Category::Barbell,
        Category::Lamp,
        Category::Cart,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            Category::Mug => "mug",
            Category::Hammer => "hammer",
            Category::Kettle => "kettle",
            Category::Barbell => "barbell",
            Category::Lamp => "lamp",
            Category::Cart => "cart",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Self::ALL
            .iter()
            .find(|c| c.as_str() == s)
            .copied()
            .ok_or_else(|| VagError::unsupported("Category", format!("unknown category '{s}'")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Affordance {
    Grasp,
    Press,
    Pour,
    Lift,
    Beat,
    Push,
}

impl Affordance {
    pub const ALL: [Affordance; 6] = [
        Affordance::Grasp,
        Affordance::Press,
        Affordance::Pour,
        Affordance::Lift,
        Affordance::Beat,
        Affordance::Push,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            Affordance::Grasp => "grasp",
            Affordance::Press => "press",
            Affordance::Pour => "pour",
            Affordance::Lift => "lift",
            Affordance::Beat => "beat",
            Affordance::Push => "push",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Self::ALL
            .iter()
            .find(|a| a.as_str() == s)
            .copied()
            .ok_or_else(|| VagError::unsupported("Affordance", format!("unknown affordance '{s}'")))
    }
}

pub type Pair = (Category, Affordance);

/// Valid (category, affordance) pairings and the object part each one
/// designates. The same category appears with several affordances mapping
/// to different parts, so geometry alone cannot identify the target.
pub fn valid_pairs() -> &'static [(Category, Affordance, usize)] {
    use Affordance::*;
    use Category::*;
    &[
        (Mug, Grasp, 1),
        (Mug, Pour, 2),
        (Mug, Lift, 0),
        (Hammer, Grasp, 0),
        (Hammer, Beat, 1),
        (Kettle, Pour, 1),
        (Kettle, Grasp, 2),
        (Kettle, Lift, 0),
        (Barbell, Press, 1),
        (Barbell, Lift, 2),
        (Lamp, Press, 0),
        (Lamp, Grasp, 2),
        (Cart, Push, 1),
        (Cart, Lift, 0),
    ]
}

pub fn target_part(category: Category, affordance: Affordance) -> Result<usize> {
    valid_pairs()
        .iter()
        .find(|(c, a, _)| *c == category && *a == affordance)
        .map(|(_, _, p)| *p)
        .ok_or_else(|| {
            VagError::unsupported(
                "generate_sample",
                format!("invalid pairing ({}, {})", category.as_str(), affordance.as_str()),
            )
        })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SplitTag {
    SeenTrain,
    SeenEval,
    UnseenEval,
}

impl SplitTag {
    pub fn as_str(&self) -> &'static str {
        match self {
            SplitTag::SeenTrain => "seen-train",
            SplitTag::SeenEval => "seen-eval",
            SplitTag::UnseenEval => "unseen-eval",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "seen-train" => Ok(SplitTag::SeenTrain),
            "seen-eval" => Ok(SplitTag::SeenEval),
            "unseen-eval" => Ok(SplitTag::UnseenEval),
            _ => Err(VagError::unsupported("SplitTag", format!("unknown split '{s}'"))),
        }
    }
}

/// T×C×H×W frame stack, stored as the file format's 32-bit floats.
#[derive(Debug, Clone, PartialEq)]
pub struct VideoClip {
    pub t: usize,
    pub c: usize,
    pub h: usize,
    pub w: usize,
    pub data: Vec<f32>,
}

impl VideoClip {
    pub fn frame(&self, t: usize) -> &[f32] {
        let fs = self.c * self.h * self.w;
        &self.data[t * fs..(t + 1) * fs]
    }

    /// T copies of one frame, in clip form.
    pub fn replicate_frame(&self, t: usize) -> VideoClip {
        let fs = self.c * self.h * self.w;
        let frame = &self.data[t * fs..(t + 1) * fs];
        let mut data = Vec::with_capacity(self.t * fs);
        for _ in 0..self.t {
            data.extend_from_slice(frame);
        }
        VideoClip {
            t: self.t,
            c: self.c,
            h: self.h,
            w: self.w,
            data,
        }
    }
}

/// One paired record: point cloud with ground-truth heatmap, interaction
/// clip, stored affordance-aware viewpoint, and split membership.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub id: String,
    pub category: Category,
    pub affordance: Affordance,
    pub points: PointCloud,
    pub clip: VideoClip,
    pub viewpoint: CameraParams,
    pub split_tag: SplitTag,
}

/// Which pairings are trained on and which are held out. Unseen pairs must
/// be disjoint from seen pairs while reusing affordance types that appear
/// in some seen pair.
#[derive(Debug, Clone)]
pub struct SplitSpec {
    pub seen_pairs: Vec<Pair>,
    pub unseen_pairs: Vec<Pair>,
    pub seed: u64,
}

impl SplitSpec {
    pub fn validate(&self) -> Result<()> {
        for p in &self.unseen_pairs {
            if self.seen_pairs.contains(p) {
                return Err(VagError::unsupported(
                    "SplitSpec",
                    format!("pair ({}, {}) is in both seen and unseen", p.0.as_str(), p.1.as_str()),
                ));
            }
            if !self.seen_pairs.iter().any(|(_, a)| a == &p.1) {
                return Err(VagError::unsupported(
                    "SplitSpec",
                    format!("unseen affordance '{}' never appears in a seen pair", p.1.as_str()),
                ));
            }
        }
        for p in self.seen_pairs.iter().chain(&self.unseen_pairs) {
            target_part(p.0, p.1)?;
        }
        Ok(())
    }

    /// 10 seen / 4 unseen pairings over the 14 valid ones.
    pub fn default_spec(seed: u64) -> SplitSpec {
        use Affordance::*;
        use Category::*;
        SplitSpec {
            seen_pairs: vec![
                (Mug, Grasp),
                (Mug, Lift),
                (Hammer, Grasp),
                (Hammer, Beat),
                (Kettle, Pour),
                (Barbell, Lift),
                (Lamp, Press),
                (Lamp, Grasp),
                (Cart, Push),
                (Cart, Lift),
            ],
            unseen_pairs: vec![
                (Mug, Pour),
                (Kettle, Grasp),
                (Kettle, Lift),
                (Barbell, Press),
            ],
            seed,
        }
    }
}

/// Manifest row pointing at a sample's three files.
#[derive(Debug, Clone, PartialEq)]
pub struct ManifestEntry {
    pub id: String,
    pub split: SplitTag,
    pub points_path: String,
    pub clip_path: String,
    pub meta_path: String,
}

impl ManifestEntry {
    pub fn for_id(id: &str, split: SplitTag) -> ManifestEntry {
        ManifestEntry {
            id: id.to_string(),
            split,
            points_path: format!("samples/{id}.points.csv"),
            clip_path: format!("samples/{id}.clip.bin"),
            meta_path: format!("samples/{id}.meta.txt"),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Manifest {
    pub entries: Vec<ManifestEntry>,
}
