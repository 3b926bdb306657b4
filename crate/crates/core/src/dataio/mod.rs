//! Manifest ingestion, photo/OCT pairing, patient-level splitting, image
//! preprocessing and augmentation.

mod augment;
mod image;
mod manifest;
mod pairing;
mod split;

pub use augment::{augment, AugmentParams};
pub use image::{
    area_resize, decode_pnm, encode_pgm, encode_ppm, preprocess, read_pnm, Image, PreprocessConfig, StereoMode,
};
pub use manifest::{
    load_manifest, parse_manifest, write_manifest, Diagnosis, Exclusion, Eye, ManifestLoad, ManifestRow,
    NormativeClass, MANIFEST_COLUMNS, MIN_OCT_QUALITY_DB,
};
pub use pairing::{pair_manifest, pair_photos_to_oct, OctScan, Photo, MAX_PAIRING_DAYS};
pub use split::{
    read_split_csv, split_by_patient, split_counts, write_split_csv, Split, SplitAssignment, SplitRatios,
};

use std::fmt;
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::ndtensor::Tensor;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("manifest line {line}: {msg}")]
    Row { line: usize, msg: String },
    #[error("manifest is missing required column `{0}`")]
    MissingColumn(String),
    #[error("image {path}: {msg}")]
    Image { path: String, msg: String },
    #[error("split: {0}")]
    Split(String),
    #[error("patient `{0}` is assigned to more than one split")]
    Leakage(String),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, DataError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum View {
    Mono,
    Left,
    Right,
}

impl fmt::Display for View {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            View::Mono => "mono",
            View::Left => "left",
            View::Right => "right",
        })
    }
}

/// One preprocessed photo view linked to its OCT measurement.
#[derive(Debug, Clone)]
pub struct SamplePair {
    /// `[channels, size, size]`, values in [0, 1].
    pub image: Tensor,
    pub target_um: f64,
    pub patient_id: String,
    pub eye: Eye,
    pub view: View,
    pub split: Split,
    pub photo_path: String,
    pub diagnosis: Diagnosis,
    pub sap_md_db: f64,
    pub normative_class: Option<NormativeClass>,
}

impl SamplePair {
    /// Binary classification target: outside normal limits is abnormal,
    /// borderline counts as normal.
    pub fn abnormal(&self) -> Option<bool> {
        self.normative_class.map(NormativeClass::is_abnormal)
    }

    /// Participant-level cluster key for resampling.
    pub fn cluster(&self) -> &str {
        &self.patient_id
    }
}

/// Resolves a manifest photo path relative to the manifest's directory.
pub fn resolve_photo(manifest_dir: &Path, photo_path: &str) -> PathBuf {
    let p = Path::new(photo_path);
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        manifest_dir.join(p)
    }
}

/// Decodes every row's photo into one sample per view, tagged with its patient's split.
/// Rows of patients absent from `assignment` are skipped.
pub fn build_samples(
    rows: &[ManifestRow],
    assignment: &SplitAssignment,
    manifest_dir: &Path,
    cfg: &PreprocessConfig,
    only: Option<Split>,
) -> Result<Vec<SamplePair>> {
    let mut out = Vec::new();
    for row in rows {
        let Some(&split) = assignment.get(&row.patient_id) else {
            continue;
        };
        if only.is_some_and(|s| s != split) {
            continue;
        }
        let views = preprocess(&resolve_photo(manifest_dir, &row.photo_path), cfg)?;
        let stereo = views.len() == 2;
        for (i, image) in views.into_iter().enumerate() {
            let view = match (stereo, i) {
                (false, _) => View::Mono,
                (true, 0) => View::Left,
                (true, _) => View::Right,
            };
            out.push(SamplePair {
                image,
                target_um: row.oct_avg_rnfl_um,
                patient_id: row.patient_id.clone(),
                eye: row.eye,
                view,
                split,
                photo_path: row.photo_path.clone(),
                diagnosis: row.diagnosis,
                sap_md_db: row.sap_md_db,
                normative_class: row.normative_class,
            });
        }
    }
    Ok(out)
}
