use std::collections::BTreeMap;

use chrono::NaiveDate;
use log::info;

use super::{Eye, ManifestRow};

/// Six months, fixed at 183 days.
pub const MAX_PAIRING_DAYS: i64 = 183;

#[derive(Debug, Clone, PartialEq)]
pub struct Photo {
    pub patient_id: String,
    pub eye: Eye,
    pub date: NaiveDate,
    pub path: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OctScan {
    pub patient_id: String,
    pub eye: Eye,
    pub date: NaiveDate,
    pub avg_rnfl_um: f64,
    pub quality_db: f64,
}

/// Pairs every photo with the OCT of the same patient/eye closest in time,
/// within [`MAX_PAIRING_DAYS`]. An equidistant tie goes to the earlier scan.
/// Returns `(photo index, oct index)`; unpairable photos are left out.
///
/// The choice depends only on scan contents, never on list order.
pub fn pair_photos_to_oct(photos: &[Photo], octs: &[OctScan]) -> Vec<(usize, usize)> {
    let mut by_eye: BTreeMap<(&str, Eye), Vec<usize>> = BTreeMap::new();
    for (i, o) in octs.iter().enumerate() {
        by_eye.entry((o.patient_id.as_str(), o.eye)).or_default().push(i);
    }
    let mut pairs = Vec::new();
    for (pi, p) in photos.iter().enumerate() {
        let best = by_eye.get(&(p.patient_id.as_str(), p.eye)).and_then(|cands| {
            cands.iter().copied().min_by(|&a, &b| {
                let (oa, ob) = (&octs[a], &octs[b]);
                let da = (oa.date - p.date).num_days().abs();
                let db = (ob.date - p.date).num_days().abs();
                da.cmp(&db)
                    .then(oa.date.cmp(&ob.date))
                    .then(oa.avg_rnfl_um.total_cmp(&ob.avg_rnfl_um))
                    .then(ob.quality_db.total_cmp(&oa.quality_db))
            })
        });
        match best {
            Some(oi) if (octs[oi].date - p.date).num_days().abs() <= MAX_PAIRING_DAYS => pairs.push((pi, oi)),
            _ => info!("photo {} ({} {}) has no OCT within {MAX_PAIRING_DAYS} days", p.path, p.patient_id, p.eye),
        }
    }
    pairs
}

/// Re-pairs manifest rows: each distinct photo takes the closest OCT among all
/// rows of its eye; the photo's row is rewritten with that OCT's date, value
/// and quality. Photos with no OCT within range are dropped.
pub fn pair_manifest(rows: &[ManifestRow]) -> Vec<ManifestRow> {
    let mut photo_rows: Vec<usize> = Vec::new();
    let mut seen = std::collections::BTreeSet::new();
    for (i, r) in rows.iter().enumerate() {
        if seen.insert((r.patient_id.clone(), r.eye, r.photo_path.clone(), r.photo_date)) {
            photo_rows.push(i);
        }
    }
    let photos: Vec<Photo> = photo_rows
        .iter()
        .map(|&i| Photo {
            patient_id: rows[i].patient_id.clone(),
            eye: rows[i].eye,
            date: rows[i].photo_date,
            path: rows[i].photo_path.clone(),
        })
        .collect();
    let octs: Vec<OctScan> = rows
        .iter()
        .map(|r| OctScan {
            patient_id: r.patient_id.clone(),
            eye: r.eye,
            date: r.oct_date,
            avg_rnfl_um: r.oct_avg_rnfl_um,
            quality_db: r.oct_quality_db,
        })
        .collect();
    pair_photos_to_oct(&photos, &octs)
        .into_iter()
        .map(|(pi, oi)| {
            let mut row = rows[photo_rows[pi]].clone();
            let src = &rows[oi];
            row.oct_date = src.oct_date;
            row.oct_avg_rnfl_um = src.oct_avg_rnfl_um;
            row.oct_quality_db = src.oct_quality_db;
            row.normative_class = src.normative_class;
            row
        })
        .collect()
}
