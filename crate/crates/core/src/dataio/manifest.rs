use std::collections::BTreeSet;
use std::fmt;
use std::io::{Read, Write};
use std::path::Path;
use std::str::FromStr;

use chrono::NaiveDate;
use log::{info, warn};

use super::{DataError, Result};

/// OCT scans with signal strength below this are excluded.
pub const MIN_OCT_QUALITY_DB: f64 = 15.0;

pub const MANIFEST_COLUMNS: [&str; 11] = [
    "patient_id",
    "eye",
    "photo_path",
    "photo_date",
    "oct_date",
    "oct_avg_rnfl_um",
    "oct_quality_db",
    "diagnosis",
    "sap_md_db",
    "sap_psd_db",
    "normative_class",
];

macro_rules! label_enum {
    ($name:ident { $($variant:ident => $text:literal),+ $(,)? }) => {
        #[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
        pub enum $name {
            $($variant),+
        }

        impl $name {
            pub fn as_str(self) -> &'static str {
                match self {
                    $($name::$variant => $text),+
                }
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(self.as_str())
            }
        }

        impl FromStr for $name {
            type Err = String;

            fn from_str(s: &str) -> std::result::Result<Self, String> {
                match s {
                    $($text => Ok($name::$variant),)+
                    other => Err(format!("unknown {} `{other}`", stringify!($name).to_lowercase())),
                }
            }
        }
    };
}

label_enum!(Eye { Od => "OD", Os => "OS" });
label_enum!(Diagnosis { Normal => "normal", Suspect => "suspect", Glaucoma => "glaucoma" });
label_enum!(NormativeClass { Within => "within", Borderline => "borderline", Outside => "outside" });

impl NormativeClass {
    /// Borderline is folded into normal; only outside-normal-limits is abnormal.
    pub fn is_abnormal(self) -> bool {
        self == NormativeClass::Outside
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ManifestRow {
    pub patient_id: String,
    pub eye: Eye,
    pub photo_path: String,
    pub photo_date: NaiveDate,
    pub oct_date: NaiveDate,
    pub oct_avg_rnfl_um: f64,
    pub oct_quality_db: f64,
    pub diagnosis: Diagnosis,
    pub sap_md_db: f64,
    pub sap_psd_db: f64,
    pub normative_class: Option<NormativeClass>,
}

impl ManifestRow {
    fn dedup_key(&self) -> (String, Eye, NaiveDate, NaiveDate) {
        (self.patient_id.clone(), self.eye, self.photo_date, self.oct_date)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Exclusion {
    pub line: usize,
    pub patient_id: String,
    pub reason: String,
}

#[derive(Debug, Clone, Default)]
pub struct ManifestLoad {
    pub rows: Vec<ManifestRow>,
    pub exclusions: Vec<Exclusion>,
    pub duplicates: usize,
}

pub fn load_manifest(path: impl AsRef<Path>) -> Result<ManifestLoad> {
    let f = std::fs::File::open(path.as_ref())?;
    parse_manifest(f)
}

/// Parses manifest CSV, dropping rows that violate the exclusion rules
/// (low OCT signal, implausible thickness) and collapsing duplicates of
/// (patient, eye, photo_date, oct_date).
pub fn parse_manifest<R: Read>(reader: R) -> Result<ManifestLoad> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers = rdr.headers()?.clone();
    let mut idx = [0usize; MANIFEST_COLUMNS.len()];
    for (slot, col) in idx.iter_mut().zip(MANIFEST_COLUMNS) {
        *slot = headers
            .iter()
            .position(|h| h == col)
            .ok_or_else(|| DataError::MissingColumn(col.to_string()))?;
    }

    let mut out = ManifestLoad::default();
    let mut seen = BTreeSet::new();
    for (i, rec) in rdr.records().enumerate() {
        let line = i + 2;
        let rec = rec?;
        let field = |c: usize| rec.get(idx[c]).unwrap_or("");
        let err = |msg: String| DataError::Row { line, msg };
        let date = |c: usize| {
            NaiveDate::parse_from_str(field(c), "%Y-%m-%d")
                .map_err(|_| err(format!("malformed date `{}` in {}", field(c), MANIFEST_COLUMNS[c])))
        };
        let float = |c: usize| {
            field(c)
                .parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| err(format!("unparsable number `{}` in {}", field(c), MANIFEST_COLUMNS[c])))
        };
        let patient_id = field(0).to_string();
        if patient_id.is_empty() {
            return Err(err("empty patient_id".into()));
        }
        let row = ManifestRow {
            patient_id,
            eye: field(1).parse().map_err(err)?,
            photo_path: field(2).to_string(),
            photo_date: date(3)?,
            oct_date: date(4)?,
            oct_avg_rnfl_um: float(5)?,
            oct_quality_db: float(6)?,
            diagnosis: field(7).parse().map_err(err)?,
            sap_md_db: float(8)?,
            sap_psd_db: float(9)?,
            normative_class: match field(10) {
                "" => None,
                s => Some(s.parse().map_err(err)?),
            },
        };

        let reason = if row.oct_quality_db < MIN_OCT_QUALITY_DB {
            Some("low signal")
        } else if !(row.oct_avg_rnfl_um > 20.0 && row.oct_avg_rnfl_um < 200.0) {
            Some("implausible thickness")
        } else {
            None
        };
        if let Some(reason) = reason {
            info!("manifest line {line}: excluded ({reason})");
            out.exclusions.push(Exclusion {
                line,
                patient_id: row.patient_id.clone(),
                reason: reason.to_string(),
            });
            continue;
        }
        if !seen.insert(row.dedup_key()) {
            warn!("manifest line {line}: duplicate of an earlier row, dropped");
            out.duplicates += 1;
            continue;
        }
        out.rows.push(row);
    }
    Ok(out)
}

pub fn write_manifest<W: Write>(writer: W, rows: &[ManifestRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(MANIFEST_COLUMNS)?;
    for r in rows {
        w.write_record([
            r.patient_id.clone(),
            r.eye.to_string(),
            r.photo_path.clone(),
            r.photo_date.to_string(),
            r.oct_date.to_string(),
            r.oct_avg_rnfl_um.to_string(),
            r.oct_quality_db.to_string(),
            r.diagnosis.to_string(),
            r.sap_md_db.to_string(),
            r.sap_psd_db.to_string(),
            r.normative_class.map(|c| c.to_string()).unwrap_or_default(),
        ])?;
    }
    w.flush()?;
    Ok(())
}
