use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::io::{Read, Write};
use std::str::FromStr;

use rand::seq::SliceRandom;

use super::{DataError, Result};
use crate::rng::stream_rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Split {
    Train,
    Valid,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Valid, Split::Test];

    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Valid => "valid",
            Split::Test => "test",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Split {
    type Err = DataError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "valid" => Ok(Split::Valid),
            "test" => Ok(Split::Test),
            other => Err(DataError::Split(format!("unknown split `{other}`"))),
        }
    }
}

/// Patient id -> split.
pub type SplitAssignment = BTreeMap<String, Split>;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SplitRatios {
    pub train: f64,
    pub valid: f64,
    pub test: f64,
}

impl Default for SplitRatios {
    /// 80 % train+valid / 20 % test, with 12.5 % of the former held out for validation.
    fn default() -> Self {
        Self {
            train: 0.7,
            valid: 0.1,
            test: 0.2,
        }
    }
}

impl SplitRatios {
    pub fn new(train: f64, valid: f64, test: f64) -> Result<Self> {
        let r = Self { train, valid, test };
        let vals = r.as_array();
        if vals.iter().any(|v| !(0.0..=1.0).contains(v)) || (vals.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(DataError::Split(format!(
                "ratios must be in [0, 1] and sum to 1, got ({train}, {valid}, {test})"
            )));
        }
        Ok(r)
    }

    fn as_array(&self) -> [f64; 3] {
        [self.train, self.valid, self.test]
    }
}

/// Patients per split by largest remainder; ties in the remainder go to the earlier split.
pub fn split_counts(n: usize, ratios: &SplitRatios) -> [usize; 3] {
    let r = ratios.as_array();
    let exact: Vec<f64> = r.iter().map(|x| x * n as f64).collect();
    let mut counts: [usize; 3] = [0; 3];
    for (c, e) in counts.iter_mut().zip(&exact) {
        *c = e.floor() as usize;
    }
    let mut order = [0usize, 1, 2];
    order.sort_by(|&a, &b| (exact[b] - exact[b].floor()).total_cmp(&(exact[a] - exact[a].floor())).then(a.cmp(&b)));
    let mut left = n - counts.iter().sum::<usize>();
    for &i in order.iter().cycle() {
        if left == 0 {
            break;
        }
        if r[i] > 0.0 {
            counts[i] += 1;
            left -= 1;
        }
    }
    counts
}

/// Assigns whole patients to splits. Deterministic in `seed` and independent
/// of the order in which patient ids are supplied.
pub fn split_by_patient<'a, I>(patient_ids: I, ratios: &SplitRatios, seed: u64) -> Result<SplitAssignment>
where
    I: IntoIterator<Item = &'a str>,
{
    let unique: BTreeSet<&str> = patient_ids.into_iter().collect();
    let mut ids: Vec<&str> = unique.into_iter().collect();
    let nonzero = ratios.as_array().iter().filter(|&&r| r > 0.0).count();
    if ids.len() < 3 || ids.len() < nonzero {
        return Err(DataError::Split(format!(
            "need at least 3 patients and one per non-empty split, got {}",
            ids.len()
        )));
    }
    let counts = split_counts(ids.len(), ratios);
    ids.shuffle(&mut stream_rng(seed, &[0x7370_6c69_74]));
    let mut out = SplitAssignment::new();
    let mut it = ids.into_iter();
    for (split, count) in Split::ALL.into_iter().zip(counts) {
        for id in it.by_ref().take(count) {
            out.insert(id.to_string(), split);
        }
    }
    Ok(out)
}

pub fn write_split_csv<W: Write>(writer: W, assignment: &SplitAssignment) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["patient_id", "split"])?;
    for (id, s) in assignment {
        w.write_record([id.as_str(), s.as_str()])?;
    }
    w.flush()?;
    Ok(())
}

/// Reads `patient_id,split` rows; a patient listed under two splits is leakage.
pub fn read_split_csv<R: Read>(reader: R) -> Result<SplitAssignment> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let mut out = SplitAssignment::new();
    for rec in rdr.records() {
        let rec = rec?;
        let id = rec.get(0).unwrap_or("").to_string();
        let split: Split = rec.get(1).unwrap_or("").parse()?;
        if let Some(prev) = out.insert(id.clone(), split) {
            if prev != split {
                return Err(DataError::Leakage(id));
            }
        }
    }
    Ok(out)
}
