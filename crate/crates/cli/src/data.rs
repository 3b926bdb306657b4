use std::collections::BTreeSet;

use anyhow::{Context, Result};
use discnet::dataio::{load_manifest, Split};
use discnet::phantom::{gen_cohort, CohortSpec};

use crate::common::{assignment, create_dir, load_rows, write_assignment, write_csv};
use crate::config::{key, usage, Key, RunConfig};

pub const PHANTOM_KEYS: &[Key] = &[
    key("out", "", "cohort directory"),
    key("patients", "200", "number of patients"),
    key("eyes", "2", "eyes per patient (1 or 2)"),
    key("visits", "3", "visits per eye, N or MIN-MAX"),
    key("size", "64", "image height in pixels"),
    key("stereo", "false", "render side-by-side stereo pairs"),
    key("noise", "0.03", "pixel noise standard deviation"),
    key("seed", "0", "random seed"),
];

fn visit_range(raw: &str) -> Result<(usize, usize)> {
    let parse = |s: &str| s.trim().parse::<usize>().map_err(|e| usage(format!("--visits {raw}: {e}")));
    match raw.split_once('-') {
        Some((a, b)) => Ok((parse(a)?, parse(b)?)),
        None => {
            let v = parse(raw)?;
            Ok((v, v))
        }
    }
}

pub fn phantom(cfg: &mut RunConfig) -> Result<()> {
    let out = cfg.path("out")?;
    let spec = CohortSpec {
        n_patients: cfg.parse("patients")?,
        eyes_per_patient: cfg.parse("eyes")?,
        visits: visit_range(cfg.str("visits")?)?,
        image_size: cfg.parse("size")?,
        stereo: cfg.flag("stereo")?,
        noise_sd: cfg.parse("noise")?,
        ..CohortSpec::default()
    };
    spec.validate().map_err(|e| usage(e.to_string()))?;
    let seed: u64 = cfg.parse("seed")?;
    create_dir(&out)?;
    let cohort = gen_cohort(&spec, seed, &out).with_context(|| format!("generating cohort in {}", out.display()))?;
    cfg.write_resolved(&out)?;
    let patients: BTreeSet<&str> = cohort.visits.iter().map(|v| v.patient_id.as_str()).collect();
    println!(
        "wrote {} rows for {} patients to {}",
        cohort.visits.len(),
        patients.len(),
        cohort.manifest_path.display()
    );
    Ok(())
}

pub const VALIDATE_KEYS: &[Key] = &[
    key("manifest", "", "manifest CSV"),
    key("out", "", "optional directory for exclusions.csv"),
];

pub fn validate(cfg: &mut RunConfig) -> Result<()> {
    let path = match cfg.opt_path("manifest") {
        Some(p) => p,
        None => cfg.positional.first().map(Into::into).ok_or_else(|| usage("`validate` needs --manifest"))?,
    };
    let load = load_manifest(&path).with_context(|| format!("loading {}", path.display()))?;
    let (paired, _) = load_rows(&path)?;
    let patients: BTreeSet<&str> = load.rows.iter().map(|r| r.patient_id.as_str()).collect();
    println!("rows: {}", load.rows.len());
    println!("patients: {}", patients.len());
    println!("duplicates dropped: {}", load.duplicates);
    println!("paired photos: {}", paired.len());
    println!("exclusions: {}", load.exclusions.len());
    for e in &load.exclusions {
        println!("  line {} ({}): {}", e.line, e.patient_id, e.reason);
    }
    if let Some(out) = cfg.opt_path("out") {
        create_dir(&out)?;
        let records: Vec<Vec<String>> = load
            .exclusions
            .iter()
            .map(|e| vec![e.line.to_string(), e.patient_id.clone(), e.reason.clone()])
            .collect();
        write_csv(&out.join("exclusions.csv"), &["line", "patient_id", "reason"], &records)?;
        cfg.write_resolved(&out)?;
    }
    Ok(())
}

pub const SPLIT_KEYS: &[Key] = &[
    key("manifest", "", "manifest CSV"),
    key("out", "", "output directory for split.csv"),
    key("ratios", "0.7,0.1,0.2", "train,valid,test patient fractions"),
    key("seed", "0", "random seed"),
];

pub fn split(cfg: &mut RunConfig) -> Result<()> {
    let out = cfg.path("out")?;
    let (rows, _) = load_rows(&cfg.path("manifest")?)?;
    let a = assignment(cfg, &rows)?;
    create_dir(&out)?;
    write_assignment(&out.join("split.csv"), &a)?;
    cfg.write_resolved(&out)?;
    for s in Split::ALL {
        println!("{s}: {} patients", a.values().filter(|&&v| v == s).count());
    }
    Ok(())
}
