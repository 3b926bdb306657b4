use discnet::dataio::{load_manifest, pair_manifest, read_pnm};
use discnet::phantom::{
    gen_cohort, plan_cohort, render_eye, CohortSpec, PhantomParams, Pool, BAND_BASE, BAND_OUTER, STRIATIONS,
};
use discnet::rng::stream_rng;

/// Least-squares fit of the striation amplitude from a noiseless render,
/// written from the rendering definition alone: band pixels equal
/// `(base + c * cos(k theta) * sin(pi (r - R) / (R_out - R))) * shading`.
fn invert_truth(p: &PhantomParams, img: &[f64]) -> f64 {
    let n = p.size as f64;
    let (cx, cy) = (p.center.0 * n, p.center.1 * n);
    let r_in = p.disc_radius_frac * n;
    let r_out = BAND_OUTER * r_in;
    let (sa, ca) = p.illumination_angle.sin_cos();
    let (mut num, mut den) = (0.0, 0.0);
    for yi in 0..p.size {
        for xi in 0..p.size {
            let (x, y) = (xi as f64 + 0.5, yi as f64 + 0.5);
            let (dx, dy) = (x - cx, y - cy);
            let r = dx.hypot(dy);
            if r < r_in || r >= r_out {
                continue;
            }
            let shade = 1.0 + p.illumination_gradient * (dx * ca + dy * sa) / n;
            let basis = (STRIATIONS * dy.atan2(dx)).cos() * (std::f64::consts::PI * (r - r_in) / (r_out - r_in)).sin();
            let v = img[yi * p.size + xi] / shade - BAND_BASE;
            num += basis * v;
            den += basis * basis;
        }
    }
    let contrast = num / den;
    // contrast = 0.02 + 0.0015 (truth - 40)
    40.0 + (contrast - 0.02) / 0.0015
}

#[test]
fn noiseless_striation_inverts_to_truth() {
    let mut rng = stream_rng(99, &[]);
    for i in 0..40 {
        let truth = 40.0 + 90.0 * i as f64 / 39.0;
        let mut p = PhantomParams::sample(truth, 64, 0.0, &mut rng);
        p.vessel_count = 0;
        let img = render_eye(&p).unwrap();
        let est = invert_truth(&p, &img.data);
        assert!((est - truth).abs() < 0.5, "truth {truth}: {est}");
    }
}

fn mean_sd(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let m = xs.iter().sum::<f64>() / n;
    (m, (xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0)).sqrt())
}

#[test]
fn pool_baselines_match_targets() {
    let spec = CohortSpec {
        n_patients: 6000,
        visits: (1, 1),
        ..Default::default()
    };
    let visits = plan_cohort(&spec, 17).unwrap();
    for (pool, target) in [(Pool::Normal, (97.6, 9.3)), (Pool::Suspect, (87.1, 12.5)), (Pool::Glaucoma, (68.8, 16.0))] {
        let xs: Vec<f64> = visits.iter().filter(|v| v.pool == pool).map(|v| v.baseline_um).collect();
        assert!(xs.len() > 2000);
        let (m, s) = mean_sd(&xs);
        assert!((m - target.0).abs() < 2.0 && (s - target.1).abs() < 2.0, "{pool:?}: {m} {s}");
    }
}

#[test]
fn generated_cohort_loads_cleanly() {
    let dir = tempfile::tempdir().unwrap();
    let spec = CohortSpec {
        n_patients: 30,
        ..Default::default()
    };
    let out = gen_cohort(&spec, 5, dir.path()).unwrap();
    let m = load_manifest(&out.manifest_path).unwrap();
    assert_eq!(m.rows.len(), 30 * 2 * 3);
    assert!(m.exclusions.is_empty());
    assert_eq!(m.duplicates, 0);
    for (row, planned) in m.rows.iter().zip(&out.visits) {
        assert_eq!(row.oct_avg_rnfl_um, planned.truth_um);
    }
    // each photo pairs with its own scan
    let paired = pair_manifest(&m.rows);
    assert_eq!(paired, m.rows);
    let img = read_pnm(&dir.path().join(&m.rows[0].photo_path)).unwrap();
    assert_eq!((img.width, img.height, img.channels), (64, 64, 1));
}

#[test]
fn stereo_cohort_frames_are_double_width() {
    let dir = tempfile::tempdir().unwrap();
    let spec = CohortSpec {
        n_patients: 3,
        visits: (1, 1),
        image_size: 32,
        stereo: true,
        ..Default::default()
    };
    let out = gen_cohort(&spec, 5, dir.path()).unwrap();
    let img = read_pnm(&dir.path().join(&out.visits[0].photo_path)).unwrap();
    assert_eq!((img.width, img.height), (64, 32));
}

#[test]
fn same_seed_same_cohort() {
    let spec = CohortSpec {
        n_patients: 10,
        ..Default::default()
    };
    assert_eq!(plan_cohort(&spec, 3).unwrap(), plan_cohort(&spec, 3).unwrap());
    assert_ne!(plan_cohort(&spec, 3).unwrap(), plan_cohort(&spec, 4).unwrap());
}
