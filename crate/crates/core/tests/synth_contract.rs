//! Generator contract: at matched heights and densities, planted stands have
//! lower TTSD and ELP than natural stands under a one-sided rank test.

use canopy_core::features::FeatureConfig;
use canopy_core::pipeline::extract_rows;
use canopy_core::synth::{generate_scene, StandKind, SynthConfig};

/// One-sided Mann-Whitney p-value for `a` tending lower than `b`, normal
/// approximation with tie correction.
fn mann_whitney_lower(a: &[f64], b: &[f64]) -> f64 {
    let mut all: Vec<(f64, usize)> = a.iter().map(|&v| (v, 0)).chain(b.iter().map(|&v| (v, 1))).collect();
    all.sort_by(|x, y| x.0.total_cmp(&y.0));
    let n = all.len();
    let mut ranks = vec![0.0; n];
    let mut tie_term = 0.0;
    let mut i = 0;
    while i < n {
        let mut j = i;
        while j + 1 < n && all[j + 1].0 == all[i].0 {
            j += 1;
        }
        let t = (j - i + 1) as f64;
        tie_term += t * t * t - t;
        for r in ranks.iter_mut().take(j + 1).skip(i) {
            *r = (i + j) as f64 / 2.0 + 1.0;
        }
        i = j + 1;
    }
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let ra: f64 = all.iter().zip(&ranks).filter(|(x, _)| x.1 == 0).map(|(_, r)| r).sum();
    let u = ra - na * (na + 1.0) / 2.0;
    let mean = na * nb / 2.0;
    let nt = na + nb;
    let var = na * nb / 12.0 * ((nt + 1.0) - tie_term / (nt * (nt - 1.0)));
    let z = (u - mean) / var.sqrt();
    0.5 * libm::erfc(-z / std::f64::consts::SQRT_2)
}

fn median(v: &mut [f64]) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

#[test]
fn rank_test_helper() {
    let a: Vec<f64> = (0..30).map(f64::from).collect();
    let b: Vec<f64> = (30..60).map(f64::from).collect();
    assert!(mann_whitney_lower(&a, &b) < 1e-9);
    assert!(mann_whitney_lower(&b, &a) > 1.0 - 1e-9);
    assert!((mann_whitney_lower(&a, &a) - 0.5).abs() < 1e-12);
}

#[test]
fn planted_stands_are_more_regular_at_matched_height_and_density() {
    let mut cfg = SynthConfig {
        seed: 11,
        extent_m: 1280.0,
        polygons_per_class: 30,
        ..Default::default()
    };
    cfg.plantation.height_mean_dm = [150.0, 170.0];
    cfg.natural.height_mean_dm = [150.0, 170.0];
    // planted spacing of 3.6 to 4.4 m gives roughly 520 to 770 stems per hectare
    cfg.natural.treetop_intensity_per_ha = [520.0, 770.0];
    let scene = generate_scene(&cfg).unwrap();
    let (rows, failures) = extract_rows(&scene.polygons, &scene.raster, &FeatureConfig::default());
    assert!(failures.is_empty(), "{failures:?}");

    let kind = |id: &str| scene.stands.iter().find(|s| s.source_id == id).unwrap().kind;
    let pick = |k: StandKind, f: fn(&canopy_core::features::FeatureVector) -> f64| -> Vec<f64> {
        rows.iter().filter(|r| kind(&r.source_id) == k).map(|r| f(&r.features)).collect()
    };
    let (mut pt, mut nt) = (pick(StandKind::Plantation, |f| f.ttsd), pick(StandKind::Natural, |f| f.ttsd));
    let (mut pe, mut ne) = (pick(StandKind::Plantation, |f| f.elp), pick(StandKind::Natural, |f| f.elp));
    assert_eq!((pt.len(), nt.len()), (30, 30));

    assert!(mann_whitney_lower(&pt, &nt) < 0.01);
    assert!(mann_whitney_lower(&pe, &ne) < 0.01);
    assert!(median(&mut pt) < median(&mut nt));
    assert!(median(&mut pe) < median(&mut ne));
}
