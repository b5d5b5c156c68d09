use m2mrf::synth::augment::{augment, AugmentOp};
use m2mrf::synth::components::label_components;
use m2mrf::synth::{default_specs, generate_dataset, LesionSpec, Sample, TINY_AREA};

fn centroids(sample: &Sample) -> Vec<(f64, f64)> {
    (0..4).flat_map(|c| label_components(&sample.masks, c).unwrap().centroids).collect()
}

fn nearest_neighbour_distances(samples: &[Sample]) -> Vec<f64> {
    let mut out = Vec::new();
    for s in samples {
        let cs = centroids(s);
        for (i, a) in cs.iter().enumerate() {
            let d = cs
                .iter()
                .enumerate()
                .filter(|&(j, _)| j != i)
                .map(|(_, b)| ((a.0 - b.0).powi(2) + (a.1 - b.1).powi(2)).sqrt())
                .fold(f64::INFINITY, f64::min);
            if d.is_finite() {
                out.push(d);
            }
        }
    }
    out
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    v[v.len() / 2]
}

fn with_clustering(p: f64) -> Vec<LesionSpec> {
    default_specs().into_iter().map(|s| LesionSpec { cluster_probability: p, ..s }).collect()
}

#[test]
fn component_counts_stay_within_the_configured_ranges() {
    let specs = default_specs();
    for s in generate_dataset(40, 64, 64, &specs, 0).unwrap() {
        for spec in &specs {
            let n = label_components(&s.masks, spec.class.channel()).unwrap().count();
            let (lo, hi) = spec.count_range;
            assert!((lo..=hi).contains(&n), "sample {} {}: {n} not in {lo}..={hi}", s.index, spec.class.name());
        }
    }
}

#[test]
fn tiny_components_dominate() {
    let samples = generate_dataset(100, 64, 64, &default_specs(), 0).unwrap();
    let (mut tiny, mut total) = (0usize, 0usize);
    for s in &samples {
        for c in 0..4 {
            let comps = label_components(&s.masks, c).unwrap();
            tiny += comps.areas.iter().filter(|&&a| a < TINY_AREA).count();
            total += comps.count();
        }
    }
    assert!(tiny * 10 >= total * 4, "{tiny}/{total} tiny");
}

#[test]
fn clustering_shrinks_nearest_neighbour_distances() {
    let mut clustered = Vec::new();
    let mut spread = Vec::new();
    for seed in 0..10 {
        clustered.extend(generate_dataset(4, 64, 64, &with_clustering(0.9), seed).unwrap());
        spread.extend(generate_dataset(4, 64, 64, &with_clustering(0.0), seed).unwrap());
    }
    let (c, s) = (median(nearest_neighbour_distances(&clustered)), median(nearest_neighbour_distances(&spread)));
    assert!(s > c, "unclustered median {s} vs clustered {c}");
}

#[test]
fn isometries_preserve_areas_and_component_counts() {
    for s in generate_dataset(6, 32, 48, &default_specs(), 5).unwrap() {
        for op in AugmentOp::ALL {
            let t = augment(&s, op).unwrap();
            assert_eq!(t.masks.sum(), s.masks.sum(), "{op:?}");
            for c in 0..4 {
                let before = label_components(&s.masks, c).unwrap();
                let after = label_components(&t.masks, c).unwrap();
                assert_eq!(before.count(), after.count());
                let mut a = before.areas.clone();
                let mut b = after.areas.clone();
                a.sort();
                b.sort();
                assert_eq!(a, b);
            }
        }
    }
}

#[test]
fn image_and_masks_move_together() {
    let s = &generate_dataset(1, 16, 24, &default_specs(), 9).unwrap()[0];
    for op in AugmentOp::ALL {
        let t = augment(s, op).unwrap();
        // every pixel's RGB and mask vector travel as one unit
        let (h, w, _) = t.image.hwc().unwrap();
        for y in 0..h {
            for x in 0..w {
                let rgb: Vec<f64> = (0..3).map(|c| t.image.at3(y, x, c)).collect();
                let m: Vec<f64> = (0..4).map(|c| t.masks.at3(y, x, c)).collect();
                let found = (0..s.height()).any(|sy| {
                    (0..s.width()).any(|sx| {
                        (0..3).all(|c| s.image.at3(sy, sx, c) == rgb[c]) && (0..4).all(|c| s.masks.at3(sy, sx, c) == m[c])
                    })
                });
                assert!(found, "{op:?} at ({y},{x})");
            }
        }
    }
}
