use std::collections::HashSet;

use biasforge_core::bias::{attribute_frequencies, flag_underrepresented};
use biasforge_core::dataset::{parse_attribute_manifest, split_dataset, split_sizes, AttributeManifest, AttributeRecord};
use biasforge_core::image::{load_image, rotate, save_image, Image, RangeTag};
use proptest::prelude::*;

fn manifest() -> impl Strategy<Value = AttributeManifest> {
    (1usize..5).prop_flat_map(|attrs| {
        prop::collection::vec(prop::collection::vec(prop::bool::ANY, attrs), 1..200).prop_map(move |rows| {
            AttributeManifest {
                attribute_names: (0..attrs).map(|i| format!("attr_{i}")).collect(),
                records: rows
                    .into_iter()
                    .enumerate()
                    .map(|(i, v)| AttributeRecord {
                        image_id: format!("{i:06}.jpg"),
                        values: v.into_iter().map(|b| if b { 1 } else { -1 }).collect(),
                    })
                    .collect(),
            }
        })
    })
}

proptest! {
    #[test]
    fn split_is_a_seeded_partition(m in manifest(), seed in any::<u64>()) {
        let s = split_dataset(&m, seed);
        prop_assert_eq!((s.train_ids.len(), s.eval_ids.len(), s.test_ids.len()), split_sizes(m.len()));
        let ids: Vec<&String> = s.train_ids.iter().chain(&s.eval_ids).chain(&s.test_ids).collect();
        let unique: HashSet<&String> = ids.iter().copied().collect();
        prop_assert_eq!(unique.len(), m.len());
        prop_assert!(m.records.iter().all(|r| unique.contains(&r.image_id)));
        prop_assert_eq!(split_dataset(&m, seed), s);
    }

    #[test]
    fn manifest_text_round_trips(m in manifest()) {
        prop_assert_eq!(parse_attribute_manifest(&m.to_text()).unwrap(), m);
    }

    #[test]
    fn flagging_is_monotone_in_threshold(m in manifest(), a in 0.0f64..1.0, b in 0.0f64..1.0) {
        let stats = attribute_frequencies(&m).unwrap();
        let names = |t: f64| -> HashSet<String> {
            flag_underrepresented(&stats, t).unwrap().into_iter().map(|(n, _)| n).collect()
        };
        let (lo, hi) = (a.min(b).max(1e-6), a.max(b).max(1e-6));
        prop_assert!(names(lo).is_subset(&names(hi)));
    }

    #[test]
    fn png_round_trip_is_within_half_a_level(px in prop::collection::vec(0.0f64..=1.0, 5 * 7 * 3)) {
        let img = Image::new(5, 7, 3, px, RangeTag::Unit).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.png");
        save_image(&img, &path).unwrap();
        let back = load_image(&path).unwrap();
        prop_assert_eq!(back.dims(), img.dims());
        for (a, b) in img.pixels().iter().zip(back.pixels()) {
            prop_assert!((a - b).abs() <= 1.0 / 510.0 + 1e-12);
        }
    }

    #[test]
    fn small_rotations_nearly_invert(angle in -10.0f64..=10.0) {
        let img = Image::from_fn(32, 32, 3, RangeTag::Unit, |r, c, k| {
            0.5 + 0.4 * ((r as f64 * 0.2 + k as f64).sin() * (c as f64 * 0.15).cos())
        })
        .unwrap();
        let back = rotate(&rotate(&img, angle).unwrap(), -angle).unwrap();
        let mut worst = 0.0f64;
        for r in 8..24 {
            for c in 8..24 {
                for k in 0..3 {
                    worst = worst.max((back.get(r, c, k) - img.get(r, c, k)).abs());
                }
            }
        }
        prop_assert!(worst < 0.05, "{}", worst);
    }
}
