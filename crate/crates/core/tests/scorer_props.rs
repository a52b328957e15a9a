use barnmap_core::objects::threshold;
use barnmap_core::raster::{Dtype, Geotransform, RasterTile};
use barnmap_core::scorer::{patch_seed, score_patch, ScorerConfig, ScorerKind};
use proptest::prelude::*;

fn tile(n: usize, data: Vec<f32>, bands: usize) -> RasterTile {
    let geo = Geotransform::new(0.0, 0.0, 1.0, 1.0, "EPSG:5070").unwrap();
    RasterTile::new(n, n, bands, Dtype::U8, data, geo, None).unwrap()
}

fn mask() -> impl Strategy<Value = RasterTile> {
    (1usize..40).prop_flat_map(|n| {
        prop::collection::vec(prop::bool::ANY, n * n)
            .prop_map(move |b| tile(n, b.into_iter().map(|v| v as u8 as f32).collect(), 1))
    })
}

proptest! {
    #[test]
    fn smoothed_oracle_thresholds_back_to_the_mask(m in mask(), eps in 0.0f64..0.45, t in 0.0f64..1.0) {
        let cfg = ScorerConfig { kind: ScorerKind::Oracle, noise: eps, ..Default::default() };
        let prob = score_patch(&m, Some(&m), &cfg, 1).unwrap();
        // any tau strictly between eps and 1 - eps, kept clear of f32 rounding
        let lo = eps + 1e-6;
        let tau = lo + t * (1.0 - 1e-6 - eps - lo);
        prop_assert_eq!(threshold(&prob, tau).unwrap().data, m.data);
    }

    #[test]
    fn scores_are_deterministic_probabilities(m in mask(), flip in 0.0f64..0.5, seed in any::<u64>()) {
        let cfg = ScorerConfig { kind: ScorerKind::Oracle, noise: 0.2, flip_rate: flip, seed };
        let s = patch_seed(seed, "tile", (3, 4));
        let a = score_patch(&m, Some(&m), &cfg, s).unwrap();
        prop_assert_eq!(&a, &score_patch(&m, Some(&m), &cfg, s).unwrap());
        prop_assert!(a.data.iter().all(|v| (0.0..=1.0).contains(v)));

        let n = m.width;
        let img = tile(n, (0..4 * n * n).map(|i| (i * 37 % 256) as f32).collect(), 4);
        let h = ScorerConfig { kind: ScorerKind::Heuristic, ..Default::default() };
        let out = score_patch(&img, None, &h, 0).unwrap();
        prop_assert!(out.data.iter().all(|v| (0.0..=1.0).contains(v)));
    }
}
