use vsrf_core::features::FeatureBank;
use vsrf_core::forest::{LeafModel, Node, RegressionTree};
use vsrf_core::pipeline::{
    evaluate_model, make_training_pairs, prepare_volume, run_experiment, super_resolve, train_model,
    ModelMeta,
};
use vsrf_core::{
    DegradationSpec, Error, FeatureSet, Forest, ForestConfig, PatchGrid, PcaModel, SrConfig,
    SrModel, SsimMode, Volume,
};

fn smooth(dims: [usize; 3], phase: f32) -> Volume {
    Volume::from_fn(dims, |x, y, z| {
        let (x, y, z) = (x as f32, y as f32, z as f32);
        let r = ((x - 7.5).powi(2) + (y - 8.0).powi(2) + (z - 6.5).powi(2)).sqrt();
        0.5 + 0.3 * (0.7 * x + phase).sin() * (0.5 * y).cos() + 0.2 * (1.0 / (1.0 + (r - 5.0).exp()))
            + 0.01 * z
    })
    .unwrap()
    .normalize()
    .unwrap()
}

fn small_cfg() -> SrConfig {
    SrConfig {
        forest: ForestConfig {
            n_trees: 3,
            max_depth: 4,
            min_leaf_samples: 40,
            ..ForestConfig::default()
        },
        pca_target: 0.99,
        ..SrConfig::default()
    }
}

fn single_leaf_model(w: Vec<f32>, pca: PcaModel, feature_set: FeatureSet) -> SrModel {
    let (d_l, d_h) = (pca.output_dim(), 27);
    let leaf = LeafModel {
        w,
        lambda: 0.0,
        n_samples: 1,
    };
    let tree = RegressionTree::from_parts(vec![Node::Leaf { leaf: 0 }], vec![leaf], d_l, d_h).unwrap();
    SrModel {
        forest: Forest::from_trees(vec![tree], ForestConfig::default(), 0).unwrap(),
        pca,
        meta: ModelMeta {
            patch: [3; 3],
            degradation: DegradationSpec::default(),
            sigma: 1.0,
            feature_set,
            pca_target: 0.999,
            training_ids: vec!["hand".into()],
            training_pairs: 1,
        },
    }
}

#[test]
fn linear_ramp_survives_degradation_in_the_interior() {
    // a misaligned resampling grid would shift the ramp and leave a residual
    let v = Volume::from_fn([32, 32, 32], |x, y, z| (x + 2 * y + 3 * z) as f32).unwrap();
    let p = prepare_volume(&v, &DegradationSpec::default()).unwrap();
    let mut worst = 0.0f32;
    for z in 8..24 {
        for y in 8..24 {
            for x in 8..24 {
                worst = worst.max((p.hr.get(x, y, z) - p.upsampled.get(x, y, z)).abs());
            }
        }
    }
    assert!(worst < 1e-5, "{worst}");
}

#[test]
fn sixteen_cubed_gives_every_patch() {
    let v = smooth([16, 16, 16], 0.0);
    let cfg = SrConfig {
        thin_background: false,
        ..small_cfg()
    };
    let spec = DegradationSpec::default();
    let pairs = make_training_pairs(std::slice::from_ref(&v), &spec, &cfg).unwrap();
    assert_eq!(pairs.set.len(), 14 * 14 * 14);
    assert_eq!(pairs.set.d_h(), 27);

    // every sample is the residual patch and the projected descriptor at its origin
    let p = prepare_volume(&v, &spec).unwrap();
    let bank = FeatureBank::compute(&p.upsampled, cfg.sigma, cfg.feature_set).unwrap();
    let grid = PatchGrid::new([16; 3], [3; 3], [1; 3]).unwrap();
    let mut raw = vec![0.0f32; bank.raw_dim(&grid)];
    for s in [0usize, 1, 200, 1371, 2743] {
        let (vol, patch) = pairs.origins[s];
        assert_eq!(vol, 0);
        let [cx, cy, cz] = grid.corner(patch as usize);
        let mut k = 0;
        for dz in 0..3 {
            for dy in 0..3 {
                for dx in 0..3 {
                    let (x, y, z) = (cx + dx, cy + dy, cz + dz);
                    let want = p.hr.get(x, y, z) - p.upsampled.get(x, y, z);
                    assert_eq!(pairs.set.x_h(s)[k], want);
                    k += 1;
                }
            }
        }
        bank.gather_raw(&grid, patch as usize, &mut raw);
        assert_eq!(pairs.set.x_l(s), pairs.pca.project(&raw).unwrap().as_slice());
    }
}

#[test]
fn zero_forest_reproduces_tricubic() {
    let cfg = small_cfg();
    let spec = DegradationSpec::default();
    let mut model = train_model(&[("a".into(), smooth([16; 3], 0.0))], &spec, &cfg, 1).unwrap();
    for tree in model.forest.trees_mut() {
        for leaf in tree.leaves_mut() {
            leaf.w.iter_mut().for_each(|w| *w = 0.0);
        }
    }
    let p = prepare_volume(&smooth([16; 3], 1.3), &spec).unwrap();
    let sr = super_resolve(&p.lr, &model, &cfg).unwrap();
    for (a, b) in sr.data().iter().zip(p.upsampled.data()) {
        assert_eq!(*a, b.clamp(0.0, 1.0));
    }
}

#[test]
fn single_leaf_model_matches_hand_composition() {
    let spec = DegradationSpec::default();
    let p = prepare_volume(&smooth([8; 3], 0.4), &spec).unwrap();
    let bank = FeatureBank::compute(&p.upsampled, 1.0, FeatureSet::Dev).unwrap();
    let grid = PatchGrid::new([8; 3], [3; 3], [1; 3]).unwrap();
    let d_raw = bank.raw_dim(&grid);
    let w: Vec<f32> = (0..27 * d_raw)
        .map(|i| 1e-3 * (((i * 7919) % 201) as f32 - 100.0) / 100.0)
        .collect();
    let model = single_leaf_model(w.clone(), PcaModel::identity(d_raw), FeatureSet::Dev);
    let cfg = SrConfig {
        feature_set: FeatureSet::Dev,
        ..SrConfig::default()
    };
    let sr = super_resolve(&p.lr, &model, &cfg).unwrap();

    let mut sum = vec![0.0f64; 512];
    let mut hits = vec![0u32; 512];
    let mut raw = vec![0.0f32; d_raw];
    for i in 0..grid.len() {
        bank.gather_raw(&grid, i, &mut raw);
        let [cx, cy, cz] = grid.corner(i);
        for k in 0..27 {
            let r: f64 = (0..d_raw).map(|c| w[k * d_raw + c] as f64 * raw[c] as f64).sum();
            let (x, y, z) = (cx + k % 3, cy + (k / 3) % 3, cz + k / 9);
            sum[x + 8 * (y + 8 * z)] += r;
            hits[x + 8 * (y + 8 * z)] += 1;
        }
    }
    for i in 0..512 {
        let want = (p.upsampled.data()[i] as f64 + sum[i] / hits[i] as f64).clamp(0.0, 1.0);
        assert!((sr.data()[i] as f64 - want).abs() < 1e-5, "voxel {i}");
    }
}

#[test]
fn training_is_reproducible() {
    let cfg = small_cfg();
    let spec = DegradationSpec::default();
    let vols = vec![("a".to_string(), smooth([16; 3], 0.0)), ("b".to_string(), smooth([16; 3], 2.0))];
    let m1 = train_model(&vols, &spec, &cfg, 5).unwrap();
    let m2 = train_model(&vols, &spec, &cfg, 5).unwrap();
    assert_eq!(m1, m2);
    assert_eq!(m1.meta.training_ids, vec!["a", "b"]);
}

#[test]
fn experiment_reports_every_test_volume() {
    let cfg = small_cfg();
    let spec = DegradationSpec::default();
    let train = vec![("a".to_string(), smooth([16; 3], 0.0))];
    let test = vec![("t1".to_string(), smooth([16; 3], 1.0)), ("t2".to_string(), smooth([16; 3], 2.5))];
    let report = run_experiment(&train, &test, &spec, &cfg, 0).unwrap();
    assert_eq!(report.rows.len(), 2);
    assert_eq!(report.table_rows().count(), 3);
    assert_eq!(report.records().len(), 4);
    let mean = (report.rows[0].vsrf.psnr_db + report.rows[1].vsrf.psnr_db) / 2.0;
    assert!((report.mean.vsrf.psnr_db - mean).abs() < 1e-12);

    let overlap = run_experiment(&train, &train, &spec, &cfg, 0);
    assert!(matches!(overlap, Err(Error::Overlap(_))));

    let model = train_model(&train, &spec, &cfg, 0).unwrap();
    let again = evaluate_model(&model, &test, &cfg, SsimMode::Volume).unwrap();
    assert_eq!(again, report);
}
