use cldrm_core::data::*;
use cldrm_core::rng::SeededRng;
use cldrm_core::Error;
use proptest::prelude::*;
use std::collections::HashSet;

fn small(seed: u64) -> DatasetSplit {
    generate_corpus(seed, &CorpusSizes::uniform(24, 8, 12)).unwrap()
}

fn attrs(level: usize, spalling: bool, component: usize, kind: usize) -> Attributes {
    Attributes {
        level: DamageLevel::from_index(level),
        spalling,
        component: Component::from_index(component),
        damage_type: DamageType::from_index(kind),
    }
}

fn bits(s: &LabeledSample) -> Vec<u64> {
    s.image.data().iter().map(|v| v.to_bits()).collect()
}

#[test]
fn task_class_counts() {
    let counts: Vec<usize> = TaskId::ALL.iter().map(|t| t.spec().class_count()).collect();
    assert_eq!(counts, vec![3, 2, 3, 4]);
    assert!(!TaskId::COMPONENT.spec().rotation_allowed);
    assert!(matches!(TaskId::new(5), Err(Error::Config(_))));
}

#[test]
fn every_class_of_every_task_is_present_and_balanced() {
    let data = small(3);
    for t in TaskId::ALL {
        let k = t.spec().class_count();
        let mut seen = vec![0usize; k];
        for s in &data.task(t).unwrap().train {
            seen[s.label(t)] += 1;
        }
        let (lo, hi) = (seen.iter().min().unwrap(), seen.iter().max().unwrap());
        assert!(*lo > 0 && hi - lo <= 1, "task {t}: {seen:?}");
    }
}

#[test]
fn imbalance_knob_skews_class_shares() {
    let mut sizes = CorpusSizes::uniform(120, 8, 8);
    sizes.imbalance = 10.0;
    let data = generate_corpus(1, &sizes).unwrap();
    let t = TaskId::DAMAGE_LEVEL;
    let mut seen = [0usize; 3];
    for s in &data.task(t).unwrap().train {
        seen[s.label(t)] += 1;
    }
    assert!(seen[0] > seen[1] && seen[1] > seen[2] && seen[2] > 0, "{seen:?}");
    let ratio = seen[0] as f64 / seen[2] as f64;
    assert!((ratio - 10.0).abs() < 2.0, "{seen:?}");
    sizes.imbalance = 0.5;
    assert!(matches!(generate_corpus(1, &sizes), Err(Error::Config(_))));
}

#[test]
fn corpus_is_a_pure_function_of_the_seed() {
    let (a, b, c) = (small(9), small(9), small(10));
    assert_eq!(encode_corpus(&a), encode_corpus(&b));
    assert_ne!(encode_corpus(&a), encode_corpus(&c));
    assert_eq!(decode_corpus(&encode_corpus(&a)).unwrap(), a);
}

#[test]
fn train_and_test_images_are_disjoint() {
    let data = small(4);
    for t in TaskId::ALL {
        let task = data.task(t).unwrap();
        let train: HashSet<Vec<u64>> = task.train.iter().map(bits).collect();
        assert!(task.test.iter().all(|s| !train.contains(&bits(s))), "task {t}");
    }
}

#[test]
fn rendered_parameters_follow_the_labels() {
    let mut rng = SeededRng::new(5);
    for level in 0..3 {
        for kind in 0..4 {
            for spalling in [true, false] {
                let a = attrs(level, spalling, rng.below(3), kind);
                let (_, p) = render(&a, 16, 16, &mut rng);
                assert_eq!(p.spall_blobs > 0, spalling);
                assert_eq!(p.crack_segments > 0, level > 0);
                assert_eq!(p.rust_stains > 0, level > 0 && kind == 3);
                assert_eq!(p.damp_patches > 0, level > 0 && kind == 2);
            }
        }
    }
}

#[test]
fn similar_pair_shares_texture_and_dissimilar_pair_differs_in_geometry() {
    // Damage level and spalling both change texture parameters only; the
    // component changes the member band.
    let band = |component| render(&attrs(0, false, component, 0), 16, 16, &mut SeededRng::new(1)).1.band;
    assert_ne!(band(0), band(1));
    let image = |component| render(&attrs(0, false, component, 0), 16, 16, &mut SeededRng::new(1)).0;
    assert!(image(0).max_abs_diff(&image(2)) > 0.3);
    let textures = |a: Attributes| {
        let (_, p) = render(&a, 16, 16, &mut SeededRng::new(2));
        (p.band, p.crack_segments, p.spall_blobs)
    };
    let base = textures(attrs(0, false, 1, 0));
    let level = textures(attrs(2, false, 1, 0));
    let spall = textures(attrs(0, true, 1, 0));
    assert_eq!(base.0, level.0);
    assert_eq!(base.0, spall.0);
    assert!(level.1 > base.1);
    assert!(spall.2 > base.2);
}

#[test]
fn batches_partition_the_training_set() {
    let data = small(6);
    let t = TaskId::SPALLING;
    let n = data.train_size(t);
    let it = batch_iter(&data, t, 5, 11).unwrap();
    assert_eq!(it.batches_per_epoch(), n.div_ceil(5));
    let batches: Vec<Batch> = it.collect();
    let mut idx: Vec<usize> = batches.iter().flat_map(|b| b.indices.clone()).collect();
    assert!(batches[..batches.len() - 1].iter().all(|b| b.len() == 5));
    assert_eq!(batches.last().unwrap().len(), n - 5 * (batches.len() - 1));
    idx.sort();
    assert_eq!(idx, (0..n).collect::<Vec<_>>());
    assert_eq!(batches[0].images.shape(), &[5, 3, 12, 12]);
    assert_eq!(batches[0].onehot.shape(), &[5, 2]);
    assert_eq!(DEFAULT_BATCH_SIZE, 64);
}

#[test]
fn epoch_orders_differ_and_reruns_reproduce() {
    let data = small(6);
    let t = TaskId::COMPONENT;
    let order = |seed| -> Vec<usize> {
        batch_iter(&data, t, 7, seed).unwrap().flat_map(|b| b.indices).collect()
    };
    assert_eq!(order(1), order(1));
    assert_ne!(order(1), order(2));
    let aug = AugmentConfig::default();
    let imgs = |seed| -> Vec<u64> {
        batch_iter(&data, TaskId::DAMAGE_LEVEL, 7, seed)
            .unwrap()
            .augmented(&aug)
            .flat_map(|b| b.images.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>())
            .collect()
    };
    assert_eq!(imgs(3), imgs(3));
}

#[test]
fn empty_split_and_zero_batch_are_rejected() {
    assert!(matches!(BatchIter::over(&[], TaskId::SPALLING, 4, 0), Err(Error::Data(_))));
    let data = small(1);
    assert!(matches!(batch_iter(&data, TaskId::SPALLING, 0, 0), Err(Error::Config(_))));
}

#[test]
fn component_task_is_never_rotated() {
    let data = small(2);
    let sample = &data.task(TaskId::COMPONENT).unwrap().train[0];
    let cfg = AugmentConfig::default().for_task(&TaskId::COMPONENT.spec());
    let mut rng = SeededRng::new(8);
    let mut counters = AugmentCounters::default();
    for _ in 0..10_000 {
        augment(sample, &cfg, &mut rng, &mut counters);
    }
    assert_eq!(counters.rotations, 0);
    assert!(counters.horizontal_flips > 0 && counters.vertical_flips > 0);
    let mut batches = batch_iter(&data, TaskId::COMPONENT, 8, 0)
        .unwrap()
        .augmented(&AugmentConfig::default());
    for _ in batches.by_ref() {}
    assert_eq!(batches.counters().rotations, 0);
    let mut other = batch_iter(&data, TaskId::DAMAGE_LEVEL, 8, 0)
        .unwrap()
        .augmented(&AugmentConfig::default());
    for _ in other.by_ref() {}
    assert!(other.counters().rotations > 0);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn spalling_label_matches_painted_blobs(
        level in 0usize..3, spalling: bool, component in 0usize..3, kind in 0usize..4, seed: u64,
    ) {
        let a = attrs(level, spalling, component, kind);
        let (img, p) = render(&a, 12, 12, &mut SeededRng::new(seed));
        prop_assert_eq!(p.spall_blobs > 0, spalling);
        prop_assert_eq!(a.labels()[1] == 0, spalling);
        prop_assert!(img.data().iter().all(|v| (0.0..=1.0).contains(v)));
    }

    #[test]
    fn jitter_stays_in_unit_range(seed: u64, jitter in 0.0f64..2.0) {
        let data = small(seed % 4);
        let sample = &data.task(TaskId::DAMAGE_TYPE).unwrap().train[0];
        let cfg = AugmentConfig { color_jitter: jitter, ..AugmentConfig::default() };
        let out = augment(sample, &cfg, &mut SeededRng::new(seed), &mut AugmentCounters::default());
        prop_assert!(out.image.data().iter().all(|v| (0.0..=1.0).contains(v)));
        prop_assert_eq!(out.labels, sample.labels);
    }

    #[test]
    fn flips_are_involutions(seed: u64, h in 1usize..7, w in 1usize..7) {
        let mut rng = SeededRng::new(seed);
        let img = cldrm_core::Tensor::new(vec![3, h, w], (0..3 * h * w).map(|_| rng.uniform()).collect()).unwrap();
        prop_assert_eq!(hflip(&hflip(&img)), img.clone());
        prop_assert_eq!(vflip(&vflip(&img)), img);
    }

    #[test]
    fn class_shares_cover_every_index(n in 1usize..200, k in 2usize..5, r in 1.0f64..20.0) {
        let classes: Vec<usize> = (0..n).map(|i| class_for_index(i, n, k, r)).collect();
        prop_assert!(classes.iter().all(|&c| c < k));
        prop_assert!(classes.windows(2).all(|w| w[0] <= w[1]) || r == 1.0);
    }
}
