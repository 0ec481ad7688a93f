use std::sync::Arc;

use hyperflow::eval::Matcher;
use hyperflow::feature_io::{DirStackSource, MemoryStackSource, SplitMix64};
use hyperflow::layersearch::{make_pck_evaluator, search, Evaluator, SearchConfig};
use hyperflow::{
    evaluate_dataset, load_annotations, save_stack, synth_stack, write_annotations, BBox, Error,
    HpfPipeline, ImageDims, LayerGeometry, LayerSet, LayerSpec, PairAnnotation, PckConfig, Point,
    RhmConfig, StackSource,
};

fn specs() -> Vec<LayerSpec> {
    vec![
        LayerSpec::new(0, 12, 16, 16, LayerGeometry::isotropic(4.0, 2.0, 8.0)),
        LayerSpec::new(2, 16, 8, 8, LayerGeometry::isotropic(8.0, 4.0, 16.0)),
        LayerSpec::new(4, 24, 4, 4, LayerGeometry::isotropic(16.0, 8.0, 32.0)),
    ]
}

fn self_pair(id: &str, image: &str, rng: &mut SplitMix64, n: usize) -> PairAnnotation {
    let kps: Vec<Point> = (0..n)
        .map(|_| Point::new(rng.next_f64() * 64.0, rng.next_f64() * 64.0))
        .collect();
    let dims = ImageDims::new(64, 64);
    PairAnnotation {
        pair_id: id.into(),
        src_image: image.into(),
        tgt_image: image.into(),
        category: if n.is_multiple_of(2) {
            "even".into()
        } else {
            "odd".into()
        },
        src_kps: kps.clone(),
        tgt_kps: kps,
        src_bbox: BBox::from([8.0, 8.0, 40.0, 48.0]),
        tgt_bbox: BBox::from([8.0, 8.0, 40.0, 48.0]),
        src_dims: dims,
        tgt_dims: dims,
        viewpoint: None,
        scale: None,
        truncation: None,
        occlusion: None,
    }
}

fn identity_fixture() -> (MemoryStackSource, Vec<PairAnnotation>) {
    let mut stacks = MemoryStackSource::new();
    let mut pairs = Vec::new();
    let mut rng = SplitMix64::new(11);
    for k in 0..4u64 {
        let stack = synth_stack(100 + k, &specs(), (64, 64)).unwrap();
        pairs.push(self_pair(
            &format!("p{k}"),
            stack.image_id(),
            &mut rng,
            3 + k as usize,
        ));
        stacks.insert(stack);
    }
    (stacks, pairs)
}

#[test]
fn identical_images_score_perfectly_for_every_layer_set() {
    let (stacks, pairs) = identity_fixture();
    let stacks: Arc<dyn StackSource> = Arc::new(stacks);
    let eval =
        make_pck_evaluator(pairs, stacks, RhmConfig::default(), PckConfig::default()).unwrap();
    for set in [
        vec![0],
        vec![0, 2],
        vec![0, 4],
        vec![0, 2, 4],
        vec![2, 4],
        vec![4],
    ] {
        assert_eq!(eval.evaluate(&set).unwrap(), 1.0, "{set:?}");
    }
}

#[test]
fn search_over_identity_pairs_keeps_a_perfect_set() {
    let (stacks, pairs) = identity_fixture();
    let eval = make_pck_evaluator(
        pairs,
        Arc::new(stacks),
        RhmConfig::default(),
        PckConfig::default(),
    )
    .unwrap();
    let cfg = SearchConfig::new([0, 2, 4], [0, 2]);
    let out = search(&cfg, &eval).unwrap();
    assert_eq!(out.score, 1.0);
    // Ties resolve towards the lexicographically smallest set, {0}.
    assert_eq!(out.layers.ids().collect::<Vec<_>>(), vec![0]);
    assert!(out.trace.iter().all(|e| e.layers.len() <= 3));
}

#[test]
fn evaluator_is_deterministic_and_granular() {
    let stacks: Vec<_> = (0..2)
        .map(|k| synth_stack(200 + k, &specs(), (64, 64)).unwrap())
        .collect();
    let mut rng = SplitMix64::new(5);
    let mut pair = self_pair("x", stacks[0].image_id(), &mut rng, 1);
    pair.tgt_image = stacks[1].image_id().into();
    let source: MemoryStackSource = stacks.into_iter().collect();
    let eval = make_pck_evaluator(
        vec![pair],
        Arc::new(source),
        RhmConfig::default(),
        PckConfig::default(),
    )
    .unwrap();
    let first = eval.evaluate(&[0, 2]).unwrap();
    assert!(first == 0.0 || first == 1.0);
    assert_eq!(eval.evaluate(&[2, 0]).unwrap().to_bits(), first.to_bits());
}

#[test]
fn evaluator_names_the_pair_with_a_missing_stack() {
    let (stacks, mut pairs) = identity_fixture();
    pairs[2].tgt_image = "nowhere".into();
    let err = make_pck_evaluator(
        pairs,
        Arc::new(stacks),
        RhmConfig::default(),
        PckConfig::default(),
    )
    .err()
    .unwrap();
    match err {
        Error::Pair { pair_id, source } => {
            assert_eq!(pair_id, "p2");
            assert!(matches!(*source, Error::MissingStack { .. }));
        }
        other => panic!("unexpected {other:?}"),
    }
}

#[test]
fn files_on_disk_feed_the_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let (stacks, pairs) = identity_fixture();
    for pair in &pairs {
        let stack = stacks.stack(&pair.src_image).unwrap();
        save_stack(&stack, dir.path().join(format!("{}.hfm", pair.src_image))).unwrap();
    }
    let ann = dir.path().join("pairs.jsonl");
    write_annotations(&ann, &pairs).unwrap();
    let loaded = load_annotations(&ann).unwrap();
    assert_eq!(loaded, pairs);

    let source = Arc::new(DirStackSource::new(dir.path()));
    let layers = LayerSet::from_ids(&[0, 2, 4]).unwrap();
    for matcher in [Matcher::Rhm, Matcher::NnOnly] {
        let pipeline = HpfPipeline::new(source.clone(), layers.clone(), RhmConfig::default())
            .with_matcher(matcher);
        let report = evaluate_dataset(&loaded, &pipeline, &PckConfig::default()).unwrap();
        assert_eq!(report.overall, 1.0);
        assert!(report.failures.is_empty());
    }
}

#[test]
fn category_buckets_partition_the_pairs() {
    let mut stacks = MemoryStackSource::new();
    let mut pairs = Vec::new();
    let mut rng = SplitMix64::new(3);
    for k in 0..6u64 {
        let a = synth_stack(300 + 2 * k, &specs(), (64, 64)).unwrap();
        let b = synth_stack(301 + 2 * k, &specs(), (64, 64)).unwrap();
        let mut p = self_pair(&format!("q{k}"), a.image_id(), &mut rng, 2 + k as usize);
        p.tgt_image = b.image_id().into();
        p.tgt_kps = p
            .src_kps
            .iter()
            .map(|_| Point::new(rng.next_f64() * 64.0, rng.next_f64() * 64.0))
            .collect();
        pairs.push(p);
        stacks.insert(a);
        stacks.insert(b);
    }
    // One pair points at a stack that does not exist and must be excluded.
    pairs[4].src_image = "absent".into();
    let pipeline = HpfPipeline::new(
        Arc::new(stacks),
        LayerSet::from_ids(&[0, 4]).unwrap(),
        RhmConfig::default(),
    );
    let report = evaluate_dataset(&pairs, &pipeline, &PckConfig::default()).unwrap();
    assert_eq!(report.failures.len(), 1);
    assert_eq!(report.failures[0].pair_id, "q4");
    assert_eq!(report.pair_count, 5);
    let total: usize = report.per_category.values().map(|b| b.pairs).sum();
    assert_eq!(total, report.pair_count);
    let weighted: f64 = report
        .per_category
        .values()
        .map(|b| b.pck * b.pairs as f64)
        .sum();
    assert!((weighted / total as f64 - report.overall).abs() < 1e-12);
}
