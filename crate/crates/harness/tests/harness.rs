use dins_core::clicksim::SessionConfig;
use dins_core::volume::{connected_components, Connectivity, Dims, Mask, Spacing, VoxelIndex};
use dins_harness::backend::{Backend, BackendKind, BackendParams};
use dins_harness::boxes::{build_boxes, BoxPolicy};
use dins_harness::evaluate::{compare_cases, evaluate_cases, summary_csv, sweep_points, write_reports, ExperimentSpec, SweepAxes};
use dins_harness::phantom::{generate_phantom, phantom_cases, read_dataset, write_dataset, PhantomConfig};
use proptest::prelude::*;

fn small() -> PhantomConfig {
    PhantomConfig { dims: Dims::new(4, 32, 32), radius: [4.0, 6.0], ..PhantomConfig::default() }
}

#[test]
fn phantoms_are_reproducible_per_index() {
    let cfg = small();
    let a = generate_phantom(&cfg, 3).unwrap();
    assert_eq!(a, generate_phantom(&cfg, 3).unwrap());
    assert_ne!(a.image, generate_phantom(&cfg, 4).unwrap().image);
    assert_ne!(a.image, generate_phantom(&PhantomConfig { seed: 1, ..cfg }, 3).unwrap().image);
}

#[test]
fn labels_cover_exactly_the_tumor_ellipsoids() {
    let cfg = PhantomConfig { noise_std: 0.0, distractors: [2, 2], ..small() };
    for i in 0..6 {
        let p = generate_phantom(&cfg, i).unwrap();
        for v in p.label.dims().iter() {
            let inside = |e: &dins_harness::phantom::Ellipsoid| {
                // Rotated ellipsoid membership written out independently.
                let (dz, dy, dx) = (v.z as f64 - e.center[0], v.y as f64 - e.center[1], v.x as f64 - e.center[2]);
                let u = e.angle.cos() * dx + e.angle.sin() * dy;
                let w = e.angle.cos() * dy - e.angle.sin() * dx;
                (dz / e.semi_axes[0]).powi(2) + (u / e.semi_axes[1]).powi(2) + (w / e.semi_axes[2]).powi(2) <= 1.0
            };
            let tumor = p.tumors.iter().any(inside);
            let any = tumor || p.distractors.iter().any(inside);
            assert_eq!(*p.label.get(v), tumor, "phantom {i} voxel {v:?}");
            let value = *p.image.get(v);
            if any {
                assert!(value == cfg.lesion || value == cfg.core);
            } else {
                assert_eq!(value, cfg.background);
            }
        }
    }
}

#[test]
fn a_sphere_has_the_lattice_count_of_its_radius() {
    // Unit spacing and no elongation give a sphere; count its voxels directly.
    let cfg = PhantomConfig {
        dims: Dims::new(16, 16, 16),
        spacing: Spacing::UNIT,
        tumors: [1, 1],
        distractors: [0, 0],
        radius: [3.0, 3.0],
        elongation: [1.0, 1.0],
        noise_std: 0.0,
        ..PhantomConfig::default()
    };
    let p = generate_phantom(&cfg, 0).unwrap();
    let c = p.tumors[0].center;
    let mut expected = 0;
    for z in 0..16 {
        for y in 0..16 {
            for x in 0..16 {
                let d2 = (z as f64 - c[0]).powi(2) + (y as f64 - c[1]).powi(2) + (x as f64 - c[2]).powi(2);
                expected += (d2 <= 9.0) as usize;
            }
        }
    }
    assert_eq!(p.label.count(), expected);
    assert!((100..=130).contains(&expected), "{expected}");
}

#[test]
fn zero_tumors_give_empty_labels() {
    let cfg = PhantomConfig { tumors: [0, 0], ..small() };
    for i in 0..3 {
        assert!(generate_phantom(&cfg, i).unwrap().label.is_all_false());
    }
}

#[test]
fn datasets_round_trip_through_disk() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small();
    let phantoms: Vec<_> = (0..3).map(|i| generate_phantom(&cfg, i).unwrap()).collect();
    write_dataset(dir.path(), &phantoms).unwrap();
    let cases = read_dataset(dir.path()).unwrap();
    let direct = phantom_cases(&cfg, 3).unwrap();
    assert_eq!(cases.len(), 3);
    for (a, b) in cases.iter().zip(&direct) {
        assert_eq!(a.id, b.id);
        assert_eq!(a.image, b.image);
        assert_eq!(a.label, b.label);
    }
}

fn spec(backend: BackendKind) -> ExperimentSpec {
    ExperimentSpec {
        phantoms: small(),
        phantom_count: 3,
        backend,
        session: SessionConfig { max_clicks: 6, ..SessionConfig::default() },
        ..ExperimentSpec::default()
    }
}

#[test]
fn reference_backends_bound_the_curve() {
    let cases = phantom_cases(&small(), 3).unwrap();
    let oracle = evaluate_cases(&spec(BackendKind::Oracle), &cases, None).unwrap();
    assert_eq!(oracle[0].mean_dsc(0), 0.0);
    assert!(oracle[0].curve()[1..].iter().all(|&d| d == 1.0));
    assert_eq!(oracle[0].mean_clicks_to(0.8), 1.0);
    let empty = evaluate_cases(&spec(BackendKind::Empty), &cases, None).unwrap();
    assert!(empty[0].curve().iter().all(|&d| d == 0.0));
    assert!(empty[0].traces.iter().all(|(_, t)| t.steps.len() == 6));
    assert_eq!(empty[0].mean_clicks_to(0.8), 6.0);
}

#[test]
fn identical_backends_compare_equal_except_timing() {
    let s = spec(BackendKind::GraphCut);
    let cases = phantom_cases(&small(), 2).unwrap();
    let gc = Backend::new(BackendKind::GraphCut, BackendParams::default(), None).unwrap();
    let rows = compare_cases(&s, &cases, &[gc.clone(), gc]);
    let (a, b) = (&rows[0].0, &rows[1].0);
    assert_eq!((a.dsc_at_budget, a.clicks_to_threshold, a.failures), (b.dsc_at_budget, b.clicks_to_threshold, b.failures));
    assert!(a.dsc_at_budget > 0.3, "{a:?}");
}

#[test]
fn graph_cut_time_grows_with_volume_size() {
    let seconds = |n: usize| {
        let cfg = PhantomConfig { dims: Dims::new(n, n, n), spacing: Spacing::UNIT, radius: [2.0, 3.0], distractors: [0, 0], ..PhantomConfig::default() };
        let cases = phantom_cases(&cfg, 4).unwrap();
        let s = ExperimentSpec { session: SessionConfig { max_clicks: 4, dsc_threshold: 1.0 }, ..spec(BackendKind::GraphCut) };
        let gc = Backend::new(BackendKind::GraphCut, BackendParams::default(), None).unwrap();
        compare_cases(&s, &cases, &[gc])[0].0.seconds_per_interaction
    };
    let (small, large) = (seconds(8), seconds(16));
    assert!(small < large, "{small} vs {large}");
}

#[test]
fn sweeps_cover_the_cartesian_product() {
    let mut s = spec(BackendKind::GraphCut);
    s.sweep = SweepAxes { sigmas: vec![[1.0, 5.0, 5.0], [2.0, 6.0, 6.0], [1.5, 6.0, 6.0]], budgets: vec![9, 10, 11, 12], checkpoints: vec![] };
    let points = sweep_points(&s);
    assert_eq!(points.len(), 12);
    let mut labels: Vec<_> = points.iter().map(|p| p.label.clone()).collect();
    labels.sort();
    labels.dedup();
    assert_eq!(labels.len(), 12);
    let cases = phantom_cases(&small(), 1).unwrap();
    s.sweep.sigmas.truncate(1);
    let results = evaluate_cases(&s, &cases, None).unwrap();
    for (r, budget) in results.iter().zip([9, 10, 11, 12]) {
        assert!(r.traces.iter().all(|(_, t)| t.steps.len() <= budget));
    }
}

#[test]
fn summaries_are_byte_identical_across_runs() {
    let s = spec(BackendKind::RandomWalk);
    let run = || {
        let cases = s.load_cases().unwrap();
        let dir = tempfile::tempdir().unwrap();
        let results = evaluate_cases(&s, &cases, None).unwrap();
        write_reports(dir.path(), &results).unwrap();
        assert!(dir.path().join("curve.svg").exists());
        assert_eq!(std::fs::read_dir(dir.path().join("cases")).unwrap().count(), 3);
        (summary_csv(&results), std::fs::read(dir.path().join("summary.csv")).unwrap())
    };
    let (a, bytes_a) = run();
    let (b, bytes_b) = run();
    assert_eq!(a, b);
    assert_eq!(bytes_a, bytes_b);
    assert!(a.starts_with("point,label,click,mean_dsc,cases,failures\n"));
}

fn blob_mask() -> impl Strategy<Value = Mask> {
    (1usize..6, 8usize..40, 8usize..40, prop::collection::vec((0usize..6, 0usize..40, 0usize..40, 0usize..3), 0..9)).prop_map(|(d, h, w, blobs)| {
        let dims = Dims::new(d, h, w);
        let mut m = Mask::empty(dims, Spacing::new(4.0, 1.0, 1.0));
        for (z, y, x, r) in blobs {
            let c = VoxelIndex::new(z % d, y % h, x % w);
            for v in dims.iter() {
                if v.z == c.z && v.y.abs_diff(c.y) <= r && v.x.abs_diff(c.x) <= r {
                    m.set(v, true);
                }
            }
        }
        m
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn boxes_cover_every_lesion_within_policy(m in blob_mask(), max_boxes in 1usize..6, min_in_plane in 1usize..50) {
        let policy = BoxPolicy { max_boxes, min_in_plane };
        let boxes = build_boxes(&m, &policy);
        let dims = m.dims();
        prop_assert_eq!(boxes.is_empty(), m.is_all_false());
        prop_assert!(boxes.len() <= max_boxes);
        let components = connected_components(&m, Connectivity::TwentySix).count;
        prop_assert!(boxes.len() <= components);
        for b in &boxes {
            prop_assert!(b.fits(dims));
            let e = b.dims();
            prop_assert!(e.height >= min_in_plane.min(dims.height) && e.width >= min_in_plane.min(dims.width));
        }
        for v in m.voxels() {
            prop_assert!(boxes.iter().any(|b| b.contains(v)), "{:?} uncovered", v);
        }
    }
}
