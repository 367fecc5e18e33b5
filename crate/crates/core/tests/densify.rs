use linsplat::densify::{
    densify_and_prune, prune_predicate, DensifySchedule, DensifyStats, DensifyThresholds,
};
use linsplat::geometry::{logit, quat_to_matrix, Primitive3D};
use nalgebra::{Vector3, Vector4};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const LATE: usize = 5000;

#[test]
fn size_pruning_waits_for_first_opacity_reset() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let th = DensifyThresholds::LINEAR;
    let sched = DensifySchedule::default();
    let mut big = Primitive3D::isotropic(Vector3::zeros(), 0.9, 0.5, Vector3::repeat(0.5), 0);
    big.opacity_logit = logit(0.5);
    for (iter, survives) in [(600, true), (3000, true), (3100, false)] {
        let mut prims = vec![big.clone()];
        let mut stats = DensifyStats::new(1);
        stats.record(0, 0.0, 0.3);
        densify_and_prune(&mut prims, &mut stats, &th, &sched, iter, 1.0, &mut rng).unwrap();
        assert_eq!(prims.len() == 1, survives, "iter {iter}");
    }
}

fn anisotropic(rng: &mut ChaCha8Rng) -> Primitive3D {
    let mut p = Primitive3D::isotropic(
        Vector3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), 0.3),
        0.05,
        0.5,
        Vector3::new(0.2, 0.6, 0.9),
        1,
    );
    p.log_scale = Vector3::new(
        rng.random_range(0.01f64..0.08).ln(),
        rng.random_range(0.01f64..0.08).ln(),
        rng.random_range(0.01f64..0.08).ln(),
    );
    p.rotation = Vector4::new(
        rng.random_range(-1.0..1.0),
        rng.random_range(-1.0..1.0),
        rng.random_range(-1.0..1.0),
        rng.random_range(-1.0..1.0),
    );
    p.normalize_rotation();
    p
}

#[test]
fn split_children_follow_parent_covariance() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let parent = anisotropic(&mut rng);
    let r = quat_to_matrix(&parent.rotation);
    let s = parent.scales();
    let th = DensifyThresholds::LINEAR;
    let sched = DensifySchedule::default();
    let draws = 10_000;
    let mut prims = vec![parent.clone(); draws / sched.split_count];
    let mut stats = DensifyStats::new(prims.len());
    for i in 0..prims.len() {
        stats.record(i, 1.0, 0.01);
    }
    let out = densify_and_prune(&mut prims, &mut stats, &th, &sched, LATE, 1.0, &mut rng).unwrap();
    assert_eq!(out.report.splits, draws / sched.split_count);
    assert_eq!(prims.len(), draws);
    let mut inside = 0;
    for c in &prims {
        for k in 0..3 {
            assert_eq!(c.log_scale[k], parent.log_scale[k] - 1.6f64.ln());
            assert!((c.scales()[k] - s[k] / 1.6).abs() <= 1e-15 * s[k]);
        }
        let z = (r.transpose() * (c.mean - parent.mean)).component_div(&s);
        if z.iter().all(|v| v.abs() <= 3.0) {
            inside += 1;
        }
    }
    let frac = inside as f64 / draws as f64;
    assert!(frac >= 0.99, "only {frac} within 3 sigma");
}

#[test]
fn triggers_are_conserved() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let th = DensifyThresholds::LINEAR;
    for round in 0..20 {
        let n = 40;
        let mut prims: Vec<Primitive3D> = (0..n).map(|_| anisotropic(&mut rng)).collect();
        for p in &mut prims {
            p.opacity_logit = logit(0.5);
        }
        let mut stats = DensifyStats::new(n);
        let mut over = 0;
        for i in 0..n {
            let views = rng.random_range(1..5);
            let g = rng.random_range(0.0..0.0005);
            for _ in 0..views {
                stats.record(i, g, rng.random_range(0.0..0.1));
            }
            if stats.mean_grad(i) > th.grad_threshold {
                over += 1;
            }
        }
        let out = densify_and_prune(&mut prims, &mut stats, &th, &DensifySchedule::default(), LATE, 4.0, &mut rng).unwrap();
        assert_eq!(out.report.clones + out.report.splits, over, "round {round}");
        assert_eq!(out.report.after, prims.len());
        assert_eq!(out.sources.len(), prims.len());
        assert!(stats.grad_sum.iter().all(|&g| g == 0.0) && stats.len() == prims.len());
    }
}

#[test]
fn prune_leaves_no_violators() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let extent = 2.0;
    for th in [DensifyThresholds::LINEAR, DensifyThresholds::GAUSSIAN] {
        let n = 200;
        let mut prims: Vec<Primitive3D> = (0..n)
            .map(|_| {
                let mut p = anisotropic(&mut rng);
                p.opacity_logit = logit(rng.random_range(0.001..0.9));
                p.log_scale[0] = rng.random_range(0.01f64..1.2).ln();
                p
            })
            .collect();
        let mut stats = DensifyStats::new(n);
        let mut radius = vec![0.0; n];
        for (i, r) in radius.iter_mut().enumerate() {
            *r = rng.random_range(0.0..0.3);
            stats.record(i, rng.random_range(0.0..0.0004), *r);
        }
        let out = densify_and_prune(&mut prims, &mut stats, &th, &DensifySchedule::default(), LATE, extent, &mut rng).unwrap();
        assert!(out.report.prunes > 0);
        for (p, src) in prims.iter().zip(&out.sources) {
            let r = src.map_or(0.0, |i| radius[i]);
            assert!(!prune_predicate(p, r, &th, extent, true));
        }
    }
}

#[test]
fn empty_scene_is_noop() {
    let mut prims = Vec::new();
    let mut stats = DensifyStats::new(0);
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let out = densify_and_prune(
        &mut prims,
        &mut stats,
        &DensifyThresholds::LINEAR,
        &DensifySchedule::default(),
        LATE,
        1.0,
        &mut rng,
    )
    .unwrap();
    assert_eq!(out.report.before, 0);
    assert_eq!(out.report.after, 0);
}
