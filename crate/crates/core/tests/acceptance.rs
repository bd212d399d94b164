//! Acceptance checks. Prints one PASS/FAIL line per criterion and exits
//! non-zero when any of them fails or overruns its time budget.

use std::collections::{BTreeMap, BTreeSet};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::{Duration, Instant};

use locbench::bench::{build_rankings, run_benchmark, run_synthetic, BenchmarkConfig, ChallengeSubsets, Method, Paradigm};
use locbench::challenge::{blur_score, gaussian_blur, GrayImage, DEFAULT_CUTOFF};
use locbench::correlation::{pearson, spearman};
use locbench::geometry::{build_frustum, rotation_error, CameraIntrinsics, HalfSpace, Pose, PoseError};
use locbench::gt_ranking::{build_gt_ranking, frustum_overlap_score, gt_statistics, GtConfig, GtMethod, RelevanceThreshold};
use locbench::lp::chebyshev_center;
use locbench::map_localize::{
    estimate_pose_pnp, localize_global, localize_local_sfm, Correspondence, Failure, LocalizeConfig, MapImage,
    RansacConfig,
};
use locbench::metrics::{mean_average_precision, precision_at_k, recall_at_k};
use locbench::pose_approx::{
    interpolate_pose, weights_bdi, weights_csi, weights_ewb, CsiConfig, GlobalDescriptor, Scheme,
};
use locbench::retrieval::{rank_by_descriptor, RankedEntry, Ranking};
use locbench::synth::{
    generate_scene, to_dataset, DescriptorMode, DescriptorModel, HarnessConfig, Layout, MatchNoise, SynthConfig,
    SynthMatcher,
};
use locbench::ImageId;
use nalgebra::{DMatrix, DVector, Unit, UnitQuaternion, Vector2, Vector3};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};

type Check = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn random_quaternion(r: &mut ChaCha8Rng) -> [f64; 4] {
    loop {
        let q: [f64; 4] = std::array::from_fn(|_| StandardNormal.sample(r));
        if q.iter().map(|v| v * v).sum::<f64>() > 0.01 {
            return q;
        }
    }
}

fn random_pose(r: &mut ChaCha8Rng, spread: f64) -> Pose {
    let c = Vector3::from_fn(|_, _| r.random_range(-spread..spread));
    Pose::new(c, random_quaternion(r)).unwrap()
}

fn random_descriptor(r: &mut ChaCha8Rng, dim: usize) -> GlobalDescriptor {
    GlobalDescriptor::new((0..dim).map(|_| StandardNormal.sample(r)).collect()).unwrap()
}

fn same_bits(a: &Pose, b: &Pose) -> bool {
    let bits = |p: &Pose| {
        let c = p.center();
        ([c.x, c.y, c.z].map(f64::to_bits), p.wxyz().map(f64::to_bits))
    };
    bits(a) == bits(b)
}

fn c1_k1_equivalence() -> Check {
    let mut r = rng(1);
    for trial in 0..100 {
        let db: BTreeMap<ImageId, (Pose, GlobalDescriptor)> =
            (0..30).map(|i| (ImageId(i), (random_pose(&mut r, 50.0), random_descriptor(&mut r, 16)))).collect();
        let q = random_descriptor(&mut r, 16);
        let ranking = rank_by_descriptor(
            &BTreeMap::from([(ImageId(100), q.clone())]),
            &db.iter().map(|(&id, (_, d))| (id, d.clone())).collect(),
            50,
        );
        let top = ranking.top_k(ImageId(100), 1)[0];
        let (pose, desc) = &db[&top];
        let retrieved = std::slice::from_ref(desc);
        let mut out = Vec::new();
        for w in [weights_ewb(1), weights_bdi(&q, retrieved), weights_csi(&q, retrieved, &CsiConfig::default())] {
            let p = *interpolate_pose(&[*pose], &w.map_err(|e| e.to_string())?).unwrap().pose().unwrap();
            out.push(p);
        }
        ensure(out.iter().all(|p| same_bits(p, pose)), || format!("trial {trial}: poses differ from the top-1 pose"))?;
    }
    Ok("100 queries, EWB/BDI/CSI identical to the top-1 pose bit for bit".into())
}

fn c2_csi_alpha_zero() -> Check {
    let mut r = rng(2);
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let dim = r.random_range(4..64);
        let q = random_descriptor(&mut r, dim);
        let set: Vec<GlobalDescriptor> = (0..50).map(|_| random_descriptor(&mut r, dim)).collect();
        for k in 1..=50 {
            let csi = weights_csi(&q, &set[..k], &CsiConfig { alpha: 0.0 }).map_err(|e| e.to_string())?;
            let ewb = weights_ewb(k).map_err(|e| e.to_string())?;
            for (a, b) in csi.as_slice().iter().zip(ewb.as_slice()) {
                worst = worst.max((a - b).abs());
                worst = worst.max((a - 1.0 / k as f64).abs());
            }
        }
    }
    ensure(worst < 1e-12, || format!("max deviation {worst:e}"))?;
    Ok(format!("max deviation {worst:e} over 100 sets, k = 1..50"))
}

fn c3_bdi_optimality() -> Check {
    let mut r = rng(3);
    let mut worst_residual = 0.0f64;
    let mut closest_gap = f64::INFINITY;
    for inst in 0..100 {
        let k = r.random_range(2..=20);
        let dim = r.random_range(8..=64);
        let q = random_descriptor(&mut r, dim);
        let set: Vec<GlobalDescriptor> = (0..k).map(|_| random_descriptor(&mut r, dim)).collect();
        let w = weights_bdi(&q, &set).map_err(|e| e.to_string())?;
        let w = DVector::from_column_slice(w.as_slice());
        worst_residual = worst_residual.max((w.sum() - 1.0).abs());

        let d = DMatrix::from_fn(dim, k, |i, j| set[j].as_vector()[i]);
        let qv = q.as_vector().clone();
        let objective = |w: &DVector<f64>| (&qv - &d * w).norm_squared();
        let best = objective(&w);
        for s in 0..10_000 {
            let mut z = DVector::from_fn(k, |_, _| StandardNormal.sample(&mut r));
            let sample = if s % 2 == 0 {
                let scale = 10f64.powf(r.random_range(-2.0..1.0));
                z *= scale;
                let shift = (1.0 - z.sum()) / k as f64;
                z.add_scalar(shift)
            } else {
                // zero-sum step away from the solution
                let mean = z.mean();
                z.add_scalar_mut(-mean);
                &w + z * 10f64.powf(r.random_range(-4.0..-1.0))
            };
            let value = objective(&sample);
            closest_gap = closest_gap.min(value - best);
            ensure(best <= value + 1e-12 * (1.0 + value), || {
                format!("instance {inst}: sample {s} objective {value} below BDI {best}")
            })?;
        }
    }
    ensure(worst_residual < 1e-10, || format!("constraint residual {worst_residual:e}"))?;
    Ok(format!("100 instances x 10^4 samples, residual {worst_residual:e}, closest sample gap {closest_gap:e}"))
}

fn c4_rotation_error() -> Check {
    let mut r = rng(4);
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let base = Pose::new(Vector3::zeros(), random_quaternion(&mut r)).unwrap();
        for theta in [0.0, 1.0, 90.0, 179.0] {
            let axis = Unit::new_normalize(Vector3::from_fn(|_, _| StandardNormal.sample(&mut r)));
            let delta = UnitQuaternion::from_axis_angle(&axis, f64::to_radians(theta));
            let moved = Pose::from_parts(*base.center(), delta * base.rotation());
            let e = rotation_error(&moved, &base);
            worst = worst.max((e - theta).abs());
            for (a, b) in [(moved.with_negated_quaternion(), base), (moved, base.with_negated_quaternion())] {
                ensure(rotation_error(&a, &b) == e, || "quaternion sign changed the error".into())?;
            }
        }
    }
    ensure(worst < 1e-7, || format!("max error {worst:e} deg"))?;
    Ok(format!("max deviation {worst:e} deg; sign flips exact"))
}

/// Largest inscribed radius of `{x : n.x <= d}` by coarse-to-fine grid search.
fn grid_radius(hs: &[HalfSpace], lo: Vector3<f64>, hi: Vector3<f64>) -> f64 {
    let f = |x: &Vector3<f64>| hs.iter().map(|h| h.margin(x)).fold(f64::INFINITY, f64::min);
    const N: usize = 41;
    let (mut lo, mut hi) = (lo, hi);
    let mut best = f64::NEG_INFINITY;
    let mut shrinks = 0;
    for _ in 0..200 {
        let step = (hi - lo) / (N - 1) as f64;
        let (mut arg, mut level_best) = (lo, f64::NEG_INFINITY);
        let mut on_edge = false;
        for i in 0..N {
            for j in 0..N {
                for k in 0..N {
                    let x = lo + Vector3::new(i as f64 * step.x, j as f64 * step.y, k as f64 * step.z);
                    let v = f(&x);
                    if v > level_best {
                        level_best = v;
                        arg = x;
                        on_edge = [i, j, k].iter().any(|&c| c == 0 || c == N - 1);
                    }
                }
            }
        }
        best = best.max(level_best);
        // an optimum on the window edge may lie outside: move, don't shrink
        let half = if on_edge { (hi - lo) / 2.0 } else { 10.0 * step };
        if !on_edge {
            shrinks += 1;
            if shrinks == 24 {
                break;
            }
        }
        lo = arg - half;
        hi = arg + half;
    }
    best.max(0.0)
}

fn frustum_box(pose: &Pose, intr: &CameraIntrinsics, far: f64) -> (Vector3<f64>, Vector3<f64>) {
    let inv = pose.rotation().inverse();
    let mut lo = *pose.center();
    let mut hi = *pose.center();
    for (u, v) in [(0.0, 0.0), (intr.width, 0.0), (0.0, intr.height), (intr.width, intr.height)] {
        let n = intr.unproject(&Vector2::new(u, v));
        let corner = inv * Vector3::new(n.x * far, n.y * far, far) + pose.center();
        lo = lo.inf(&corner);
        hi = hi.sup(&corner);
    }
    (lo, hi)
}

fn c5_chebyshev() -> Check {
    let cube: Vec<HalfSpace> = (0..3)
        .flat_map(|i| {
            let e = Vector3::ith(i, 1.0);
            [HalfSpace::new(e, 1.0), HalfSpace::new(-e, 0.0)]
        })
        .collect();
    let ball = chebyshev_center(&cube).map_err(|e| e.to_string())?.ok_or("cube reported empty")?;
    ensure(ball.radius == 0.5, || format!("unit cube radius {}", ball.radius))?;

    let intr = CameraIntrinsics::from_fov(640.0, 480.0, 60.0).unwrap();
    let far = 25.0;
    let mut r = rng(5);
    let mut worst = 0.0f64;
    let mut overlapping = 0;
    for pair in 0..50 {
        let yaw = r.random_range(0.0..std::f64::consts::TAU);
        let a = Pose::from_parts(
            Vector3::new(r.random_range(-5.0..5.0), 0.0, r.random_range(-5.0..5.0)),
            UnitQuaternion::from_euler_angles(r.random_range(-0.3..0.3), yaw, r.random_range(-0.3..0.3)),
        );
        let b = Pose::from_parts(
            a.center() + Vector3::new(r.random_range(-8.0..8.0), r.random_range(-1.0..1.0), r.random_range(-8.0..8.0)),
            UnitQuaternion::from_euler_angles(
                r.random_range(-0.3..0.3),
                yaw + r.random_range(-1.2..1.2),
                r.random_range(-0.3..0.3),
            ),
        );
        let fa = build_frustum(&a, &intr, 0.0, far).unwrap();
        let fb = build_frustum(&b, &intr, 0.0, far).unwrap();
        let lp = frustum_overlap_score(&fa, &fb).map_err(|e| e.to_string())?;
        let (la, ha) = frustum_box(&a, &intr, far);
        let (lb, hb) = frustum_box(&b, &intr, far);
        let (lo, hi) = (la.sup(&lb), ha.inf(&hb));
        let hs: Vec<HalfSpace> = fa.half_spaces().iter().chain(fb.half_spaces()).copied().collect();
        let oracle = if (hi - lo).min() <= 0.0 { 0.0 } else { grid_radius(&hs, lo, hi) };
        if oracle > 0.0 {
            overlapping += 1;
        }
        worst = worst.max((lp - oracle).abs());
        ensure((lp - oracle).abs() < 1e-2, || format!("pair {pair}: LP {lp} vs grid {oracle}"))?;
    }

    let front = Pose::from_parts(Vector3::zeros(), UnitQuaternion::identity());
    let back = Pose::from_parts(
        Vector3::new(0.0, 0.0, -1.0),
        UnitQuaternion::from_axis_angle(&Vector3::y_axis(), std::f64::consts::PI),
    );
    let disjoint = frustum_overlap_score(
        &build_frustum(&front, &intr, 0.0, far).unwrap(),
        &build_frustum(&back, &intr, 0.0, far).unwrap(),
    )
    .map_err(|e| e.to_string())?;
    ensure(disjoint == 0.0, || format!("disjoint frusta scored {disjoint}"))?;
    Ok(format!("cube r = 0.5; 50 pairs ({overlapping} overlapping) max |LP - grid| {worst:.2e} m; disjoint 0"))
}

fn c6_pnp() -> Check {
    let intr = CameraIntrinsics::from_fov(640.0, 480.0, 60.0).unwrap();
    let noise = Normal::new(0.0, 0.5).unwrap();
    let mut good = 0;
    for trial in 0..100u64 {
        let mut r = rng(600 + trial);
        let pose = random_pose(&mut r, 10.0);
        let inv = pose.rotation().inverse();
        let mut corr: Vec<Correspondence> = (0..200)
            .map(|_| {
                let px = Vector2::new(r.random_range(0.0..intr.width), r.random_range(0.0..intr.height));
                let n = intr.unproject(&px);
                let depth = r.random_range(2.0..20.0);
                let point = inv * Vector3::new(n.x * depth, n.y * depth, depth) + pose.center();
                let pixel = px + Vector2::new(noise.sample(&mut r), noise.sample(&mut r));
                Correspondence { pixel, point }
            })
            .collect();
        corr.shuffle(&mut r);
        for c in corr.iter_mut().take(40) {
            c.pixel = Vector2::new(r.random_range(0.0..intr.width), r.random_range(0.0..intr.height));
        }
        let cfg = RansacConfig { seed: trial, ..Default::default() };
        if let Ok(sol) = estimate_pose_pnp(&corr, &intr, &cfg) {
            let e = PoseError::between(&sol.pose, &pose);
            if e.c_error < 0.01 && e.r_error < 0.1 {
                good += 1;
            }
        }
    }
    ensure(good >= 95, || format!("{good}/100 trials within 0.01 m / 0.1 deg"))?;
    Ok(format!("{good}/100 trials within 0.01 m / 0.1 deg"))
}

fn c7_noiseless() -> Check {
    let scene = generate_scene(&SynthConfig { n_db: 20, n_query: 10, n_points: 500, pixel_noise: 0.0, ..Default::default() })
        .map_err(|e| e.to_string())?;
    let matcher = SynthMatcher::new(&scene, MatchNoise::default()).map_err(|e| e.to_string())?;
    let global = scene.global_map().map_err(|e| e.to_string())?;
    let ranking = build_gt_ranking(GtMethod::Rcp, &scene.queries, &scene.database, None, &GtConfig::default())
        .map_err(|e| e.to_string())?
        .ranking;
    let cfg = LocalizeConfig::default();
    let (mut worst_c, mut worst_r) = (0.0f64, 0.0f64);
    for (&q, gt) in &scene.queries {
        let top = ranking.top_k(q, 3);
        let results = [
            ("global", localize_global(q, &scene.intrinsics, &top, &global, &matcher, &cfg)),
            ("local-sfm", localize_local_sfm(q, &scene.intrinsics, &top, &scene.database, &matcher, &cfg)),
        ];
        for (name, res) in results {
            let pose = res.map_err(|e| e.to_string())?.estimate.map_err(|f| format!("{name} query {q}: {f}"))?;
            let e = PoseError::between(&pose, &gt.pose);
            worst_c = worst_c.max(e.c_error);
            worst_r = worst_r.max(e.r_error);
        }
    }
    ensure(worst_c < 1e-4 && worst_r < 1e-3, || format!("worst error {worst_c:e} m / {worst_r:e} deg"))?;

    let mut corridor =
        generate_scene(&SynthConfig { layout: Layout::Corridor, n_db: 10, n_query: 5, n_points: 500, pixel_noise: 0.0, ..Default::default() })
            .map_err(|e| e.to_string())?;
    let (&q, query) = corridor.queries.iter().next().unwrap();
    let anchor = *corridor
        .database
        .iter()
        .min_by(|a, b| {
            let d = |m: &MapImage| (m.pose.center() - query.pose.center()).norm();
            d(a.1).total_cmp(&d(b.1))
        })
        .unwrap()
        .0;
    let neighbour = if anchor.0 + 1 < 10 { ImageId(anchor.0 + 1) } else { ImageId(anchor.0 - 1) };
    let dup = ImageId(1000);
    let copy = corridor.database[&anchor];
    corridor.database.insert(dup, copy);
    let extra: Vec<_> = corridor.observations.iter().filter(|o| o.image == anchor).map(|o| locbench::map_localize::Observation { image: dup, ..*o }).collect();
    corridor.observations.extend(extra);
    let matcher = SynthMatcher::new(&corridor, MatchNoise::default()).map_err(|e| e.to_string())?;
    let with_baseline = localize_local_sfm(q, &corridor.intrinsics, &[anchor, neighbour], &corridor.database, &matcher, &cfg)
        .map_err(|e| e.to_string())?;
    ensure(with_baseline.is_success(), || format!("control pair failed: {:?}", with_baseline.estimate))?;
    let zero = localize_local_sfm(q, &corridor.intrinsics, &[anchor, dup], &corridor.database, &matcher, &cfg)
        .map_err(|e| e.to_string())?;
    ensure(zero.estimate == Err(Failure::TooFewTracks), || format!("zero baseline gave {:?}", zero.estimate))?;
    Ok(format!("10 queries, worst {worst_c:.1e} m / {worst_r:.1e} deg; zero baseline -> too-few-tracks"))
}

fn localized_by_k(
    bundle: &locbench::bench::ReportBundle,
    source: &str,
    method: Method,
    ks: &[usize],
    m: f64,
    d: f64,
) -> Result<Vec<f64>, String> {
    ks.iter().map(|&k| bundle.localized(source, method, k, m, d).ok_or_else(|| format!("no {source} cell at k={k}"))).collect()
}

fn c8_upper_bound_approx() -> Check {
    let harness = HarnessConfig {
        scene: SynthConfig { n_query: 100, heading_spread_deg: 30.0, query_yaw_jitter_deg: 5.0, ..Default::default() },
        features: BTreeMap::from([(
            "noisier".to_string(),
            DescriptorModel { mode: DescriptorMode::PosePlusNoise { sigma: 0.8 }, dim: 256 },
        )]),
        matches: MatchNoise { inlier_noise_px: 0.3, outlier_ratio: 0.2, ..Default::default() },
    };
    let cfg = BenchmarkConfig {
        paradigms: vec![Paradigm::Approx],
        schemes: vec![Scheme::Ewb],
        gt_methods: vec![GtMethod::Rcp],
        ..Default::default()
    };
    let ds = to_dataset(&generate_scene(&harness.scene).map_err(|e| e.to_string())?, &harness).map_err(|e| e.to_string())?;
    let sources = build_rankings(&ds, &cfg).map_err(|e| e.to_string())?;
    let bundle = run_benchmark(&ds, &sources, &ChallengeSubsets::default(), &cfg).map_err(|e| e.to_string())?;
    let method = Method::Approx(Scheme::Ewb);
    let gt = localized_by_k(&bundle, "gt-rcp", method, &cfg.k_grid, 5.0, 10.0)?;
    let desc = localized_by_k(&bundle, "noisier", method, &cfg.k_grid, 5.0, 10.0)?;
    ensure(gt.iter().zip(&desc).all(|(g, d)| g >= d), || format!("gt {gt:?} vs descriptor {desc:?}"))?;
    Ok(format!("k {:?}: gt-rcp {gt:?} >= noisier {desc:?}", cfg.k_grid))
}

fn c9_upper_bound_local_sfm() -> Check {
    let harness = HarnessConfig::default();
    let ks = vec![5, 10, 20];
    let cfg = BenchmarkConfig {
        paradigms: vec![Paradigm::LocalSfm],
        gt_methods: vec![GtMethod::Coobs],
        features: vec!["adversarial".into()],
        k_grid: ks.clone(),
        ..Default::default()
    };
    let ds = to_dataset(&generate_scene(&harness.scene).map_err(|e| e.to_string())?, &harness).map_err(|e| e.to_string())?;
    let sources = build_rankings(&ds, &cfg).map_err(|e| e.to_string())?;
    let bundle = run_benchmark(&ds, &sources, &ChallengeSubsets::default(), &cfg).map_err(|e| e.to_string())?;
    let gt = localized_by_k(&bundle, "gt-coobs", Method::LocalSfm, &ks, 0.25, 2.0)?;
    let adv = localized_by_k(&bundle, "adversarial", Method::LocalSfm, &ks, 0.25, 2.0)?;
    ensure(gt.iter().zip(&adv).all(|(g, a)| g >= a), || format!("gt {gt:?} vs adversarial {adv:?}"))?;
    Ok(format!("k {ks:?}: gt-coobs {gt:?} >= adversarial {adv:?}"))
}

fn oracle_pearson(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let (sx, sy) = (x.iter().sum::<f64>(), y.iter().sum::<f64>());
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| a * b).sum();
    let sxx: f64 = x.iter().map(|a| a * a).sum();
    let syy: f64 = y.iter().map(|b| b * b).sum();
    (n * sxy - sx * sy) / ((n * sxx - sx * sx).sqrt() * (n * syy - sy * sy).sqrt())
}

fn oracle_ranks(v: &[f64]) -> Vec<f64> {
    v.iter()
        .map(|a| {
            let less = v.iter().filter(|b| *b < a).count() as f64;
            let equal = v.iter().filter(|b| *b == a).count() as f64;
            1.0 + less + (equal - 1.0) / 2.0
        })
        .collect()
}

fn c10_metric_oracles() -> Check {
    let mut r = rng(10);
    let mut worst = 0.0f64;
    let mut track = |a: f64, b: f64| worst = worst.max((a - b).abs());
    for _ in 0..100 {
        let n_db = r.random_range(5..30u32);
        let mut ranking = Ranking::default();
        let mut relevant = BTreeMap::new();
        for q in 0..r.random_range(1..8u32) {
            let q = ImageId(1000 + q);
            let mut ids: Vec<ImageId> = (0..n_db).map(ImageId).collect();
            ids.shuffle(&mut r);
            ids.truncate(r.random_range(1..=n_db as usize));
            let rel: BTreeSet<ImageId> = (0..n_db).filter(|_| r.random_bool(0.3)).map(ImageId).collect();
            ranking.per_query.insert(q, ids.iter().map(|&db| RankedEntry { db, score: 0.0 }).collect());
            relevant.insert(q, rel);
        }
        let eligible: Vec<ImageId> = relevant.iter().filter(|(_, s)| !s.is_empty()).map(|(&q, _)| q).collect();
        for k in 1..=n_db as usize {
            for (q, rel) in &relevant {
                let ranked = ranking.top_k(*q, usize::MAX);
                let hits = (0..k).filter(|&i| i < ranked.len() && rel.contains(&ranked[i])).count();
                track(precision_at_k(&ranked, rel, k).unwrap(), hits as f64 / k as f64);
            }
            if !eligible.is_empty() {
                let found = eligible
                    .iter()
                    .filter(|q| ranking.top_k(**q, usize::MAX).iter().take(k).any(|d| relevant[q].contains(d)))
                    .count();
                track(recall_at_k(&ranking, &relevant, k).unwrap(), found as f64 / eligible.len() as f64);
            }
        }
        if !eligible.is_empty() {
            let mut sum = 0.0;
            for q in &eligible {
                let ranked = ranking.top_k(*q, usize::MAX);
                let rel = &relevant[q];
                let mut ap = 0.0;
                for i in 0..ranked.len() {
                    if rel.contains(&ranked[i]) {
                        let above = ranked[..=i].iter().filter(|d| rel.contains(d)).count();
                        ap += above as f64 / (i + 1) as f64;
                    }
                }
                sum += ap / rel.len() as f64;
            }
            track(mean_average_precision(&ranking, &relevant).unwrap(), sum / eligible.len() as f64);
        }

        let n = r.random_range(3..30);
        // one decimal so ties occur
        let x: Vec<f64> = (0..n).map(|_| (r.random_range(0.0..1.0f64) * 10.0).round() / 10.0).collect();
        let y: Vec<f64> = (0..n).map(|_| r.random_range(0.0..100.0)).collect();
        let pairs: Vec<(f64, f64)> = x.iter().copied().zip(y.iter().copied()).collect();
        if let Some(p) = pearson(&pairs).unwrap() {
            track(p, oracle_pearson(&x, &y));
        }
        if let Some(s) = spearman(&pairs).unwrap() {
            track(s, oracle_pearson(&oracle_ranks(&x), &oracle_ranks(&y)));
        }
    }
    ensure(worst < 1e-12, || format!("max deviation {worst:e}"))?;
    let inverted = spearman(&[(0.2, 80.0), (0.4, 60.0), (0.6, 40.0), (0.8, 20.0)]).unwrap();
    ensure(inverted == Some(-1.0), || format!("inverted ranking spearman {inverted:?}"))?;
    Ok(format!("max deviation {worst:e}; inverted 4-feature spearman -1"))
}

fn c11_gt_statistics() -> Check {
    // hand-built: query 10 sees db 0 and 1, query 11 sees nothing, query 12 sees db 1 only
    let intr = CameraIntrinsics::from_fov(640.0, 480.0, 60.0).unwrap();
    let img = |x: f64, yaw_deg: f64| MapImage {
        pose: Pose::from_parts(
            Vector3::new(x, 0.0, 0.0),
            UnitQuaternion::from_axis_angle(&Vector3::y_axis(), yaw_deg.to_radians()),
        ),
        intrinsics: intr,
    };
    let database = BTreeMap::from([(ImageId(0), img(0.0, 0.0)), (ImageId(1), img(10.0, 0.0))]);
    let queries =
        BTreeMap::from([(ImageId(10), img(5.0, 10.0)), (ImageId(11), img(500.0, 0.0)), (ImageId(12), img(30.0, 0.0))]);
    let gt = build_gt_ranking(GtMethod::Rcp, &queries, &database, None, &GtConfig::default()).map_err(|e| e.to_string())?;
    let stats = gt_statistics(&gt, RelevanceThreshold::MethodDefault).map_err(|e| e.to_string())?;
    ensure(stats.avg_k == 1.0 && stats.missing_pct == 100.0 / 3.0, || format!("hand-built case gave {stats:?}"))?;

    let cfg = SynthConfig { n_db: 30, n_query: 20, n_missing: 5, n_points: 200, ..Default::default() };
    let scene = generate_scene(&cfg).map_err(|e| e.to_string())?;
    let gt = build_gt_ranking(GtMethod::Rcp, &scene.queries, &scene.database, None, &GtConfig::default())
        .map_err(|e| e.to_string())?;
    let stats = gt_statistics(&gt, RelevanceThreshold::MethodDefault).map_err(|e| e.to_string())?;
    let mut total = 0usize;
    let mut missing = BTreeSet::new();
    for (&q, qi) in &scene.queries {
        let count = scene
            .database
            .values()
            .filter(|d| {
                let dot = qi.pose.rotation().coords.dot(&d.pose.rotation().coords).abs().min(1.0);
                (qi.pose.center() - d.pose.center()).norm() <= 25.0 && 2.0 * dot.acos().to_degrees() <= 45.0
            })
            .count()
            .min(50);
        total += count;
        if count == 0 {
            missing.insert(q);
        }
    }
    ensure(scene.missing.is_subset(&missing), || "a planted missing query has relevant images".into())?;
    let n = scene.queries.len() as f64;
    let expected = (total as f64 / n, 100.0 * missing.len() as f64 / n);
    ensure((stats.avg_k, stats.missing_pct) == expected, || format!("{stats:?} vs hand-computed {expected:?}"))?;
    Ok(format!("avg_k {:.2}, missing {:.1}% ({} planted)", stats.avg_k, stats.missing_pct, scene.missing.len()))
}

fn c12_blur() -> Check {
    let board = GrayImage::from_fn(128, 128, |x, y| if (x / 8 + y / 8) % 2 == 0 { 0.0 } else { 255.0 });
    let scores: Vec<f64> = [1.0, 2.0, 4.0, 8.0]
        .iter()
        .map(|&s| blur_score(&gaussian_blur(&board, s), DEFAULT_CUTOFF))
        .collect::<Result<_, _>>()
        .map_err(|e| e.to_string())?;
    ensure(scores.windows(2).all(|w| w[1] < w[0]), || format!("scores {scores:?}"))?;
    let flat = blur_score(&GrayImage::from_fn(128, 128, |_, _| 97.0), DEFAULT_CUTOFF).map_err(|e| e.to_string())?;
    ensure(flat == 0.0, || format!("constant image scored {flat:e}"))?;
    Ok(format!("mad {scores:.3?} for sigma 1, 2, 4, 8; constant 0"))
}

fn c13_determinism() -> Check {
    let mut hashes = Vec::new();
    let mut times = Vec::new();
    for _ in 0..2 {
        let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
        let start = Instant::now();
        let (_, hash) = run_synthetic(&HarnessConfig::default(), &BenchmarkConfig::default(), dir.path())
            .map_err(|e| e.to_string())?;
        times.push(start.elapsed());
        hashes.push(hash);
    }
    ensure(times.iter().all(|t| *t < Duration::from_secs(300)), || format!("run took {times:?}"))?;
    ensure(hashes[0] == hashes[1], || format!("hashes differ: {} vs {}", hashes[0], hashes[1]))?;
    Ok(format!("hash {} twice, runs {:.0?} / {:.0?}", &hashes[0][..16], times[0], times[1]))
}

fn main() {
    let criteria: [(&str, u64, fn() -> Check); 13] = [
        ("k=1 scheme equivalence", 1, c1_k1_equivalence),
        ("CSI alpha=0 equals EWB", 1, c2_csi_alpha_zero),
        ("BDI optimality", 10, c3_bdi_optimality),
        ("rotation error exactness", 1, c4_rotation_error),
        ("Chebyshev LP", 30, c5_chebyshev),
        ("PnP robustness", 60, c6_pnp),
        ("noiseless end-to-end", 60, c7_noiseless),
        ("approximation upper bound", 120, c8_upper_bound_approx),
        ("local SFM upper bound", 120, c9_upper_bound_local_sfm),
        ("metric oracles", 10, c10_metric_oracles),
        ("GT statistics", 1, c11_gt_statistics),
        ("blur monotonicity", 5, c12_blur),
        ("pipeline determinism", 600, c13_determinism),
    ];
    // optional criterion numbers on the command line select a subset
    let only: Vec<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let mut failed = 0;
    let mut ran = 0;
    for (i, (name, budget, check)) in criteria.iter().enumerate() {
        if !only.is_empty() && !only.contains(&(i + 1)) {
            continue;
        }
        ran += 1;
        let start = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|_| Err("panicked".into()));
        let elapsed = start.elapsed();
        let outcome = match outcome {
            Ok(_) if elapsed > Duration::from_secs(*budget) => Err(format!("took {elapsed:.1?}, budget {budget} s")),
            o => o,
        };
        let (tag, detail) = match &outcome {
            Ok(d) => ("PASS", d.as_str()),
            Err(d) => ("FAIL", d.as_str()),
        };
        if outcome.is_err() {
            failed += 1;
        }
        println!("criterion {:>2} {tag} {name} [{:.2} s]: {detail}", i + 1, elapsed.as_secs_f64());
    }
    println!("{} of {ran} criteria passed", ran - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
