//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use tetmorph::config::RunConfig;
use tetmorph::diff::optim::{LrSchedule, OptimizerConfig};
use tetmorph::eval::{accuracy, epe, evaluate_run, EvalConfig, MetricsReport};
use tetmorph::fit::{
    chamfer, chamfer_brute_force, chamfer_with_mode, fit_motion, fit_shape, ChamferMode, ModelKind, ShapeFitConfig,
};
use tetmorph::geometry::{brute_force_nearest, enclosed_volume, sample_surface, NearestNeighborIndex};
use tetmorph::march::{classify_tet, marching_tetrahedra, TET_EDGES};
use tetmorph::mesh::{icosphere, SurfaceMesh};
use tetmorph::observe::{generate_sequence, AnalyticMotion, BaseShape, MotionKind, SequenceDataset};
use tetmorph::tetgrid::{build_uniform_grid, TetGrid};
use tetmorph::Vec3;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn within(elapsed: Duration, limit_s: u64) -> bool {
    elapsed < Duration::from_secs(limit_s)
}

fn criterion_1() -> Outcome {
    let start = Instant::now();
    let report = tetmorph::gradcheck::run_gradcheck(0).expect("gradcheck runs");
    let elapsed = start.elapsed();
    let parts: Vec<String> = report
        .suites
        .iter()
        .map(|s| format!("{} {:.2e} (<{:.0e})", s.name, s.max_rel_error, s.threshold))
        .collect();
    outcome(report.passed() && within(elapsed, 60), format!("{}; {:.1}s (<60s)", parts.join(", "), elapsed.as_secs_f64()))
}

/// Checks every cube sign pattern on an R=1 grid against brute-force sign
/// separation; returns the set of per-tet cases exercised.
fn check_case_patterns() -> Result<BTreeSet<usize>, String> {
    let mut cases = BTreeSet::new();
    let base = build_uniform_grid(1).map_err(|e| e.to_string())?;
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    for pattern in 0u32..256 {
        let sdf: Vec<f64> = (0..8)
            .map(|i| {
                let m = rng.gen_range(0.1..1.0);
                if pattern >> i & 1 == 1 {
                    -m
                } else {
                    m
                }
            })
            .collect();
        let mut grid = base.clone();
        grid.set_sdf(&sdf).map_err(|e| e.to_string())?;
        let mesh = marching_tetrahedra(&grid).map_err(|e| e.to_string())?;
        let prov = mesh.provenance.as_ref().ok_or("missing provenance")?;

        let mut expected = BTreeSet::new();
        for tet in grid.tets() {
            let s: [f64; 4] = std::array::from_fn(|i| sdf[tet[i] as usize]);
            cases.insert(classify_tet(s).map_err(|e| e.to_string())?);
            for &(a, b) in &TET_EDGES {
                let (va, vb) = (tet[a], tet[b]);
                if (sdf[va as usize] < 0.0) != (sdf[vb as usize] < 0.0) {
                    expected.insert((va.min(vb), va.max(vb)));
                }
            }
        }
        let got: BTreeSet<(u32, u32)> = prov.iter().map(|e| (e.a.min(e.b), e.a.max(e.b))).collect();
        if got != expected || got.len() != mesh.positions.len() {
            return Err(format!("pattern {pattern}: crossing edges differ from brute force"));
        }
        let pos = grid.vertices();
        for (i, e) in prov.iter().enumerate() {
            let (sa, sb) = (sdf[e.a as usize], sdf[e.b as usize]);
            let t = sa / (sa - sb);
            let p = pos[e.a as usize] + (pos[e.b as usize] - pos[e.a as usize]) * t;
            if (p - mesh.positions[i]).norm() > 1e-12 {
                return Err(format!("pattern {pattern}: vertex {i} is not the edge zero crossing"));
            }
        }
        for tri in &mesh.triangles {
            let p: Vec<Vec3> = tri.iter().map(|&v| mesh.positions[v as usize]).collect();
            let ends: BTreeSet<u32> = tri.iter().flat_map(|&v| [prov[v as usize].a, prov[v as usize].b]).collect();
            let tet = grid
                .tets()
                .iter()
                .find(|t| ends.iter().all(|v| t.contains(v)))
                .ok_or(format!("pattern {pattern}: triangle spans several tets"))?;
            let n = (p[1] - p[0]).cross(&(p[2] - p[0]));
            for &v in tet {
                let side = n.dot(&(pos[v as usize] - p[0]));
                let inside = sdf[v as usize] < 0.0;
                if (inside && side >= 0.0) || (!inside && side <= 0.0) {
                    return Err(format!("pattern {pattern}: triangle does not separate inside from outside"));
                }
            }
        }
    }
    Ok(cases)
}

fn box_sdf(h: Vec3) -> impl Fn(&Vec3) -> f64 {
    move |p: &Vec3| {
        let q = p.abs() - h;
        q.map(|x| x.max(0.0)).norm() + q.max().min(0.0)
    }
}

fn criterion_2() -> Outcome {
    let start = Instant::now();
    let cases = check_case_patterns();
    let mut details = Vec::new();
    let mut pass = match &cases {
        Ok(c) => {
            details.push(format!("{} of 16 cases separate signs", c.len()));
            c.len() == 16
        }
        Err(e) => {
            details.push(e.clone());
            false
        }
    };
    let pi = std::f64::consts::PI;
    let (r, h, a) = (0.8, Vec3::new(0.8, 0.7, 0.6), Vec3::new(0.85, 0.7, 0.6));
    let shapes: Vec<(&str, Box<dyn Fn(&Vec3) -> f64>, f64)> = vec![
        ("sphere", Box::new(move |p: &Vec3| p.norm() - r), 4.0 / 3.0 * pi * r.powi(3)),
        ("box", Box::new(box_sdf(h)), 8.0 * h.x * h.y * h.z),
        ("ellipsoid", Box::new(move |p: &Vec3| (p.component_div(&a).norm() - 1.0) * a.min()), 4.0 / 3.0 * pi * a.x * a.y * a.z),
    ];
    let mut worst: f64 = 0.0;
    for res in [16, 32] {
        for (name, field, exact) in &shapes {
            let grid = build_uniform_grid(res).unwrap().set_sdf_from_field(|p| field(p)).unwrap();
            let mesh = marching_tetrahedra(&grid).unwrap();
            let rel = (enclosed_volume(&mesh).unwrap() - exact).abs() / exact;
            worst = worst.max(rel);
            let ok = mesh.is_watertight() && mesh.euler_characteristic() == 2 && rel < 0.02;
            if !ok {
                details.push(format!(
                    "{name} R={res}: watertight {} chi {} vol err {:.2}%",
                    mesh.is_watertight(),
                    mesh.euler_characteristic(),
                    rel * 100.0
                ));
            }
            pass &= ok;
        }
    }
    let elapsed = start.elapsed();
    details.push(format!("watertight, chi=2, worst volume error {:.2}% (<2%)", worst * 100.0));
    outcome(pass && within(elapsed, 30), format!("{}; {:.1}s (<30s)", details.join(", "), elapsed.as_secs_f64()))
}

fn surface_chamfer(a: &SurfaceMesh, b: &SurfaceMesh, eval: &EvalConfig) -> f64 {
    let pa: Vec<Vec3> = sample_surface(a, eval.samples, eval.seed).unwrap().iter().map(|s| s.point).collect();
    let pb: Vec<Vec3> = sample_surface(b, eval.samples, eval.seed ^ 0xb).unwrap().iter().map(|s| s.point).collect();
    chamfer(&pa, &pb).unwrap()
}

fn initial_grid(res: usize) -> TetGrid {
    build_uniform_grid(res).unwrap().set_sdf_from_field(|p| p.norm() - 0.3).unwrap()
}

fn criterion_3() -> (Outcome, TetGrid) {
    let target = icosphere(0.5, 3);
    let eval = EvalConfig::default();
    // The bound is frozen from the direct R=16 extraction before fitting.
    let exact = build_uniform_grid(16).unwrap().set_sdf_from_field(|p| p.norm() - 0.5).unwrap();
    let oracle = surface_chamfer(&marching_tetrahedra(&exact).unwrap(), &target, &eval);
    let bound = 5e-4_f64.min(3.0 * oracle);

    let start = Instant::now();
    let config = ShapeFitConfig { iterations: 300, ..Default::default() };
    let fit = fit_shape(&initial_grid(16), &target, &config).expect("shape fit");
    let elapsed = start.elapsed();
    let cd = surface_chamfer(&marching_tetrahedra(&fit.grid).unwrap(), &target, &eval);
    let detail = format!(
        "chamfer {cd:.3e} (<{bound:.1e}; oracle {oracle:.3e}, 3x oracle {:.3e}); {:.1}s (<300s)",
        3.0 * oracle,
        elapsed.as_secs_f64()
    );
    (outcome(cd < bound && within(elapsed, 300), detail), fit.grid)
}

fn motion_config(mode: &str, k: usize, placement: &str) -> RunConfig {
    let mut c = RunConfig::default();
    c.observation.mode = mode.into();
    c.observation.k = k;
    c.observation.placement = placement.into();
    c.motion.model = ModelKind::Gru;
    c.motion.latent = 8;
    c.motion.hidden = 16;
    c.motion.feature = 16;
    c.motion.epochs = 40;
    c.motion.optimizer = OptimizerConfig { schedule: LrSchedule::Cosine, ..OptimizerConfig::adam(3e-3) };
    c.validate().unwrap();
    c
}

fn run_motion(canonical: &TetGrid, data: &SequenceDataset, c: &RunConfig) -> (MetricsReport, Duration) {
    let start = Instant::now();
    let obs = data.observations(&c.observation_mode().unwrap()).unwrap();
    let fit = fit_motion(canonical, &obs, &c.motion_config().unwrap()).expect("motion fit");
    let predicted: Vec<SurfaceMesh> = (0..data.frame_count()).map(|t| fit.frame_surface(t).unwrap()).collect();
    let report = evaluate_run(&predicted, &fit.canonical.surface, data, &c.eval, c.to_json()).unwrap();
    (report, start.elapsed())
}

fn sequence(kind: MotionKind, amplitude: f64) -> SequenceDataset {
    generate_sequence(BaseShape::Icosphere, AnalyticMotion::new(kind, amplitude, 24.0).unwrap(), 25, 0).unwrap()
}

fn criterion_4(canonical: &TetGrid) -> Outcome {
    let data = sequence(MotionKind::Translate, 0.2);
    let (r, elapsed) = run_motion(canonical, &data, &motion_config("full", 3, "central"));
    let pass = r.mean.epe < 0.01 && r.mean.acc_r == 1.0 && within(elapsed, 900);
    outcome(
        pass,
        format!(
            "EPE {:.4} (<0.01), Acc_R {:.3} (=1.0), Acc_S {:.3}, CD {:.3e}; {:.1}s (<900s)",
            r.mean.epe,
            r.mean.acc_r,
            r.mean.acc_s,
            r.mean.cd,
            elapsed.as_secs_f64()
        ),
    )
}

fn criteria_5_and_6(canonical: &TetGrid) -> (Outcome, Outcome) {
    let data = sequence(MotionKind::RadialPulse, 0.1);
    let mut cd = BTreeMap::new();
    let mut total = Duration::ZERO;
    for (k, placement) in [(1, "central"), (3, "central"), (5, "central"), (3, "strided")] {
        let (r, elapsed) = run_motion(canonical, &data, &motion_config("slices", k, placement));
        total += elapsed;
        cd.insert((k, placement), r.mean.cd);
    }
    let (c1, c3, c5, s3) = (cd[&(1, "central")], cd[&(3, "central")], cd[&(5, "central")], cd[&(3, "strided")]);
    let pass5 = c1 > c3 && c3 > c5 && s3 <= c3 && within(total, 45 * 60);
    let five = outcome(
        pass5,
        format!(
            "CD k=1 {c1:.3e} > k=3 {c3:.3e} > k=5 {c5:.3e}; strided k=3 {s3:.3e} <= central; {:.1}s (<2700s)",
            total.as_secs_f64()
        ),
    );

    let (r, elapsed) = run_motion(canonical, &data, &motion_config("volume", 3, "central"));
    let gap = r.max.volume_abs_gap;
    let pass6 = gap < 0.005 && r.mean.cd > c3 && within(elapsed, 900);
    let six = outcome(
        pass6,
        format!(
            "max |volume gap| {gap:.4} (<0.005), CD {:.3e} > 3-slice {c3:.3e} (strided {s3:.3e}), EPE {:.3}; {:.1}s (<900s)",
            r.mean.cd,
            r.mean.epe,
            elapsed.as_secs_f64()
        ),
    );
    (five, six)
}

fn criterion_7() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut failures = 0usize;
    let cloud = |rng: &mut ChaCha8Rng, n: usize| -> Vec<Vec3> {
        (0..n).map(|_| Vec3::from_fn(|_, _| rng.gen_range(-1.0..1.0))).collect()
    };
    for i in 0..1000 {
        let (na, nb) = (rng.gen_range(1..150), rng.gen_range(1..150));
        let (mut a, b) = (cloud(&mut rng, na), cloud(&mut rng, nb));
        if i % 10 == 0 {
            // Exact duplicates exercise tie-breaking.
            a.extend_from_slice(&b[..nb.min(5)]);
        }
        let mode = if i % 2 == 0 { ChamferMode::Squared } else { ChamferMode::Euclidean };
        if chamfer_with_mode(&a, &b, mode).unwrap() != chamfer_brute_force(&a, &b, mode).unwrap() {
            failures += 1;
        }
        let index = NearestNeighborIndex::new(&b);
        if a.iter().any(|q| index.nearest(q) != brute_force_nearest(&b, q)) {
            failures += 1;
        }
        let gt: Vec<Vec3> = a.iter().map(|p| p + Vec3::from_fn(|_, _| rng.gen_range(-0.05..0.05))).collect();
        let mut sum = 0.0;
        let mut hits = [0usize; 2];
        for (p, g) in a.iter().zip(&gt) {
            let d = (p - g).norm();
            sum += d;
            hits[0] += (d < 0.025) as usize;
            hits[1] += (d < 0.05) as usize;
        }
        let n = a.len() as f64;
        if epe(&a, &gt).unwrap() != sum / n
            || accuracy(&a, &gt, 0.025).unwrap() != hits[0] as f64 / n
            || accuracy(&a, &gt, 0.05).unwrap() != hits[1] as f64 / n
        {
            failures += 1;
        }
    }
    let elapsed = start.elapsed();
    outcome(
        failures == 0 && within(elapsed, 60),
        format!("{failures} mismatches over 1000 instances (chamfer, NN index, EPE/Acc); {:.1}s (<60s)", elapsed.as_secs_f64()),
    )
}

fn read_tree(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut out = BTreeMap::new();
    for entry in std::fs::read_dir(dir).unwrap() {
        let p = entry.unwrap().path();
        out.insert(p.file_name().unwrap().to_string_lossy().into_owned(), std::fs::read(&p).unwrap());
    }
    out
}

fn criterion_8() -> Outcome {
    let bin = env!("CARGO_BIN_EXE_tetmorph");
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    let status = Command::new(bin)
        .args(["generate", "--motion", "radial-pulse", "--amp", "0.1", "--frames", "6", "--seed", "3", "--out"])
        .arg(&data)
        .output()
        .unwrap();
    assert!(status.status.success());
    let run = |threads: &str, name: &str| {
        let out = tmp.path().join(name);
        let status = Command::new(bin)
            .args(["--threads", threads, "--seed", "11", "fit-motion", "--mode", "slices", "--k", "2"])
            .args(["--res", "8", "--iters", "40", "--shape-samples", "800", "--epochs", "4", "--batch-frames", "3"])
            .args(["--latent", "4", "--hidden", "8", "--feature", "8", "--samples", "500", "--eval-samples", "1000"])
            .arg("--dataset")
            .arg(&data)
            .arg("--out")
            .arg(&out)
            .output()
            .unwrap();
        assert!(status.status.success(), "{}", String::from_utf8_lossy(&status.stderr));
        read_tree(&out)
    };
    let a = run("1", "t1");
    let b = run("8", "t8");
    let c = run("8", "t8b");
    let keys = ["loss.csv", "shape_loss.csv", "model.tmck", "grid.bin", "metrics.json"];
    let present = keys.iter().all(|k| a.contains_key(*k));
    let differing: Vec<&String> = a.keys().filter(|k| a.get(*k) != b.get(*k) || a.get(*k) != c.get(*k)).collect();
    outcome(
        present && differing.is_empty() && a.len() == b.len(),
        format!("{} result files byte-identical across --threads 1/8 and repeated runs (differing: {differing:?})", a.len()),
    )
}

fn main() {
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let wanted = |n: u32| filter.is_empty() || filter.iter().any(|f| f == &n.to_string());
    let mut results: Vec<(u32, &str, Outcome)> = Vec::new();

    if wanted(1) {
        results.push((1, "gradient fidelity", criterion_1()));
    }
    if wanted(2) {
        results.push((2, "marching tetrahedra correctness", criterion_2()));
    }
    if wanted(3) || wanted(4) || wanted(5) || wanted(6) {
        let (three, canonical) = criterion_3();
        if wanted(3) {
            results.push((3, "shape-fit recovery", three));
        }
        if wanted(4) {
            results.push((4, "motion recovery, full observation", criterion_4(&canonical)));
        }
        if wanted(5) || wanted(6) {
            let (five, six) = criteria_5_and_6(&canonical);
            if wanted(5) {
                results.push((5, "sparse-observation trend", five));
            }
            if wanted(6) {
                results.push((6, "volume-only observation", six));
            }
        }
    }
    if wanted(7) {
        results.push((7, "oracle equivalence", criterion_7()));
    }
    if wanted(8) {
        results.push((8, "determinism", criterion_8()));
    }

    results.sort_by_key(|r| r.0);
    let mut failed = 0;
    for (n, name, o) in &results {
        println!("criterion {n} [{}] {name}: {}", if o.pass { "PASS" } else { "FAIL" }, o.detail);
        failed += (!o.pass) as usize;
    }
    println!("acceptance: {} passed, {failed} failed", results.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
