//! End-to-end acceptance checks. Each criterion prints one PASS/FAIL line.

mod common;

use std::io::Write;
use std::path::Path;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use common::{brute_force_pointing, random_dump, random_layer};
use groundkit::geometry::{
    cell_center, cell_id_to_bounds, covering_extremities, extremity_bbox, point_in_bbox, transform_to_original, BBox,
    GridSpec, Point,
};
use groundkit::harness::{
    run_matrix, score, synth_benchmark, BenchmarkSet, EvalRecord, FailureKind, GroundingSample, MatrixOptions,
    Platform, ResponseCache, SynthConfig,
};
use groundkit::methods::{parse_grid_ids, parse_point, MethodConfig};
use groundkit::model_client::{ConstantResponder, FixedResponder, ModelEndpoint, OpenAiClient, PerfectReader, VisionModel};
use groundkit::overlay::crop_geometry;
use groundkit::pointing_game::{pointing_game_score, AttentionDump, DumpMeta, Interp};

type Outcome = Result<String, String>;

/// Writes straight to the process stdout so the line survives output capture.
fn report(name: &str, outcome: Outcome) {
    let line = match &outcome {
        Ok(detail) => format!("PASS {name}: {detail}\n"),
        Err(detail) => format!("FAIL {name}: {detail}\n"),
    };
    let mut out = std::io::stdout().lock();
    out.write_all(line.as_bytes()).unwrap();
    out.flush().unwrap();
    if let Err(detail) = outcome {
        panic!("{name} failed: {detail}");
    }
}

fn check(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn p1() -> Outcome {
    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for case in 0..1000 {
        let w = rng.gen_range(50..=4096u32);
        let h = rng.gen_range(50..=4096u32);
        let g = GridSpec::new(rng.gen_range(2..=16), rng.gen_range(2..=16), w, h).map_err(|e| e.to_string())?;
        let mut area = 0.0;
        for id in 1..=g.cell_count() {
            let b = cell_id_to_bounds(&g, id).map_err(|e| e.to_string())?;
            area += b.area();
            check(point_in_bbox(cell_center(&g, id).unwrap(), &b), || format!("case {case}: center of {id} outside"))?;
        }
        check(area == f64::from(w) * f64::from(h), || format!("case {case}: cells cover {area}, image {w}x{h}"))?;

        let x0 = rng.gen_range(0.0..f64::from(w - 1));
        let y0 = rng.gen_range(0.0..f64::from(h - 1));
        let target = BBox::new(x0, y0, rng.gen_range(x0 + 1.0..=f64::from(w)), rng.gen_range(y0 + 1.0..=f64::from(h)))
            .map_err(|e| e.to_string())?;
        let ids = covering_extremities(&g, &target);
        let cover = extremity_bbox(&g, &ids).map_err(|e| e.to_string())?;
        check(cover.contains_box(&target), || format!("case {case}: {cover:?} misses {target:?}"))?;
    }
    let elapsed = started.elapsed();
    check(elapsed < Duration::from_secs(5), || format!("took {elapsed:?}"))?;
    Ok(format!("1000 grids tiled and covered in {elapsed:.2?}"))
}

fn p2() -> Outcome {
    let g = GridSpec::new(8, 8, 800, 600).unwrap();
    let c = cell_center(&g, 1).unwrap();
    check((c.x, c.y) == (50.0, 37.5), || format!("cell 1 center {c:?}"))?;

    let crop = crop_geometry(800, 600, &BBox::new(100.0, 200.0, 300.0, 300.0).unwrap(), 512).map_err(|e| e.to_string())?;
    check((crop.width, crop.height) == (200, 100), || format!("crop {}x{}", crop.width, crop.height))?;
    check((crop.out_width, crop.out_height) == (1024, 512), || format!("out {}x{}", crop.out_width, crop.out_height))?;
    check((crop.transform.scale - 5.12).abs() < 1e-12, || format!("scale {}", crop.transform.scale))?;
    let back = transform_to_original(Point::new(512.0, 256.0), &crop.transform);
    check((back.x, back.y) == (200.0, 250.0), || format!("crop center maps to {back:?}"))?;

    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst = 0.0f64;
    for _ in 0..1000 {
        let (w, h) = (rng.gen_range(64..=4000u32), rng.gen_range(64..=4000u32));
        let x0 = rng.gen_range(0.0..f64::from(w) - 8.0);
        let y0 = rng.gen_range(0.0..f64::from(h) - 8.0);
        let b = BBox::new(x0, y0, rng.gen_range(x0 + 4.0..=f64::from(w)), rng.gen_range(y0 + 4.0..=f64::from(h))).unwrap();
        let geo = crop_geometry(w, h, &b, rng.gen_range(128..=1024)).map_err(|e| e.to_string())?;
        let p = Point::new(
            rng.gen_range(f64::from(geo.x)..f64::from(geo.x + geo.width)),
            rng.gen_range(f64::from(geo.y)..f64::from(geo.y + geo.height)),
        );
        let q = transform_to_original(geo.transform.forward(p), &geo.transform);
        worst = worst.max((q.x - p.x).abs()).max((q.y - p.y).abs());
    }
    check(worst <= 0.5, || format!("round trip error {worst}"))?;
    Ok(format!("cell centers and crop scale exact; worst round trip error {worst:.2e} px"))
}

fn p3() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut scoring = Duration::ZERO;
    for case in 0..1000 {
        let layers = rng.gen_range(1..=3);
        let dump = random_dump(&mut rng, layers);
        let m = dump.meta().clone();
        let x0 = rng.gen_range(0..m.image_w) as f64;
        let y0 = rng.gen_range(0..m.image_h) as f64;
        let gt = BBox::new(x0, y0, rng.gen_range(x0..=m.image_w as f64), rng.gen_range(y0..=m.image_h as f64)).unwrap();

        let started = Instant::now();
        let got = pointing_game_score(&dump, &gt, Interp::Nearest).map_err(|e| e.to_string())?;
        scoring += started.elapsed();
        let (hit, points) = brute_force_pointing(&dump, &gt);
        check(got.hit == hit && got.per_layer_points == points, || {
            format!("case {case}: got {:?} / {:?}, reference {hit} / {points:?}", got.hit, got.per_layer_points)
        })?;
        check(got.hit == got.per_layer.iter().any(|&h| h), || format!("case {case}: union disagrees with layers"))?;

        let extended = dump
            .clone()
            .with_layer(random_layer(&mut rng, m.heads, m.image_token_count))
            .map_err(|e| e.to_string())?;
        let more = pointing_game_score(&extended, &gt, Interp::Nearest).map_err(|e| e.to_string())?;
        check(!got.hit || more.hit, || format!("case {case}: extra layer lost a hit"))?;
    }

    // a single hot cell lands the peak inside that cell's pixel footprint
    for cell in 0..12usize {
        let meta = DumpMeta {
            layers: 1,
            heads: 2,
            grid_h: 3,
            grid_w: 4,
            t_star: 12,
            total_tokens: 13,
            image_token_count: 12,
            image_w: 333,
            image_h: 250,
            dtype: "f32le".into(),
            model_id: "footprint".into(),
        };
        let mut row = vec![0.01f32; 12];
        row[cell] = 0.6;
        let dump = AttentionDump::new(meta, vec![[row.clone(), row].concat()]).unwrap();
        let (gx, gy) = ((cell % 4) as f64, (cell / 4) as f64);
        let foot = BBox::new(gx * 333.0 / 4.0, gy * 250.0 / 3.0, (gx + 1.0) * 333.0 / 4.0, (gy + 1.0) * 250.0 / 3.0).unwrap();
        let r = pointing_game_score(&dump, &foot, Interp::Nearest).map_err(|e| e.to_string())?;
        check(r.hit, || format!("cell {cell}: peak {:?} outside {foot:?}", r.per_layer_points))?;
    }
    check(scoring < Duration::from_secs(30), || format!("scoring took {scoring:?}"))?;
    Ok(format!("1000 dumps match the per-pixel reference; scoring took {scoring:.2?}"))
}

fn p4(dir: &Path) -> Outcome {
    let bench = synth_benchmark(&SynthConfig::default(), &dir.join("synth")).map_err(|e| e.to_string())?;
    check(bench.samples.len() == 64, || format!("{} samples", bench.samples.len()))?;
    check(bench.center_hits == 16, || format!("{} targets hold the center", bench.center_hits))?;
    let set = BenchmarkSet { name: "synth".into(), samples: bench.samples };
    let cache = ResponseCache::open(dir.join("cache")).map_err(|e| e.to_string())?;
    let opts = MatrixOptions::new(dir.join("out"));

    let perfect = PerfectReader::new();
    let mark_grid: MethodConfig = "mark-grid".parse().unwrap();
    let res = run_matrix(std::slice::from_ref(&set), &[&perfect], &[mark_grid], &cache, &opts).map_err(|e| e.to_string())?;
    let mg = res.cells[0].summary.summary.accuracy;
    check(format!("{mg:.2}") == "100.00", || format!("mark-grid perfect reader {mg:.2}"))?;

    let center = ConstantResponder::new("(512, 384)");
    let direct: MethodConfig = "direct".parse().unwrap();
    let res = run_matrix(std::slice::from_ref(&set), &[&center], &[direct], &cache, &opts).map_err(|e| e.to_string())?;
    let acc = res.cells[0].summary.summary.accuracy;
    let expected = 100.0 * bench.center_hits as f64 / 64.0;
    check(acc == expected, || format!("center click {acc:.2}, expected {expected:.2}"))?;
    Ok(format!("mark-grid perfect {mg:.2}, center click {acc:.2}"))
}

fn sample(i: usize, gt: BBox, platform: Platform) -> GroundingSample {
    GroundingSample {
        id: format!("r{i}"),
        image: "unused.png".into(),
        instruction: "tap".into(),
        gt,
        platform,
        source: "acceptance".into(),
    }
}

fn p5(dir: &Path) -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for round in 0..50 {
        let n = rng.gen_range(1..=80);
        let mut samples = Vec::new();
        let mut records = Vec::new();
        let (mut hits, mut parse, mut transport) = (0usize, 0usize, 0usize);
        for i in 0..n {
            let (l, t) = (rng.gen_range(0.0..500.0f64), rng.gen_range(0.0..500.0f64));
            let (r, b) = (l + rng.gen_range(1.0..200.0), t + rng.gen_range(1.0..200.0));
            let platform = [Platform::Mobile, Platform::Desktop, Platform::Web][i % 3];
            let s = sample(i, BBox::new(l, t, r, b).unwrap(), platform);
            let rec = match rng.gen_range(0..10) {
                0 => {
                    parse += 1;
                    EvalRecord::failed(&s, "d", "m", FailureKind::Parse, "no point".into())
                }
                1 => {
                    transport += 1;
                    EvalRecord::failed(&s, "d", "m", FailureKind::Transport, "timeout".into())
                }
                _ => {
                    let (x, y) = (rng.gen_range(0.0..800.0), rng.gen_range(0.0..800.0));
                    if l <= x && x <= r && t <= y && y <= b {
                        hits += 1;
                    }
                    EvalRecord::scored(&s, "d", "m", Point::new(x, y))
                }
            };
            samples.push(s);
            records.push(rec);
        }
        let s = score(&records, &samples).map_err(|e| e.to_string())?;
        let expected = 100.0 * hits as f64 / n as f64;
        check(s.hits == hits && (s.accuracy - expected).abs() < 1e-9, || {
            format!("round {round}: {} hits / {:.4}%, counted {hits} / {expected:.4}%", s.hits, s.accuracy)
        })?;
        check(s.parse_failures == parse && s.transport_failures == transport, || format!("round {round}: failure counts"))?;
        let per: usize = s.per_platform.values().map(|p| p.hits).sum();
        check(per == hits, || format!("round {round}: per-platform hits {per}"))?;
    }

    let cfg = SynthConfig { n_samples: 12, width: 480, height: 360, ..SynthConfig::default() };
    let bench = synth_benchmark(&cfg, &dir.join("synth")).map_err(|e| e.to_string())?;
    let set = BenchmarkSet { name: "rerun".into(), samples: bench.samples };
    let methods: Vec<MethodConfig> = ["direct", "mark-grid"].iter().map(|m| m.parse().unwrap()).collect();
    let model = PerfectReader::new();
    let run = |out: &str| {
        let cache = ResponseCache::open(dir.join("cache")).map_err(|e| e.to_string())?;
        let mut opts = MatrixOptions::new(dir.join(out));
        opts.concurrency = 1;
        let res = run_matrix(std::slice::from_ref(&set), &[&model], &methods, &cache, &opts).map_err(|e| e.to_string())?;
        let bytes = std::fs::read(dir.join(out).join("summaries.json")).map_err(|e| e.to_string())?;
        Ok::<_, String>((res.stats(), bytes))
    };
    let (first, a) = run("first")?;
    let (second, b) = run("second")?;
    check(first.new_calls > 0, || "first run made no calls".into())?;
    check(second.new_calls == 0, || format!("rerun made {} new calls", second.new_calls))?;
    check(a == b, || "summaries differ between runs".into())?;
    Ok(format!(
        "scores match independent counts; rerun made 0 new calls ({} cached), summaries identical",
        second.cache_hits
    ))
}

fn p6(dir: &Path) -> Outcome {
    let (w, h) = (1000u32, 800u32);
    let points: &[(&str, Option<(f64, f64)>)] = &[
        ("(120, 340)", Some((120.0, 340.0))),
        ("[120,340]", Some((120.0, 340.0))),
        ("Click at (120.5, 340.25).", Some((120.5, 340.25))),
        ("x=120, y=340", Some((120.0, 340.0))),
        ("x: 120 y: 340", Some((120.0, 340.0))),
        ("{\"x\": 120, \"y\": 340}", Some((120.0, 340.0))),
        ("X = 7; Y = 9", Some((7.0, 9.0))),
        ("120, 340", Some((120.0, 340.0))),
        ("The button is located at 120,340 in the screenshot", Some((120.0, 340.0))),
        ("```json\n{\"x\": 64, \"y\": 32}\n```", Some((64.0, 32.0))),
        ("```\n(64, 32)\n```", Some((64.0, 32.0))),
        ("(0.5, 0.25)", Some((500.0, 200.0))),
        ("[0.1, 0.9]", Some((100.0, 720.0))),
        ("(1, 1)", Some((999.0, 799.0))),
        ("(900, 900)", Some((900.0, 720.0))),
        ("(1200, 50)", Some((999.0, 50.0))),
        ("x=10, y=20 but maybe (30, 40)", Some((10.0, 20.0))),
        ("I can't help with that.", None),
        ("Sorry, I cannot identify the element.", None),
        ("", None),
        ("The element is not visible on screen.", None),
        ("version 1.2", None),
    ];
    for (raw, want) in points {
        let got = parse_point(raw, w, h).ok().map(|p| (p.x, p.y));
        check(got == *want, || format!("parse_point({raw:?}) = {got:?}, expected {want:?}"))?;
    }
    let ids: &[(&str, Option<[u32; 4]>)] = &[
        ("leftmost: 10, topmost: 3, rightmost: 12, bottommost: 27", Some([10, 3, 12, 27])),
        ("Leftmost cell 10\nTopmost cell 3\nRightmost cell 12\nBottommost cell 27", Some([10, 3, 12, 27])),
        ("bottom: 27, right: 12, top: 3, left: 10", Some([10, 3, 12, 27])),
        ("{\"leftmost\": 5, \"topmost\": 5, \"rightmost\": 6, \"bottommost\": 13}", Some([5, 5, 6, 13])),
        ("```\nleftmost=1 topmost=1 rightmost=2 bottommost=9\n```", Some([1, 1, 2, 9])),
        ("10, 3, 12, 27", Some([10, 3, 12, 27])),
        ("[10, 3, 12, 27]", Some([10, 3, 12, 27])),
        ("leftmost: 10, topmost: 3, rightmost: 12", None),
        ("leftmost: 0, topmost: 3, rightmost: 12, bottommost: 27", None),
        ("leftmost: 65, topmost: 3, rightmost: 12, bottommost: 27", None),
        ("10, 3, 12", None),
        ("I cannot see the target.", None),
    ];
    for (raw, want) in ids {
        let got = parse_grid_ids(raw, 64).ok().map(|e| e.as_array());
        check(got == *want, || format!("parse_grid_ids({raw:?}) = {got:?}, expected {want:?}"))?;
    }
    let corpus = points.len() + ids.len();

    let cfg = SynthConfig { n_samples: 4, width: 320, height: 240, ..SynthConfig::default() };
    let bench = synth_benchmark(&cfg, &dir.join("synth")).map_err(|e| e.to_string())?;
    let set = BenchmarkSet { name: "refusal".into(), samples: bench.samples };
    let refuser = FixedResponder::new(["I can't help with that."; 4]);
    let cache = ResponseCache::open(dir.join("cache")).map_err(|e| e.to_string())?;
    let res = run_matrix(&[set], &[&refuser], &["direct".parse().unwrap()], &cache, &MatrixOptions::new(dir.join("out")))
        .map_err(|e| e.to_string())?;
    let s = &res.cells[0].summary.summary;
    check(s.total == 4 && s.hits == 0 && s.parse_failures == 4, || format!("refusals scored as {s:?}"))?;
    check(res.cells[0].records.iter().all(|r| r.failure_reason.as_deref().is_some_and(|m| m.contains("can't help"))), || {
        "failure reason lost the raw response".into()
    })?;
    Ok(format!("{corpus} parser cases; refusals recorded as parse-failure misses"))
}

#[test]
fn p1_grid_geometry() {
    report("P1 grid tiling and covering", p1());
}

#[test]
fn p2_cell_centers_and_crops() {
    report("P2 cell centers and crop transforms", p2());
}

#[test]
fn p3_pointing_game() {
    report("P3 pointing game", p3());
}

#[test]
fn p4_synthetic_benchmark() {
    let dir = tempfile::tempdir().unwrap();
    report("P4 synthetic benchmark accuracies", p4(dir.path()));
}

#[test]
fn p5_scoring_and_cache() {
    let dir = tempfile::tempdir().unwrap();
    report("P5 scoring and cached reruns", p5(dir.path()));
}

#[test]
fn p6_response_parsing() {
    let dir = tempfile::tempdir().unwrap();
    report("P6 response parsing", p6(dir.path()));
}

/// Needs GROUND_BASE_URL, GROUND_MODEL and the key in GROUND_API_KEY.
#[test]
#[ignore = "calls a live model endpoint"]
fn p7_live_endpoint() {
    let outcome = (|| {
        let model_name = std::env::var("GROUND_MODEL").map_err(|_| "GROUND_MODEL is not set".to_string())?;
        let client = OpenAiClient::new(ModelEndpoint::new(model_name)).map_err(|e| e.to_string())?;
        let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
        let cfg = SynthConfig { n_samples: 4, ..SynthConfig::default() };
        let bench = synth_benchmark(&cfg, dir.path()).map_err(|e| e.to_string())?;
        let set = BenchmarkSet { name: "live".into(), samples: bench.samples };
        let cache = ResponseCache::open(dir.path().join("cache")).map_err(|e| e.to_string())?;
        let methods: Vec<MethodConfig> = ["direct", "mark-grid"].iter().map(|m| m.parse().unwrap()).collect();
        let models: [&dyn VisionModel; 1] = [&client];
        let res = run_matrix(&[set], &models, &methods, &cache, &MatrixOptions::new(dir.path().join("out")))
            .map_err(|e| e.to_string())?;
        for cell in &res.cells {
            let s = &cell.summary.summary;
            check(s.transport_failures == 0, || format!("{}: {} transport failures", cell.summary.method_label, s.transport_failures))?;
        }
        let accs: Vec<String> = res.cells.iter().map(|c| format!("{} {:.2}", c.summary.method_label, c.summary.summary.accuracy)).collect();
        Ok(accs.join(", "))
    })();
    report("P7 live endpoint", outcome);
}
