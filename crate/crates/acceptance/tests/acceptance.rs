//! Release acceptance suite. Prints one PASS/FAIL line per criterion and
//! exits non-zero if any criterion fails.
//!
//!     cargo test -p rxndp-acceptance --test acceptance

#[path = "../../core/tests/common/mod.rs"]
mod common;

use std::collections::{BTreeSet, HashMap};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::sync::Arc;
use std::time::Instant;

use image::{DynamicImage, GrayImage, RgbImage};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};

use common::*;
use rxndp_core::evaluate::evaluate_corpus;
use rxndp_core::geometry::{iou, BBox};
use rxndp_core::idmap::IdentifierMap;
use rxndp_core::lines::PredictionRecord;
use rxndp_core::matching::{match_sets, reaction_matches_hybrid, reaction_matches_soft, Counts, MatchConfig, Thresholds};
use rxndp_core::model::{DiagramAnnotation, ResolvedComponent, ResolvedReaction};
use rxndp_core::order::{analyze_records, percent, rate};
use rxndp_core::prediction::OutputFormat;
use rxndp_core::refine::refine_stream;
use rxndp_core::render::{
    encode_png, render_all, DrawRequest, JobMolecule, Method, Placement, RenderConfig, RenderError, RenderJob, Slot,
};
use rxndp_core::reward::{sample_reward, RewardSpec};
use rxndp_core::text::normalized_edit_distance;
use rxndp_service::{serve, GtStore, ServiceState};

const FORMATS: [OutputFormat; 3] = [OutputFormat::Bros, OutputFormat::Bivp, OutputFormat::Idtvp];

type Outcome = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn fixture_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures")
}

fn resolve_all(items: &[Abstract], rng: &mut ChaCha8Rng) -> Vec<ResolvedReaction> {
    items.iter().map(|a| resolve(a, rng)).collect()
}

// ---------------------------------------------------------------- matching

fn shifted(x: f64) -> ResolvedReaction {
    let mol = |b: BBox| ResolvedComponent::Molecule(Some(b));
    ResolvedReaction {
        reactants: vec![mol(BBox::new(100.0 + x, 0.0, 200.0 + x, 100.0).unwrap())],
        conditions: vec![],
        products: vec![mol(BBox::new(500.0, 0.0, 600.0, 100.0).unwrap())],
    }
}

fn matching_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(0xacce_0001);
    let t = Thresholds::default();
    let start = Instant::now();
    let mut discrepancies = 0;
    let mut pairs = 0;
    for k in 0..500 {
        let (preds, gts) = instance(&mut rng, 4, 4);
        let rp = resolve_all(&preds, &mut rng);
        let rg = resolve_all(&gts, &mut rng);
        let f = FORMATS[k % 3];

        let soft = match_sets(&rp, &rg, &MatchConfig::soft(t));
        let by_palette = brute_force_max(&|p, g| oracle_soft(&preds[p], &gts[g]), preds.len(), gts.len());
        let by_predicate = brute_force_max(&|p, g| reaction_matches_soft(&rp[p], &rg[g], &t), preds.len(), gts.len());
        discrepancies += usize::from(soft.pairs.len() != by_palette) + usize::from(soft.pairs.len() != by_predicate);

        let hybrid = match_sets(&rp, &rg, &MatchConfig::hybrid(t, f));
        let by_palette = brute_force_max(&|p, g| oracle_hybrid(&preds[p], &gts[g], f), preds.len(), gts.len());
        let by_predicate =
            brute_force_max(&|p, g| reaction_matches_hybrid(&rp[p], &rg[g], f, &t), preds.len(), gts.len());
        discrepancies += usize::from(hybrid.pairs.len() != by_palette) + usize::from(hybrid.pairs.len() != by_predicate);

        for &(p, g) in soft.pairs.iter() {
            discrepancies += usize::from(!oracle_soft(&preds[p], &gts[g]));
        }
        for &(p, g) in hybrid.pairs.iter() {
            discrepancies += usize::from(!oracle_hybrid(&preds[p], &gts[g], f));
        }
        pairs += soft.pairs.len() + hybrid.pairs.len();
    }
    let secs = start.elapsed().as_secs_f64();

    // Greedy first-fit pairs p0-g0 and then strands p1; the maximum is 3.
    // Reactant boxes of width 100 shifted by s overlap with IoU
    // (100 - s) / (100 + s), which exceeds 0.5 exactly when s < 100/3.
    let px = [15.0, -15.0, 45.0];
    let gx = [0.0, 30.0, 75.0];
    let adj = |p: usize, g: usize| f64::abs(px[p] - gx[g]) < 100.0 / 3.0;
    let mut greedy = 0;
    let mut used = [false; 3];
    for p in 0..3 {
        if let Some(g) = (0..3).find(|&g| !used[g] && adj(p, g)) {
            used[g] = true;
            greedy += 1;
        }
    }
    let crafted = match_sets(
        &px.map(shifted),
        &gx.map(shifted),
        &MatchConfig::soft(t),
    );
    ensure(greedy == 2, || format!("crafted relation is not adversarial: greedy finds {greedy}"))?;
    ensure(brute_force_max(&adj, 3, 3) == 3, || "crafted relation has no perfect matching".into())?;
    ensure(crafted.pairs.len() == 3, || format!("crafted 3x3: {} pairs, want 3", crafted.pairs.len()))?;
    ensure(discrepancies == 0, || format!("{discrepancies} discrepancies"))?;
    ensure(secs < 10.0, || format!("took {secs:.2} s"))?;
    Ok(format!(
        "500 instances, {pairs} matched pairs, 0 discrepancies, {secs:.2} s; crafted 3x3 greedy 2 -> 3"
    ))
}

// ------------------------------------------------------------------ reward

fn reward_permutation() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(0xacce_0002);
    let spec = RewardSpec::balanced();
    let mut distinct = BTreeSet::new();
    for k in 0..1000 {
        let (preds, gts) = instance(&mut rng, 5, 5);
        let gt = annotation("img", &gts);
        let map = IdentifierMap::from_annotation(&gt);
        let f = FORMATS[k % 3];
        let values = prediction_values(&preds, f, &mut rng);
        let a = sample_reward(&raw_from_values(&values), &gt, &map, f, &spec);
        let b = sample_reward(&raw_from_values(&shuffled(&values, &mut rng)), &gt, &map, f, &spec);
        ensure(a.reward.to_bits() == b.reward.to_bits(), || {
            format!("case {k}: {} before shuffle, {} after", a.reward, b.reward)
        })?;
        distinct.insert(a.reward.to_bits());
    }
    Ok(format!("1000 cases bit-identical, {} distinct reward values", distinct.len()))
}

/// F1 from a palette-level maximum matching; both sides empty is perfect.
fn oracle_f1(preds: &[Abstract], gts: &[Abstract], adj: &dyn Fn(usize, usize) -> bool) -> f64 {
    let tp = brute_force_max(adj, preds.len(), gts.len()) as u64;
    let (fp, fn_) = (preds.len() as u64 - tp, gts.len() as u64 - tp);
    if tp + fp + fn_ == 0 {
        return 1.0;
    }
    (2 * tp) as f64 / (2 * tp + fp + fn_) as f64
}

fn reward_endpoints() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(0xacce_0003);
    let balanced = RewardSpec::balanced();
    let soft_only: RewardSpec = "1:0".parse()?;
    let hybrid_only: RewardSpec = "0:1".parse()?;
    for k in 0..300 {
        let (_, gts) = instance(&mut rng, 0, 5);
        let gt = annotation("img", &gts);
        let map = IdentifierMap::from_annotation(&gt);
        let f = FORMATS[k % 3];
        let raw = raw_from_values(&prediction_values(&gts, f, &mut rng));
        let r = sample_reward(&raw, &gt, &map, f, &balanced);
        ensure(r.reward == 1.0, || format!("perfect prediction {k} scored {}", r.reward))?;
    }
    let garbage = [
        "",
        "I could not find any reactions.",
        "[{\"reactants\": [1], \"products\": [2]",
        "{\"reactants\": [1], \"products\": [2]}",
        "[{\"reactants\": [], \"products\": [2]}]",
        "```json\n[1, 2, 3]\n```",
        "null",
    ];
    let (_, gts) = instance(&mut rng, 0, 3);
    let gt = annotation("img", &gts);
    let map = IdentifierMap::from_annotation(&gt);
    for (i, raw) in garbage.iter().enumerate() {
        for f in FORMATS {
            let r = sample_reward(raw, &gt, &map, f, &balanced);
            ensure(r.reward.to_bits() == 0.0f64.to_bits() && !r.parse_ok, || {
                format!("garbage #{i} ({f:?}) scored {} parse_ok={}", r.reward, r.parse_ok)
            })?;
        }
    }
    for k in 0..500 {
        let (preds, gts) = instance(&mut rng, 4, 4);
        let gt = annotation("img", &gts);
        let map = IdentifierMap::from_annotation(&gt);
        let f = FORMATS[k % 3];
        let raw = raw_from_values(&prediction_values(&preds, f, &mut rng));
        let want_soft = oracle_f1(&preds, &gts, &|p, g| oracle_soft(&preds[p], &gts[g]));
        let want_hybrid = oracle_f1(&preds, &gts, &|p, g| oracle_hybrid(&preds[p], &gts[g], f));
        let s = sample_reward(&raw, &gt, &map, f, &soft_only).reward;
        let h = sample_reward(&raw, &gt, &map, f, &hybrid_only).reward;
        ensure(s.to_bits() == want_soft.to_bits(), || format!("case {k}: 1:0 gave {s}, soft F1 {want_soft}"))?;
        ensure(h.to_bits() == want_hybrid.to_bits(), || {
            format!("case {k}: 0:1 gave {h}, hybrid F1 {want_hybrid}")
        })?;
    }
    Ok(format!(
        "300 perfect -> 1.0, {} garbage -> 0.0, 500 ratio cases bit-equal to oracle F1",
        garbage.len() * 3
    ))
}

// ----------------------------------------------------------------- metrics

fn chain(a: usize, b: usize) -> Abstract {
    Abstract {
        roles: [vec![Item::Mol(a)], vec![], vec![Item::Mol(b)]],
    }
}

fn record(image_id: &str, preds: &[Abstract], rng: &mut ChaCha8Rng) -> PredictionRecord {
    PredictionRecord {
        sample_id: None,
        image_id: image_id.to_string(),
        format: OutputFormat::Bivp,
        raw: raw_from_values(&prediction_values(preds, OutputFormat::Bivp, rng)),
    }
}

/// Textbook Wagner-Fischer over chars.
fn dp_edit_distance(a: &str, b: &str) -> usize {
    let (a, b): (Vec<char>, Vec<char>) = (a.chars().collect(), b.chars().collect());
    let mut d = vec![vec![0usize; b.len() + 1]; a.len() + 1];
    for (i, row) in d.iter_mut().enumerate() {
        row[0] = i;
    }
    for j in 0..=b.len() {
        d[0][j] = j;
    }
    for i in 1..=a.len() {
        for j in 1..=b.len() {
            let sub = d[i - 1][j - 1] + usize::from(a[i - 1] != b[j - 1]);
            d[i][j] = sub.min(d[i - 1][j] + 1).min(d[i][j - 1] + 1);
        }
    }
    d[a.len()][b.len()]
}

/// Unit cells covered by an integer box on a 30x30 grid.
fn cells(b: [u32; 4]) -> BTreeSet<(u32, u32)> {
    let mut s = BTreeSet::new();
    for y in 0..30 {
        for x in 0..30 {
            if x >= b[0] && x < b[2] && y >= b[1] && y < b[3] {
                s.insert((x, y));
            }
        }
    }
    s
}

fn metric_fixtures() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(0xacce_0004);
    let (r1, r2, r3, r4) = (chain(0, 1), chain(2, 3), chain(4, 5), chain(6, 7));
    let gts = vec![
        annotation("a", &[r1.clone(), r2.clone()]),
        annotation("b", &[r1.clone(), r2.clone()]),
        annotation("c", &[r1.clone()]),
    ];
    let preds = vec![
        record("a", &[r1.clone()], &mut rng),
        record("b", &[r2.clone(), r3, r1.clone()], &mut rng),
        record("c", &[r4], &mut rng),
    ];
    let report = evaluate_corpus(&gts, &preds, &HashMap::new(), Thresholds::default()).map_err(|e| e.to_string())?;
    let want = [(1, 0, 1), (2, 1, 0), (0, 1, 1)];
    for (img, &(tp, fp, fn_)) in report.per_image.iter().zip(&want) {
        let c = Counts { tp, fp, fn_ };
        ensure(img.soft == c && img.hybrid == c, || {
            format!("{}: soft {:?} hybrid {:?}, want {c:?}", img.image_id, img.soft, img.hybrid)
        })?;
    }
    for (name, m) in [("soft", &report.soft), ("hybrid", &report.hybrid)] {
        ensure(m.precision == 0.6 && m.recall == 0.6 && m.f1 == 0.6, || {
            format!("{name}: P={} R={} F1={}", m.precision, m.recall, m.f1)
        })?;
    }

    let b = |x1, y1, x2, y2| BBox::new(x1, y1, x2, y2).unwrap();
    let base = b(0.0, 0.0, 10.0, 10.0);
    ensure(iou(&base, &base) == 1.0, || "iou identity".into())?;
    ensure(iou(&base, &b(20.0, 20.0, 30.0, 30.0)) == 0.0, || "iou disjoint".into())?;
    let (ca, cb) = (cells([0, 0, 10, 10]), cells([5, 0, 15, 10]));
    let inter = ca.intersection(&cb).count();
    let union = ca.union(&cb).count();
    let pixel = inter as f64 / union as f64;
    let got = iou(&base, &b(5.0, 0.0, 15.0, 10.0));
    ensure(inter == 50 && union == 150 && got.to_bits() == pixel.to_bits(), || {
        format!("iou shifted: {got}, pixel oracle {inter}/{union}")
    })?;

    ensure(normalized_edit_distance("NaOH", "NaOH") == 0.0, || "ned identity".into())?;
    let d = dp_edit_distance("kitten", "sitting");
    let want = d as f64 / 7.0;
    let got = normalized_edit_distance("kitten", "sitting");
    ensure(d == 3 && got.to_bits() == want.to_bits(), || format!("kitten/sitting: {got}, dp {d}/7"))?;
    ensure(normalized_edit_distance("", "x") == 1.0, || "ned empty vs x".into())?;
    Ok("corpus P=R=F1=0.6 under both criteria; iou 1, 0, 50/150; ned 0, 3/7, 1".into())
}

// ------------------------------------------------------------------ refine

fn json_lines<T: serde::Serialize>(items: &[T]) -> String {
    items.iter().map(|i| serde_json::to_string(i).unwrap() + "\n").collect()
}

fn refine_golden() -> Outcome {
    let dir = fixture_dir().join("refine");
    let read = |name: &str| std::fs::read_to_string(dir.join(name)).map_err(|e| format!("{name}: {e}"));
    let input = read("input.jsonl")?;
    let lines: Vec<&str> = input.lines().collect();
    let out = refine_stream(&lines);

    let standard: String = out.standard.iter().map(|s| s.to_json_line() + "\n").collect();
    let drops = json_lines(&out.dropped);
    let changelog = json_lines(&out.changelog);
    for (name, got) in [
        ("standard.golden.jsonl", &standard),
        ("drops.golden.jsonl", &drops),
        ("changelog.golden.jsonl", &changelog),
    ] {
        let want = read(name)?;
        ensure(*got == want, || {
            let line = got.lines().zip(want.lines()).position(|(a, b)| a != b);
            format!("{name} differs (first differing line {line:?})")
        })?;
    }

    let s = out.stats;
    let non_blank = lines.iter().filter(|l| !l.trim().is_empty()).count();
    let drop_lines: BTreeSet<usize> = out.dropped.iter().map(|d| d.line).collect();
    ensure(s.inputs == non_blank && s.inputs == s.dropped + s.survivors, || format!("funnel {s:?}"))?;
    ensure(drop_lines.len() == s.dropped && s.standards == out.standard.len() && s.standards >= s.survivors, || {
        format!("funnel {s:?}, {} distinct dropped lines", drop_lines.len())
    })?;

    let reasons: BTreeSet<String> = out
        .dropped
        .iter()
        .flat_map(|d| d.reasons.iter().map(|r| serde_json::to_value(r).unwrap().as_str().unwrap().to_string()))
        .collect();
    let all_reasons = [
        "malformed",
        "procedure_missing",
        "paragraph_too_short",
        "substances_empty",
        "reactants_empty",
        "products_empty",
        "no_identifier",
        "idx_discontinuous",
        "extraneous_substance_keys",
        "missing_substance_keys",
        "role_invalid",
        "yield_exceeds_100",
        "keyword_invalid",
        "role_unassignable",
        "substance_unnamed",
    ];
    let missing: Vec<_> = all_reasons.iter().filter(|r| !reasons.contains(**r)).collect();
    ensure(missing.is_empty(), || format!("fixture never triggers {missing:?}"))?;
    let actions: BTreeSet<String> = out
        .changelog
        .iter()
        .map(|c| serde_json::to_value(c.action).unwrap().as_str().unwrap().to_string())
        .collect();
    ensure(actions.len() == 8, || format!("fixture exercises only {actions:?}"))?;
    ensure(standard.contains("[13C]-labeled") && changelog.contains("\"split\""), || {
        "isotope rewrite or split not exercised".into()
    })?;

    let again_lines: Vec<&str> = standard.lines().collect();
    let again = refine_stream(&again_lines);
    let again_std: String = again.standard.iter().map(|s| s.to_json_line() + "\n").collect();
    ensure(again.dropped.is_empty() && again.changelog.is_empty() && again_std == standard, || {
        format!(
            "not a fixpoint: {} drops, {} changes, output equal: {}",
            again.dropped.len(),
            again.changelog.len(),
            again_std == standard
        )
    })?;
    Ok(format!(
        "{} inputs -> {} dropped + {} survivors -> {} records; byte-exact; fixpoint",
        s.inputs, s.dropped, s.survivors, s.standards
    ))
}

// ---------------------------------------------------------------- renderer

/// A synthetic raster: white background, pure black ink.
struct Raster {
    w: u32,
    h: u32,
    px: Vec<u8>,
}

impl Raster {
    fn new(w: u32, h: u32, level: u8) -> Self {
        Raster {
            w,
            h,
            px: vec![level; (w * h) as usize],
        }
    }

    fn fill(&mut self, x1: i64, y1: i64, x2: i64, y2: i64, level: u8) {
        for y in y1.max(0)..y2.min(i64::from(self.h)) {
            for x in x1.max(0)..x2.min(i64::from(self.w)) {
                self.px[(y as u32 * self.w + x as u32) as usize] = level;
            }
        }
    }

    fn outline(&mut self, b: &BBox) {
        let (x1, y1, x2, y2) = (b.x1 as i64, b.y1 as i64, b.x2 as i64, b.y2 as i64);
        self.fill(x1, y1, x2, y1 + 2, 0);
        self.fill(x1, y2 - 2, x2, y2, 0);
        self.fill(x1, y1, x1 + 2, y2, 0);
        self.fill(x2 - 2, y1, x2, y2, 0);
        for k in 0..(x2 - x1).min(y2 - y1) {
            self.fill(x1 + k, y1 + k, x1 + k + 1, y1 + k + 1, 0);
        }
    }

    /// Black pixels inside the half-open integer rect.
    fn ink(&self, x: i64, y: i64, w: i64, h: i64) -> u64 {
        let mut n = 0;
        for yy in y..y + h {
            for xx in x..x + w {
                n += u64::from(self.px[(yy as u32 * self.w + xx as u32) as usize] == 0);
            }
        }
        n
    }

    fn image(&self, rgb: bool) -> DynamicImage {
        let gray = GrayImage::from_raw(self.w, self.h, self.px.clone()).unwrap();
        if rgb {
            DynamicImage::ImageRgb8(RgbImage::from_fn(self.w, self.h, |x, y| {
                let v = gray.get_pixel(x, y)[0];
                image::Rgb([v, v, v])
            }))
        } else {
            DynamicImage::ImageLuma8(gray)
        }
    }
}

fn overlap(a: &BBox, b: &BBox) -> bool {
    a.x1.max(b.x1) < a.x2.min(b.x2) && a.y1.max(b.y1) < a.y2.min(b.y2)
}

/// Rect is inside the raster, clear of every box in `blocked`, and has at
/// most `threshold` of its pixels black.
fn viable(r: &Raster, x: i64, y: i64, w: i64, h: i64, blocked: &[BBox], threshold: f64) -> bool {
    if x < 0 || y < 0 || x + w > i64::from(r.w) || y + h > i64::from(r.h) {
        return false;
    }
    let rect = BBox::new(x as f64, y as f64, (x + w) as f64, (y + h) as f64).unwrap();
    if blocked.iter().any(|b| overlap(b, &rect)) {
        return false;
    }
    r.ink(x, y, w, h) as f64 <= threshold * (w * h) as f64
}

fn random_fixture(seed: u64) -> (Raster, RenderJob, bool) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (w, h) = (rng.gen_range(220..320), rng.gen_range(160..240));
    let mut r = Raster::new(w, h, 255);
    let mut boxes: Vec<BBox> = Vec::new();
    let want = rng.gen_range(2..=4);
    for _ in 0..200 {
        if boxes.len() == want {
            break;
        }
        let (bw, bh) = (rng.gen_range(40..70) as f64, rng.gen_range(40..70) as f64);
        let x = rng.gen_range(5.0..f64::from(w) - bw - 5.0).round();
        let y = rng.gen_range(5.0..f64::from(h) - bh - 5.0).round();
        let b = BBox::new(x, y, x + bw, y + bh).unwrap();
        let clear = |o: &BBox| x - 12.0 >= o.x2 || o.x1 >= x + bw + 12.0 || y - 12.0 >= o.y2 || o.y1 >= y + bh + 12.0;
        if boxes.iter().all(clear) {
            boxes.push(b);
        }
    }
    let clutter = if seed % 5 == 0 { 40 } else { rng.gen_range(3..15) };
    for _ in 0..clutter {
        let (x, y) = (rng.gen_range(0..w) as i64, rng.gen_range(0..h) as i64);
        r.fill(x, y, x + rng.gen_range(5..40), y + rng.gen_range(5..40), 0);
    }
    for b in &boxes {
        r.fill(b.x1 as i64, b.y1 as i64, b.x2 as i64, b.y2 as i64, 255);
        r.outline(b);
        if seed % 3 == 0 {
            // Ink right under the structure, where the first slot would go.
            r.fill(b.x1 as i64 - 10, b.y2 as i64 + 2, b.x2 as i64 + 10, b.y2 as i64 + 30, 0);
        }
    }
    for i in 0..r.px.len() {
        if rng.gen_bool(0.002) {
            r.px[i] = 0;
        }
    }
    let molecules = boxes
        .iter()
        .enumerate()
        .map(|(i, b)| JobMolecule {
            mol_index: i as i64 + 1,
            bbox: *b,
        })
        .collect();
    let draw = (0..boxes.len())
        .map(|i| DrawRequest {
            mol_index: i as i64 + 1,
            text: format!("{}{}", rng.gen_range(1..40), ["", "a", "b"][rng.gen_range(0..3)]),
        })
        .collect();
    let job = RenderJob {
        image_id: format!("fx{seed}"),
        molecules,
        existing_labels: vec![],
        draw,
    };
    (r, job, seed % 2 == 1)
}

fn anchor_rect(p: &Placement) -> (i64, i64, i64, i64) {
    let a = p.anchor;
    (a.x1 as i64, a.y1 as i64, (a.x2 - a.x1) as i64, (a.y2 - a.y1) as i64)
}

fn check_placements(r: &Raster, job: &RenderJob, placements: &[Placement], threshold: f64) -> Result<(), String> {
    let mols: Vec<BBox> = job.molecules.iter().map(|m| m.bbox).collect();
    for (i, p) in placements.iter().enumerate() {
        let (x, y, w, h) = anchor_rect(p);
        ensure(
            f64::from(x as i32) == p.anchor.x1 && f64::from(y as i32) == p.anchor.y1,
            || format!("{}: non-integer anchor {:?}", job.image_id, p.anchor),
        )?;
        ensure(x >= 0 && y >= 0 && x + w <= i64::from(r.w) && y + h <= i64::from(r.h), || {
            format!("{}: anchor {:?} out of bounds", job.image_id, p.anchor)
        })?;
        let ink = r.ink(x, y, w, h);
        ensure(ink as f64 <= threshold * (w * h) as f64, || {
            format!("{}: {ink} ink pixels under {:?}", job.image_id, p.anchor)
        })?;
        ensure(!mols.iter().any(|m| overlap(m, &p.anchor)), || {
            format!("{}: {:?} covers a molecule", job.image_id, p.anchor)
        })?;
        ensure(!placements[..i].iter().any(|q| overlap(&q.anchor, &p.anchor)), || {
            format!("{}: {:?} overlaps an earlier label", job.image_id, p.anchor)
        })?;
    }
    Ok(())
}

/// Every changed pixel lies inside some placement.
fn changes_confined(before: &Raster, after: &DynamicImage, placements: &[Placement]) -> bool {
    let after = after.to_luma8();
    (0..before.h).all(|y| {
        (0..before.w).all(|x| {
            let same = after.get_pixel(x, y)[0] == before.px[(y * before.w + x) as usize];
            same || placements.iter().any(|p| {
                let (px, py, w, h) = anchor_rect(p);
                let (x, y) = (i64::from(x), i64::from(y));
                x >= px && x < px + w && y >= py && y < py + h
            })
        })
    })
}

/// Rank of an even offset in the documented scan: origin, then rings of
/// radius 2, 4, ...; each ring from its top-left corner clockwise.
fn spiral_rank(dx: i64, dy: i64) -> Option<(i64, i64)> {
    if dx % 2 != 0 || dy % 2 != 0 {
        return None;
    }
    let r = dx.abs().max(dy.abs());
    if r == 0 {
        return Some((0, 0));
    }
    let n = r; // offsets per edge at step 2
    let pos = if dy == -r && dx < r {
        (dx + r) / 2
    } else if dx == r && dy < r {
        n + (dy + r) / 2
    } else if dy == r && dx > -r {
        2 * n + (r - dx) / 2
    } else {
        3 * n + (r - dy) / 2
    };
    Some((r, pos))
}

fn renderer_suite() -> Outcome {
    let cfg = RenderConfig::default();
    let (mut priority, mut spiral, mut failed) = (0, 0, 0);
    for seed in 0..20 {
        let (r, job, rgb) = random_fixture(seed);
        let img = r.image(rgb);
        let a = render_all(&img, &job, &cfg);
        let b = render_all(&img, &job, &cfg);
        check_placements(&r, &job, &a.placements, cfg.ink_threshold)?;
        ensure(a.placements.len() + a.errors.len() == job.draw.len(), || {
            format!("{}: requests unaccounted for", job.image_id)
        })?;
        ensure(changes_confined(&r, &a.image, &a.placements), || {
            format!("{}: pixels changed outside label rects", job.image_id)
        })?;
        let (pa, pb) = (encode_png(&a.image).map_err(|e| e.to_string())?, encode_png(&b.image).map_err(|e| e.to_string())?);
        ensure(pa == pb && a.placements == b.placements, || format!("{}: runs differ", job.image_id))?;
        priority += a.placements.iter().filter(|p| p.method == Method::PrioritySlot).count();
        spiral += a.placements.iter().filter(|p| p.method == Method::SpiralFallback).count();
        failed += a.errors.len();
    }
    ensure(spiral > 0 && priority > 0, || format!("fixtures too easy: {priority} slot, {spiral} spiral"))?;

    // Saturated.
    let r = Raster::new(200, 200, 0);
    let job = RenderJob {
        image_id: "saturated".into(),
        molecules: vec![JobMolecule {
            mol_index: 1,
            bbox: BBox::new(80.0, 80.0, 120.0, 120.0).unwrap(),
        }],
        existing_labels: vec![],
        draw: vec![DrawRequest {
            mol_index: 1,
            text: "1".into(),
        }],
    };
    let out = render_all(&r.image(false), &job, &cfg);
    ensure(
        out.placements.is_empty() && matches!(out.errors.as_slice(), [RenderError::PlacementImpossible { .. }]),
        || format!("saturated: {:?}", out.errors),
    )?;

    let slot_detail = right_middle_oracle()?;
    let gap_detail = spiral_gap_oracle()?;
    Ok(format!(
        "20 fixtures: {priority} slot + {spiral} spiral placements, {failed} impossible, PNGs stable; \
         saturated -> placement_impossible; {slot_detail}; {gap_detail}"
    ))
}

fn right_middle_oracle() -> Outcome {
    let mut r = Raster::new(300, 200, 255);
    let mol = BBox::new(120.0, 70.0, 180.0, 130.0).unwrap();
    r.fill(0, 0, 300, 70, 0);
    r.fill(0, 130, 300, 200, 0);
    r.outline(&mol);
    let cfg = RenderConfig {
        glyph_height: Some(10),
        ..RenderConfig::default()
    };
    let job = RenderJob {
        image_id: "right".into(),
        molecules: vec![JobMolecule { mol_index: 1, bbox: mol }],
        existing_labels: vec![],
        draw: vec![DrawRequest {
            mol_index: 1,
            text: "12".into(),
        }],
    };
    let out = render_all(&r.image(false), &job, &cfg);
    let p = out.placements.first().ok_or("right-middle fixture: nothing placed")?;
    let (_, _, w, h) = anchor_rect(p);
    let pad = h as f64;
    let (wf, hf) = (w as f64, h as f64);
    let (cx, cy) = ((mol.x1 + mol.x2) / 2.0, (mol.y1 + mol.y2) / 2.0);
    let (below, above) = (mol.y2 + pad, mol.y1 - pad - hf);
    let (right, left) = (mol.x2 + pad, mol.x1 - pad - wf);
    let slots = [
        (Slot::BelowCenter, cx - wf / 2.0, below),
        (Slot::AboveCenter, cx - wf / 2.0, above),
        (Slot::RightMiddle, right, cy - hf / 2.0),
        (Slot::LeftMiddle, left, cy - hf / 2.0),
        (Slot::BottomRight, right, below),
        (Slot::BottomLeft, left, below),
        (Slot::TopRight, right, above),
        (Slot::TopLeft, left, above),
    ];
    let first = slots
        .iter()
        .map(|&(s, x, y)| (s, x.round() as i64, y.round() as i64))
        .find(|&(_, x, y)| viable(&r, x, y, w, h, &[mol], cfg.ink_threshold))
        .ok_or("right-middle fixture: oracle finds no slot")?;
    ensure(first.0 == Slot::RightMiddle, || format!("fixture misbuilt: oracle picks {:?}", first.0))?;
    ensure(
        p.method == Method::PrioritySlot
            && p.slot == Some(first.0)
            && anchor_rect(p) == (first.1, first.2, w, h),
        || format!("placed {:?} {:?} at {:?}, oracle {first:?}", p.method, p.slot, p.anchor),
    )?;
    Ok("right-middle matches slot scan".into())
}

/// All-black raster with white pockets; the molecule sits at the centre.
fn pocket_fixture(pockets: &[(i64, i64, i64, i64)], glyph: u32) -> (Raster, RenderJob, RenderConfig) {
    let mut r = Raster::new(240, 240, 0);
    for &(x, y, w, h) in pockets {
        r.fill(x, y, x + w, y + h, 255);
    }
    let mol = BBox::new(100.0, 100.0, 141.0, 140.0).unwrap();
    let job = RenderJob {
        image_id: "pocket".into(),
        molecules: vec![JobMolecule { mol_index: 1, bbox: mol }],
        existing_labels: vec![],
        draw: vec![DrawRequest {
            mol_index: 1,
            text: "12".into(),
        }],
    };
    let cfg = RenderConfig {
        glyph_height: Some(glyph),
        ..RenderConfig::default()
    };
    (r, job, cfg)
}

fn spiral_gap_oracle() -> Outcome {
    // Gap: a 20x11 pocket up and to the right of the molecule.
    let (r, job, cfg) = pocket_fixture(&[(150, 60, 20, 11)], 8);
    let mol = job.molecules[0].bbox;
    let out = render_all(&r.image(false), &job, &cfg);
    let p = out.placements.first().ok_or_else(|| format!("gap fixture: {:?}", out.errors))?;
    let (_, _, w, h) = anchor_rect(p);
    let (cx, cy) = ((mol.x1 + mol.x2) / 2.0, (mol.y1 + mol.y2) / 2.0);
    let (x0, y0) = (cx - w as f64 / 2.0, cy - h as f64 / 2.0);
    ensure(x0.fract() == 0.0 && y0.fract() == 0.0, || "gap fixture misbuilt: fractional origin".into())?;
    let (x0, y0) = (x0 as i64, y0 as i64);
    let cap = (3.0 * ((mol.x2 - mol.x1).powi(2) + (mol.y2 - mol.y1).powi(2)).sqrt()).floor() as i64;
    let mut viable_rects = 0;
    let mut best: Option<((i64, i64), (i64, i64))> = None;
    for y in 0..240 {
        for x in 0..240 {
            if !viable(&r, x, y, w, h, &[mol], cfg.ink_threshold) {
                continue;
            }
            viable_rects += 1;
            let Some(rank) = spiral_rank(x - x0, y - y0) else { continue };
            if rank.0 <= cap && best.map_or(true, |(b, _)| rank < b) {
                best = Some((rank, (x, y)));
            }
        }
    }
    let (rank, (bx, by)) = best.ok_or("gap fixture: grid scan finds no reachable rect")?;
    ensure(
        p.method == Method::SpiralFallback && (p.anchor.x1 as i64, p.anchor.y1 as i64) == (bx, by),
        || format!("placed {:?} at {:?}, grid oracle ({bx}, {by}) ring {}", p.method, p.anchor, rank.0),
    )?;

    // Shrinking: the only pocket fits the minimum glyph height and no more.
    let (r, job, cfg) = pocket_fixture(&[(152, 66, 17, 8)], 12);
    let out = render_all(&r.image(false), &job, &cfg);
    let p = out.placements.first().ok_or_else(|| format!("shrink fixture: {:?}", out.errors))?;
    ensure(
        p.method == Method::SpiralFallback && p.glyph_height == 8 && anchor_rect(p) == (152, 66, 17, 8),
        || format!("shrink fixture: {:?} h={} at {:?}", p.method, p.glyph_height, p.anchor),
    )?;
    Ok(format!(
        "spiral gap matches grid scan ({viable_rects} viable rects, first at ring {}); font shrinks 12 -> 8",
        rank.0
    ))
}

// ---------------------------------------------------------------- analyzer

fn distinct_reactions(n: usize, rng: &mut ChaCha8Rng) -> Vec<Abstract> {
    let mut out: Vec<Abstract> = Vec::new();
    while out.len() < n {
        let r = random_reaction(rng);
        if out
            .iter()
            .all(|o| !oracle_hybrid(o, &r, OutputFormat::Bivp) && !oracle_hybrid(&r, o, OutputFormat::Bivp))
        {
            out.push(r);
        }
    }
    out
}

/// Components shuffled inside their roles; reaction order kept.
fn within_role_shuffle(values: &mut [[Vec<Value>; 3]], rng: &mut ChaCha8Rng) {
    for r in values.iter_mut() {
        for role in r.iter_mut() {
            role.shuffle(rng);
        }
    }
}

fn analyzer_recovery() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(0xacce_0007);
    let multi = 50;
    let mut found = Vec::new();
    for injected in [0usize, 10, 20] {
        let mut gts: Vec<DiagramAnnotation> = Vec::new();
        let mut preds = Vec::new();
        let mut order: Vec<usize> = (0..multi).collect();
        order.shuffle(&mut rng);
        let victims: BTreeSet<usize> = order[..injected].iter().copied().collect();
        let (mut rxn_total, mut rxn_errors) = (0, 0);
        let mut push = |id: String, gt: Vec<Abstract>, pred: Vec<Abstract>, rng: &mut ChaCha8Rng| {
            let f = if rng.gen_bool(0.5) { OutputFormat::Bivp } else { OutputFormat::Idtvp };
            let mut values = prediction_values(&pred, f, rng);
            within_role_shuffle(&mut values, rng);
            gts.push(annotation(&id, &gt));
            preds.push(PredictionRecord {
                sample_id: None,
                image_id: id,
                format: f,
                raw: raw_from_values(&values),
            });
        };
        for i in 0..multi {
            let n = rng.gen_range(2..=4);
            let gt = distinct_reactions(n, &mut rng);
            let mut pred = gt.clone();
            if victims.contains(&i) {
                pred.rotate_left(1);
                rxn_errors += n;
            }
            rxn_total += n;
            push(format!("m{i}"), gt, pred, &mut rng);
        }
        for i in 0..10 {
            let gt = distinct_reactions(1, &mut rng);
            rxn_total += 1;
            push(format!("s{i}"), gt.clone(), gt, &mut rng);
        }
        for i in 0..8 {
            let gt = distinct_reactions(3, &mut rng);
            let mut pred = gt.clone();
            pred.rotate_left(1);
            if i % 2 == 0 {
                pred.pop();
            } else {
                pred.push(distinct_reactions(1, &mut rng).remove(0));
            }
            push(format!("x{i}"), gt, pred, &mut rng);
        }
        let rep = analyze_records(&gts, &preds, &HashMap::new(), Thresholds::default());
        let want_rate = injected as f64 / multi as f64;
        ensure(
            rep.image_total == multi
                && rep.image_errors == injected
                && rep.image_rate == want_rate
                && rep.reaction_total == rxn_total
                && rep.reaction_errors == rxn_errors
                && rep.excluded_single_reaction_images == 10
                && rep.perfect == multi + 10,
            || format!("injected {injected}/{multi}: {rep:?}"),
        )?;
        found.push(percent(rep.image_rate));
    }
    let cases = [(500, 3882, "12.88"), (2538, 31300, "8.11"), (272, 5833, "4.66"), (3131, 20992, "14.92")];
    for (e, t, want) in cases {
        let got = percent(rate(e, t));
        ensure(got == want, || format!("{e}/{t} -> {got}, want {want}"))?;
    }
    Ok(format!(
        "injected image rates recovered as {}%; 500/3882 -> 12.88, 2538/31300 -> 8.11",
        found.join("%, ")
    ))
}

// ----------------------------------------------------------------- service

fn format_name(f: OutputFormat) -> &'static str {
    match f {
        OutputFormat::Bros => "bros",
        OutputFormat::Bivp => "bivp",
        OutputFormat::Idtvp => "idtvp",
    }
}

fn service_contract() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(0xacce_0008);
    let images: Vec<(DiagramAnnotation, Vec<Abstract>)> = (0..100)
        .map(|i| {
            let (_, gts) = instance(&mut rng, 0, 4);
            (annotation(&format!("img-{i}"), &gts), gts)
        })
        .collect();
    let mut samples = Vec::new();
    let mut expected = Vec::new();
    let spec = RewardSpec::balanced();
    for k in 0..512 {
        let (gt, abstracts) = &images[rng.gen_range(0..images.len())];
        let f = FORMATS[k % 3];
        let mut preds = Vec::new();
        for a in abstracts.iter().filter(|_| rng.gen_bool(0.85)).cloned().collect::<Vec<_>>() {
            preds.push(if rng.gen_bool(0.3) { mutate(&a, &mut rng) } else { a });
        }
        let raw = if k % 25 == 0 {
            "no reactions here".to_string()
        } else {
            raw_from_values(&shuffled(&prediction_values(&preds, f, &mut rng), &mut rng))
        };
        let map = IdentifierMap::from_annotation(gt);
        expected.push(sample_reward(&raw, gt, &map, f, &spec).reward);
        samples.push(json!({"sample_id": format!("s{k}"), "image_id": gt.image_id,
                            "format": format_name(f), "raw": raw}));
    }
    let body = json!({ "samples": samples }).to_string();

    let state = Arc::new(ServiceState::new(spec, 512));
    state.set_store(GtStore::from_annotations(images.into_iter().map(|(a, _)| a).collect()));
    let rt = tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .build()
        .map_err(|e| e.to_string())?;
    let (status, elapsed, resp) = rt.block_on(async {
        let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.map_err(|e| e.to_string())?;
        let base = format!("http://{}", listener.local_addr().map_err(|e| e.to_string())?);
        tokio::spawn(serve(listener, state));
        let client = reqwest::Client::new();
        let health = client.get(format!("{base}/v1/health")).send().await.map_err(|e| e.to_string())?;
        let health: Value = serde_json::from_slice(&health.bytes().await.map_err(|e| e.to_string())?)
            .map_err(|e| e.to_string())?;
        ensure(health["status"] == "ready" && health["loaded_gt_count"] == 100, || {
            format!("health {health}")
        })?;
        let start = Instant::now();
        let resp = client
            .post(format!("{base}/v1/reward"))
            .header("content-type", "application/json")
            .body(body)
            .send()
            .await
            .map_err(|e| e.to_string())?;
        let status = resp.status().as_u16();
        let bytes = resp.bytes().await.map_err(|e| e.to_string())?;
        let elapsed = start.elapsed().as_secs_f64();
        let v: Value = serde_json::from_slice(&bytes).map_err(|e| e.to_string())?;
        Ok::<_, String>((status, elapsed, v))
    })?;
    ensure(status == 200, || format!("status {status}: {resp}"))?;
    let rewards = resp["rewards"].as_array().ok_or("no rewards array")?;
    ensure(rewards.len() == 512, || format!("{} rewards", rewards.len()))?;
    let mut mismatches = 0;
    for (k, (got, want)) in rewards.iter().zip(&expected).enumerate() {
        let got = got.as_f64().unwrap_or(f64::NAN);
        mismatches += usize::from(got.to_bits() != want.to_bits());
        mismatches += usize::from(resp["details"][k]["sample_id"] != format!("s{k}").as_str());
    }
    ensure(mismatches == 0, || format!("{mismatches} rewards differ from library calls"))?;
    ensure(elapsed < 2.0, || format!("batch took {elapsed:.3} s"))?;
    let mean = expected.iter().sum::<f64>() / expected.len() as f64;
    Ok(format!(
        "512 samples over 100 images in {:.0} ms, all rewards bit-equal (mean {mean:.4})",
        elapsed * 1000.0
    ))
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 8] = [
        ("matching oracle equivalence", matching_oracle),
        ("reward permutation invariance", reward_permutation),
        ("reward endpoints", reward_endpoints),
        ("metric fixtures", metric_fixtures),
        ("refinement golden suite", refine_golden),
        ("renderer occlusion suite", renderer_suite),
        ("serialization analyzer recovery", analyzer_recovery),
        ("service contract", service_contract),
    ];
    let mut failed = 0;
    for (name, check) in criteria {
        let result = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Err(format!("panicked: {msg}"))
        });
        match result {
            Ok(detail) => println!("PASS  {name}: {detail}"),
            Err(why) => {
                failed += 1;
                println!("FAIL  {name}: {why}");
            }
        }
    }
    println!("{} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
