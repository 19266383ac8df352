//! Synthetic reactions for property and acceptance tests.
//!
//! Molecules come from a palette of pairwise-disjoint 60x60 boxes, so two
//! boxes overlap (IoU well above 0.5 after a 1 px jitter) exactly when they
//! share a palette slot. Texts come from a palette whose members are far
//! apart in edit distance. That makes match decisions checkable by plain
//! multiset comparison of palette ids.
#![allow(dead_code)]

use rand::seq::SliceRandom;
use rand::Rng;
use serde_json::{json, Value};

use rxndp_core::geometry::BBox;
use rxndp_core::model::{parse_ground_truth, DiagramAnnotation, ResolvedComponent, ResolvedReaction};
use rxndp_core::prediction::OutputFormat;

pub const N_MOLS: usize = 8;
pub const TEXTS: [&str; 5] = ["NaOH, MeOH, rt", "THF, reflux", "Pd/C, H2 (1 atm)", "hv (365 nm), 24 h", "BBr3 in DCM"];
pub const WIDTH: u32 = 100 * N_MOLS as u32 + 100;
pub const HEIGHT: u32 = 200;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Item {
    Mol(usize),
    Text(usize),
}

/// Reactants, conditions, products.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Abstract {
    pub roles: [Vec<Item>; 3],
}

pub fn palette_box(i: usize) -> BBox {
    let x = 100.0 * i as f64 + 20.0;
    BBox::new(x, 40.0, x + 60.0, 100.0).unwrap()
}

pub fn jittered(i: usize, rng: &mut (impl Rng + ?Sized)) -> BBox {
    let b = palette_box(i);
    let mut d = || f64::from(rng.gen_range(-1i8..=1));
    BBox::new(b.x1 + d(), b.y1 + d(), b.x2 + d(), b.y2 + d()).unwrap()
}

/// Same text up to whitespace, or with one character substituted. Every
/// palette entry has at least 11 characters, so two variants of one entry
/// stay within 2/11 of each other.
pub fn text_variant(t: usize, rng: &mut (impl Rng + ?Sized)) -> String {
    let s = TEXTS[t];
    match rng.gen_range(0..3) {
        0 => s.to_string(),
        1 => format!("  {}  ", s.replace(' ', "   ")),
        _ => {
            let mut chars: Vec<char> = s.chars().collect();
            let k = rng.gen_range(0..chars.len());
            chars[k] = if chars[k] == 'x' { 'y' } else { 'x' };
            chars.into_iter().collect()
        }
    }
}

fn valid(a: &Abstract) -> bool {
    let has_mol = |v: &Vec<Item>| v.iter().any(|i| matches!(i, Item::Mol(_)));
    let mut all: Vec<&Item> = a.roles.iter().flatten().collect();
    let n = all.len();
    all.sort();
    all.dedup();
    has_mol(&a.roles[0]) && has_mol(&a.roles[2]) && all.len() == n
}

pub fn random_reaction(rng: &mut impl Rng) -> Abstract {
    let mut mols: Vec<usize> = (0..N_MOLS).collect();
    mols.shuffle(rng);
    let mut mols = mols.into_iter();
    let mut texts: Vec<usize> = (0..TEXTS.len()).collect();
    texts.shuffle(rng);
    let mut texts = texts.into_iter();
    let reactants: Vec<Item> = (0..rng.gen_range(1..=2)).map(|_| Item::Mol(mols.next().unwrap())).collect();
    let products: Vec<Item> = (0..rng.gen_range(1..=2)).map(|_| Item::Mol(mols.next().unwrap())).collect();
    let mut conditions = Vec::new();
    for _ in 0..rng.gen_range(0..=2) {
        if rng.gen_bool(0.5) {
            conditions.push(Item::Mol(mols.next().unwrap()));
        } else {
            conditions.push(Item::Text(texts.next().unwrap()));
        }
    }
    let mut r = Abstract {
        roles: [reactants, conditions, products],
    };
    if rng.gen_bool(0.2) {
        r.roles[0].push(Item::Text(texts.next().unwrap()));
    }
    r
}

/// One small random edit that keeps the reaction well-formed.
pub fn mutate(a: &Abstract, rng: &mut impl Rng) -> Abstract {
    for _ in 0..32 {
        let mut b = a.clone();
        let role = rng.gen_range(0..3);
        match rng.gen_range(0..4) {
            0 if !b.roles[role].is_empty() => {
                let k = rng.gen_range(0..b.roles[role].len());
                b.roles[role][k] = match b.roles[role][k] {
                    Item::Mol(_) => Item::Mol(rng.gen_range(0..N_MOLS)),
                    Item::Text(_) => Item::Text(rng.gen_range(0..TEXTS.len())),
                };
            }
            1 if !b.roles[role].is_empty() => {
                let k = rng.gen_range(0..b.roles[role].len());
                let it = b.roles[role].remove(k);
                let to = (role + rng.gen_range(1..3)) % 3;
                b.roles[to].push(it);
            }
            2 if !b.roles[role].is_empty() => {
                let k = rng.gen_range(0..b.roles[role].len());
                b.roles[role].remove(k);
            }
            _ => {
                let it = if rng.gen_bool(0.5) {
                    Item::Mol(rng.gen_range(0..N_MOLS))
                } else {
                    Item::Text(rng.gen_range(0..TEXTS.len()))
                };
                b.roles[role].push(it);
            }
        }
        if valid(&b) && b != *a {
            return b;
        }
    }
    random_reaction(rng)
}

/// Ground truths plus predictions that are mostly copies, some edited,
/// some unrelated.
pub fn instance(rng: &mut impl Rng, max_pred: usize, max_gt: usize) -> (Vec<Abstract>, Vec<Abstract>) {
    let gts: Vec<Abstract> = (0..rng.gen_range(0..=max_gt)).map(|_| random_reaction(rng)).collect();
    let preds = (0..rng.gen_range(0..=max_pred))
        .map(|_| {
            if gts.is_empty() || rng.gen_bool(0.2) {
                random_reaction(rng)
            } else {
                let g = &gts[rng.gen_range(0..gts.len())];
                if rng.gen_bool(0.35) {
                    mutate(g, rng)
                } else {
                    g.clone()
                }
            }
        })
        .collect();
    (preds, gts)
}

pub fn resolve(a: &Abstract, rng: &mut impl Rng) -> ResolvedReaction {
    let mut out = ResolvedReaction::default();
    let slots = [&mut out.reactants, &mut out.conditions, &mut out.products];
    for (items, slot) in a.roles.iter().zip(slots) {
        for it in items {
            slot.push(match *it {
                Item::Mol(i) => ResolvedComponent::Molecule(Some(jittered(i, rng))),
                Item::Text(t) => ResolvedComponent::Text(text_variant(t, rng)),
            });
        }
    }
    out
}

fn sorted(mut v: Vec<Item>) -> Vec<Item> {
    v.sort();
    v
}

fn mols(items: &[Item]) -> Vec<Item> {
    sorted(items.iter().copied().filter(|i| matches!(i, Item::Mol(_))).collect())
}

fn texts(items: &[Item]) -> Vec<Item> {
    sorted(items.iter().copied().filter(|i| matches!(i, Item::Text(_))).collect())
}

pub fn oracle_soft(p: &Abstract, g: &Abstract) -> bool {
    let merged = |a: &Abstract| mols(&[a.roles[0].clone(), a.roles[1].clone()].concat());
    mols(&p.roles[2]) == mols(&g.roles[2]) && merged(p) == merged(g)
}

pub fn oracle_hybrid(p: &Abstract, g: &Abstract, format: OutputFormat) -> bool {
    (0..3).all(|r| {
        mols(&p.roles[r]) == mols(&g.roles[r])
            && (format == OutputFormat::Bros || texts(&p.roles[r]) == texts(&g.roles[r]))
    })
}

/// Largest number of pairs over every injective assignment, by exhaustive
/// search.
pub fn brute_force_max(adj: &dyn Fn(usize, usize) -> bool, n_pred: usize, n_gt: usize) -> usize {
    fn go(p: usize, used: &mut Vec<bool>, adj: &dyn Fn(usize, usize) -> bool, n_pred: usize) -> usize {
        if p == n_pred {
            return 0;
        }
        let mut best = go(p + 1, used, adj, n_pred);
        for g in 0..used.len() {
            if !used[g] && adj(p, g) {
                used[g] = true;
                best = best.max(1 + go(p + 1, used, adj, n_pred));
                used[g] = false;
            }
        }
        best
    }
    go(0, &mut vec![false; n_gt], adj, n_pred)
}

fn gt_component(it: &Item) -> Value {
    match *it {
        Item::Mol(i) => json!({"type": "molecule", "ref": i + 1}),
        Item::Text(t) => json!({"type": "text", "value": TEXTS[t]}),
    }
}

/// Annotation over the full palette; molecule `i` has index and
/// identifier `i + 1`.
pub fn annotation(image_id: &str, gts: &[Abstract]) -> DiagramAnnotation {
    let molecules: Vec<Value> = (0..N_MOLS)
        .map(|i| {
            json!({"mol_index": i + 1, "bbox": palette_box(i).to_array(),
                   "identifiers": [(i + 1).to_string()], "is_virtual": false})
        })
        .collect();
    let reactions: Vec<Value> = gts
        .iter()
        .map(|g| {
            json!({
                "reactants": g.roles[0].iter().map(gt_component).collect::<Vec<_>>(),
                "conditions": g.roles[1].iter().map(gt_component).collect::<Vec<_>>(),
                "products": g.roles[2].iter().map(gt_component).collect::<Vec<_>>(),
            })
        })
        .collect();
    let doc = json!({"image_id": image_id, "width": WIDTH, "height": HEIGHT,
                     "molecules": molecules, "reactions": reactions});
    parse_ground_truth(doc.to_string().as_bytes()).expect("synthetic annotation is valid")
}

/// Component JSON values for one prediction; `rng` drives box jitter and
/// text variants so a fixed seed gives fixed values.
pub fn prediction_values(preds: &[Abstract], format: OutputFormat, rng: &mut impl Rng) -> Vec<[Vec<Value>; 3]> {
    preds
        .iter()
        .map(|a| {
            let role = |items: &[Item], rng: &mut dyn rand::RngCore| -> Vec<Value> {
                items
                    .iter()
                    .map(|it| match *it {
                        Item::Mol(i) => match format {
                            OutputFormat::Bros => json!(jittered(i, rng).to_array()),
                            OutputFormat::Bivp => json!(i + 1),
                            OutputFormat::Idtvp => json!((i + 1).to_string()),
                        },
                        Item::Text(t) => json!({"type": "text", "value": text_variant(t, rng)}),
                    })
                    .collect()
            };
            [role(&a.roles[0], rng), role(&a.roles[1], rng), role(&a.roles[2], rng)]
        })
        .collect()
}

pub fn raw_from_values(values: &[[Vec<Value>; 3]]) -> String {
    let list: Vec<Value> = values
        .iter()
        .map(|[r, c, p]| json!({"reactants": r, "conditions": c, "products": p}))
        .collect();
    serde_json::to_string(&list).unwrap()
}

/// Reaction order and within-role component order shuffled.
pub fn shuffled(values: &[[Vec<Value>; 3]], rng: &mut impl Rng) -> Vec<[Vec<Value>; 3]> {
    let mut out = values.to_vec();
    out.shuffle(rng);
    for r in &mut out {
        for role in r.iter_mut() {
            role.shuffle(rng);
        }
    }
    out
}
