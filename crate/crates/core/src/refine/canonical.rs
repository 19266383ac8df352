//! Text sanitization and conjunction splitting.

use std::sync::OnceLock;

use regex::Regex;
use serde_json::json;

use super::record::TextualRecord;
use super::{ChangeAction, ChangeLog};

fn straighten(c: char) -> char {
    match c {
        '\u{2018}' | '\u{2019}' | '\u{201A}' | '\u{201B}' | '\u{2032}' | '\u{2035}' => '\'',
        '\u{201C}' | '\u{201D}' | '\u{201E}' | '\u{201F}' | '\u{2033}' | '\u{2036}' => '"',
        c => c,
    }
}

/// Straight quotes, single spaces, no leading or trailing whitespace.
pub fn sanitize_text(s: &str) -> String {
    let straight: String = s.chars().map(straighten).collect();
    straight.split_whitespace().collect::<Vec<_>>().join(" ")
}

fn hyphen_run() -> &'static Regex {
    static R: OnceLock<Regex> = OnceLock::new();
    R.get_or_init(|| Regex::new("-{2,}").expect("valid regex"))
}

fn isotope() -> &'static Regex {
    static R: OnceLock<Regex> = OnceLock::new();
    R.get_or_init(|| Regex::new(r"(^|[^\[\d])(\d+)C-labeled").expect("valid regex"))
}

/// [`sanitize_text`] plus hyphen cleanup and bracketed carbon isotopes.
/// Single hyphens inside words are left alone.
pub fn sanitize_name(s: &str) -> String {
    let mut out = sanitize_text(s);
    loop {
        let next = hyphen_run().replace_all(&out, "-").replace(" - ", " ");
        let next = sanitize_text(&next);
        if next == out {
            break;
        }
        out = next;
    }
    isotope().replace_all(&out, "${1}[${2}C]-labeled").into_owned()
}

fn clean(log: &mut ChangeLog, field: String, value: &mut String, f: fn(&str) -> String) {
    let new = f(value);
    if new != *value {
        log.push(field, ChangeAction::Sanitized, json!(value), json!(new));
        *value = new;
    }
}

fn clean_opt(log: &mut ChangeLog, field: String, value: &mut Option<String>, f: fn(&str) -> String) {
    if let Some(v) = value {
        clean(log, field, v, f);
    }
}

pub fn canonicalize(r: &mut TextualRecord, log: &mut ChangeLog) {
    let (t, n): (fn(&str) -> String, fn(&str) -> String) = (sanitize_text, sanitize_name);
    clean_opt(log, "title".into(), &mut r.title, t);
    clean_opt(log, "id".into(), &mut r.id, t);
    clean_opt(log, "iupac_name".into(), &mut r.iupac_name, n);
    let p = &mut r.procedure;
    clean(log, "procedure.paragraph".into(), &mut p.paragraph, t);
    for (i, s) in p.substances.iter_mut().enumerate() {
        let at = |f: &str| format!("procedure.substances[{i}].{f}");
        clean(log, at("content"), &mut s.content, n);
        clean_opt(log, at("amount"), &mut s.amount, t);
        clean(log, at("chemical_name"), &mut s.chemical_name, n);
        clean(log, at("role"), &mut s.role, t);
    }
    for (i, pr) in p.products.iter_mut().enumerate() {
        let at = |f: &str| format!("procedure.products[{i}].{f}");
        clean_opt(log, at("content"), &mut pr.content, n);
        clean_opt(log, at("chemical_name"), &mut pr.chemical_name, n);
        for (name, v) in [
            ("production", &mut pr.production),
            ("yield_ratio", &mut pr.yield_ratio),
            ("conversion_rate", &mut pr.conversion_rate),
            ("stereo_selectivity", &mut pr.stereo_selectivity),
            ("ee", &mut pr.ee),
            ("dr", &mut pr.dr),
            ("rr", &mut pr.rr),
            ("appearance", &mut pr.appearance),
        ] {
            clean_opt(log, at(name), v, t);
        }
    }
    for (i, st) in p.stages.iter_mut().enumerate() {
        let at = |f: &str| format!("procedure.stages[{i}].{f}");
        for (name, v) in [
            ("stage_id", &mut st.stage_id),
            ("time", &mut st.time),
            ("temperature", &mut st.temperature),
            ("atmosphere", &mut st.atmosphere),
            ("pressure", &mut st.pressure),
            ("PH", &mut st.ph),
            ("stirring_speed", &mut st.stirring_speed),
            ("vacuum_condition", &mut st.vacuum_condition),
            ("light_condition", &mut st.light_condition),
            ("cooling_heating_condition", &mut st.cooling_heating_condition),
            ("workup", &mut st.workup),
        ] {
            clean_opt(log, at(name), v, t);
        }
    }
}

/// Parts of a name joined by the standalone word "and", when there are at
/// least two and every part has a letter or digit.
pub fn split_conjunction(s: &str) -> Option<Vec<String>> {
    let parts: Vec<String> = s.split(" and ").map(|p| p.trim().to_string()).collect();
    if parts.len() < 2 || parts.iter().any(|p| !p.chars().any(char::is_alphanumeric)) {
        return None;
    }
    Some(parts)
}

fn split_fields(r: &mut TextualRecord) -> Vec<(String, &mut String)> {
    let mut out = Vec::new();
    if let Some(v) = r.iupac_name.as_mut() {
        out.push(("iupac_name".to_string(), v));
    }
    for (i, p) in r.procedure.products.iter_mut().enumerate() {
        if let Some(v) = p.chemical_name.as_mut() {
            out.push((format!("procedure.products[{i}].chemical_name"), v));
        }
    }
    out
}

/// One record per conjunct. The first splittable field (the IUPAC name,
/// then product names in order) fixes the number of copies; every field
/// that splits into that many parts is distributed across the copies.
/// Repeats until nothing splits.
pub fn split_record(r: TextualRecord, log: &mut ChangeLog) -> Vec<TextualRecord> {
    let mut probe = r.clone();
    let k = split_fields(&mut probe)
        .into_iter()
        .find_map(|(_, v)| split_conjunction(v).map(|p| p.len()));
    let Some(k) = k else { return vec![r] };
    let mut copies = vec![r; k];
    for j in 0..k {
        for (field, v) in split_fields(&mut copies[j]) {
            let Some(parts) = split_conjunction(v) else { continue };
            if parts.len() != k {
                continue;
            }
            if j == 0 {
                log.push(field, ChangeAction::Split, json!(v), json!(parts));
            }
            *v = parts[j].clone();
        }
    }
    copies.into_iter().flat_map(|c| split_record(c, log)).collect()
}
