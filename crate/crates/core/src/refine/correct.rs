//! Repairs applied to records that passed validation.

use serde_json::json;

use super::canonical::sanitize_name;
use super::record::{TextualRecord, ROLES};
use super::{ChangeAction, ChangeLog, DropReason};

fn role_slot(role: &str) -> Option<usize> {
    ROLES.iter().position(|(r, _)| *r == role.trim())
}

/// Fills empty chemical names and makes the four role arrays an exact
/// partition of the substance indices.
///
/// Array membership beats the `role` attribute, except that an index listed
/// in several arrays stays in the one its attribute names (or the first of
/// reactants, catalyst, reagents, solvent). An index in no array joins the
/// array its attribute names.
pub fn autocorrect(r: &mut TextualRecord, log: &mut ChangeLog) -> Result<(), DropReason> {
    let p = &mut r.procedure;
    let n = p.substances.len() as i64;

    for (i, s) in p.substances.iter_mut().enumerate() {
        if sanitize_name(&s.chemical_name).is_empty() && !s.content.trim().is_empty() {
            let field = format!("procedure.substances[{i}].chemical_name");
            log.push(field, ChangeAction::FilledChemicalName, json!(s.chemical_name), json!(s.content));
            s.chemical_name = s.content.clone();
        }
        if sanitize_name(&s.chemical_name).is_empty() {
            return Err(DropReason::SubstanceUnnamed);
        }
    }

    for slot in 0..ROLES.len() {
        let name = ROLES[slot].1;
        let arr = p.role_array_mut(slot);
        let mut kept: Vec<i64> = Vec::with_capacity(arr.len());
        for &idx in arr.iter() {
            let field = format!("procedure.{name}");
            if !(0..n).contains(&idx) {
                log.push(field, ChangeAction::RemovedDanglingPointer, json!(idx), json!(null));
            } else if kept.contains(&idx) {
                log.push(field, ChangeAction::RemovedDuplicatePointer, json!(idx), json!(null));
            } else {
                kept.push(idx);
            }
        }
        *arr = kept;
    }
    for (si, st) in p.stages.iter_mut().enumerate() {
        let before = st.substances.len();
        let field = format!("procedure.stages[{si}].substances");
        let mut kept: Vec<i64> = Vec::with_capacity(before);
        for &idx in &st.substances {
            if !(0..n).contains(&idx) {
                log.push(field.clone(), ChangeAction::RemovedDanglingPointer, json!(idx), json!(null));
            } else if kept.contains(&idx) {
                log.push(field.clone(), ChangeAction::RemovedDuplicatePointer, json!(idx), json!(null));
            } else {
                kept.push(idx);
            }
        }
        st.substances = kept;
    }

    for idx in 0..n {
        let i = idx as usize;
        let attr = role_slot(&p.substances[i].role);
        let member: Vec<usize> = (0..ROLES.len()).filter(|&k| p.role_array(k).contains(&idx)).collect();
        let home = match (member.as_slice(), attr) {
            ([], None) => return Err(DropReason::RoleUnassignable),
            ([], Some(a)) => {
                p.role_array_mut(a).push(idx);
                log.push(format!("procedure.{}", ROLES[a].1), ChangeAction::AppendedToRoleArray, json!(null), json!(idx));
                a
            }
            ([only], _) => *only,
            (many, Some(a)) if many.contains(&a) => a,
            (many, _) => many[0],
        };
        for &k in &member {
            if k != home {
                p.role_array_mut(k).retain(|&x| x != idx);
                log.push(format!("procedure.{}", ROLES[k].1), ChangeAction::RemovedFromRoleArray, json!(idx), json!(null));
            }
        }
        if attr != Some(home) {
            let field = format!("procedure.substances[{i}].role");
            let new = ROLES[home].0;
            log.push(field, ChangeAction::RoleRewritten, json!(p.substances[i].role), json!(new));
            p.substances[i].role = new.to_string();
        }
    }

    if p.reactants.is_empty() {
        return Err(DropReason::ReactantsEmpty);
    }
    Ok(())
}
