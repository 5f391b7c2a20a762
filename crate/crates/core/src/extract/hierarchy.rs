use serde::{Deserialize, Serialize};

use crate::model::{LabelSheet, LabelState, Provenance};
use crate::template::LabelTemplate;

/// An edge whose child is more severe than its parent.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Violation {
    pub child: String,
    pub parent: String,
    pub child_state: LabelState,
    pub parent_state: LabelState,
}

/// Every hierarchy edge where `severity(child) > severity(parent)`.
///
/// Labels absent from the sheet are skipped; validate the sheet first.
pub fn check_hierarchy(sheet: &LabelSheet, template: &LabelTemplate) -> Vec<Violation> {
    template
        .hierarchy()
        .into_iter()
        .filter_map(|(child, parent)| {
            let c = sheet.get(&child)?;
            let p = sheet.get(&parent)?;
            (c.severity() > p.severity()).then_some(Violation {
                child,
                parent,
                child_state: c,
                parent_state: p,
            })
        })
        .collect()
}

/// Raises each parent to the maximum severity of itself and its children,
/// visiting children before parents. Marks the sheet `repaired` if anything changed.
pub fn repair_hierarchy(sheet: &LabelSheet, template: &LabelTemplate) -> LabelSheet {
    let labels = template.labels();
    let mut states: Vec<Option<LabelState>> = labels.iter().map(|l| sheet.get(l)).collect();
    for &node in template.children_first() {
        for parent in template.parents_of(node) {
            if let (Some(c), Some(p)) = (states[node], states[parent]) {
                states[parent] = Some(p.max_severity(c));
            }
        }
    }
    let mut out = sheet.clone();
    let mut changed = false;
    for (label, state) in labels.iter().zip(states) {
        if let Some(state) = state {
            if out.set(label, state) != Some(state) {
                changed = true;
            }
        }
    }
    if changed {
        out.provenance = Provenance::Repaired;
    }
    out
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;
    use crate::model::Region;
    use crate::template::TemplateRegistry;

    fn template(region: &str) -> LabelTemplate {
        TemplateRegistry::shipped().get(&Region::new(region)).unwrap().clone()
    }

    #[test]
    fn single_violation() {
        let t = template("clavicle");
        let mut s = LabelSheet::filled("r", &t, LabelState::False);
        s.set("Middle Third Fracture", LabelState::True);
        let v = check_hierarchy(&s, &t);
        assert_eq!(v.len(), 1);
        assert_eq!(v[0].child, "Middle Third Fracture");
        assert_eq!(v[0].parent, "Fracture (All Locations)");
    }

    #[test]
    fn equal_severity_is_allowed() {
        let t = template("clavicle");
        let mut s = LabelSheet::filled("r", &t, LabelState::False);
        assert!(check_hierarchy(&s, &t).is_empty());
        s.set("Middle Third Fracture", LabelState::Uncertain);
        s.set("Fracture (All Locations)", LabelState::Uncertain);
        assert!(check_hierarchy(&s, &t).is_empty());
    }

    #[test]
    fn repair_raises_parent() {
        let t = template("clavicle");
        let mut s = LabelSheet::filled("r", &t, LabelState::False);
        s.set("Lateral Third Fracture", LabelState::True);
        let r = repair_hierarchy(&s, &t);
        assert_eq!(r.get("Fracture (All Locations)"), Some(LabelState::True));
        assert_eq!(r.provenance, Provenance::Repaired);

        let mut s = LabelSheet::filled("r", &t, LabelState::False);
        s.set("Lateral Third Fracture", LabelState::Uncertain);
        let r = repair_hierarchy(&s, &t);
        assert_eq!(r.get("Fracture (All Locations)"), Some(LabelState::Uncertain));
    }

    #[test]
    fn consistent_sheet_is_a_fixed_point() {
        let t = template("clavicle");
        let mut s = LabelSheet::filled("r", &t, LabelState::False);
        s.provenance = Provenance::Adjudicated;
        s.set("Lateral Third Fracture", LabelState::True);
        s.set("Fracture (All Locations)", LabelState::True);
        assert_eq!(repair_hierarchy(&s, &t), s);
    }

    #[test]
    fn propagates_through_two_levels() {
        let t = template("elbow");
        let mut s = LabelSheet::filled("r", &t, LabelState::False);
        s.set("Radial Head - Displaced", LabelState::Uncertain);
        let r = repair_hierarchy(&s, &t);
        for l in ["Radial Head Fracture", "Radius Fracture", "Fracture (All Locations)"] {
            assert_eq!(r.get(l), Some(LabelState::Uncertain), "{l}");
        }
        assert!(check_hierarchy(&r, &t).is_empty());
    }

    fn sheet_strategy() -> impl Strategy<Value = (LabelTemplate, LabelSheet)> {
        (
            prop::sample::select(vec!["clavicle", "elbow", "thumb"]),
            prop::collection::vec(prop::sample::select(LabelState::ALL.to_vec()), 29),
        )
            .prop_map(|(region, states)| {
                let t = template(region);
                let mut s = LabelSheet::filled("r", &t, LabelState::False);
                for (l, st) in t.labels().iter().zip(states) {
                    s.set(l, st);
                }
                (t, s)
            })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(2000))]

        #[test]
        fn repair_is_clean_monotone_minimal((t, s) in sheet_strategy()) {
            let r = repair_hierarchy(&s, &t);
            prop_assert!(check_hierarchy(&r, &t).is_empty());
            for (i, label) in t.labels().iter().enumerate() {
                let before = s.get(label).unwrap();
                let after = r.get(label).unwrap();
                prop_assert!(after.severity() >= before.severity());
                // closed form: own state raised to the most severe descendant
                let expected = t
                    .descendants(i)
                    .into_iter()
                    .map(|d| s.get(&t.labels()[d]).unwrap())
                    .fold(before, LabelState::max_severity);
                prop_assert_eq!(after, expected, "{}", label);
            }
            prop_assert_eq!(r.provenance == Provenance::Repaired, r.labels != s.labels);
            prop_assert_eq!(repair_hierarchy(&r, &t).labels, r.labels);
        }
    }
}
