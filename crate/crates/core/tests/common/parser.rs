//! Template phrasings and synonym groups of both shipped corpora.

use codetect::semparse::{conflate_synonyms, RuleSet, Tagged};

pub const KITCHEN_TEMPLATES: &[(&str, &str)] = &[
    ("person carry box rightwards put it near bowl", "moveHorizontal(box) ∧ nearEnd(box,bowl)"),
    ("person carry box leftwards put it near bowl", "moveHorizontal(box) ∧ nearEnd(box,bowl)"),
    ("person carry box to right near bowl", "moveHorizontal(box) ∧ nearEnd(box,bowl)"),
    ("person carry box to left near bowl", "moveHorizontal(box) ∧ nearEnd(box,bowl)"),
    ("person put box on right near bowl", "moveHorizontal(box) ∧ nearEnd(box,bowl)"),
    ("person move box from left to right near bowl", "moveHorizontal(box) ∧ nearEnd(box,bowl)"),
    ("person carry box to left put it near bowl", "moveHorizontal(box) ∧ nearEnd(box,bowl)"),
    ("person move cabbage out of bowl", "inStart(cabbage,bowl) ∧ awayFrom(cabbage,bowl)"),
    ("person take cabbage out of bowl put it to right", "inStart(cabbage,bowl) ∧ awayFrom(cabbage,bowl)"),
    ("person take cabbage out of bowl", "inStart(cabbage,bowl) ∧ awayFrom(cabbage,bowl)"),
    ("person take cabbage from bowl put it on counter", "inStart(cabbage,bowl) ∧ awayFrom(cabbage,bowl)"),
];

pub const CAD_TEMPLATES: &[(&str, &str)] = &[
    ("person put cup into table", "moveDown(cup)"),
    ("person put cup on table", "moveDown(cup)"),
    ("person put down cup", "moveDown(cup)"),
    ("person put cup down on table", "moveDown(cup)"),
    ("person put cup down", "moveDown(cup)"),
    ("person pour water into bowl", "rotate(water) ∧ over(water,bowl)"),
    ("person pick up water pour it into bowl", "rotate(water) ∧ over(water,bowl)"),
    ("person pick up pour water into bowl", "rotate(water) ∧ over(water,bowl)"),
];

pub const KITCHEN_SYNONYMS: &[&[&str]] = &[
    &["gas can", "gasoline can", "gasoline tank"],
    &["put", "set", "place"],
    &["pick up", "lift"],
    &["milk", "almond milk", "carton"],
    &["cooler", "ice chest"],
    &["table", "tennis table", "ping pong table"],
    &["ground", "driveway", "floor"],
    &["bowl", "dish", "plate"],
    &["bucket", "pail"],
    &["cabbage", "vegetable"],
    &["box", "cardboard box"],
    &["person", "man", "boy"],
    &["leftwards", "leftward"],
    &["out", "outside"],
    &["into", "inside of", "inside"],
    &["towards", "toward"],
    &["on", "onto"],
];

pub const CAD_SYNONYMS: &[&[&str]] = &[
    &["put", "set", "stack", "place"],
    &["pick up", "raise", "lift"],
    &["drink", "take drink", "pick up drink"],
    &["take", "remove"],
    &["cup", "container", "mug", "tin"],
    &["cereal", "cereal box", "box"],
    &["water", "liquid"],
    &["ground", "floor"],
    &["on", "onto"],
];

/// The mouthwash sentence and its conjunction, under either corpus.
pub const MOUTHWASH: (&str, &str) = (
    "The person put the mouthwash into the sink near the cabbage",
    "moveDown(mouthwash) ∧ nearEnd(mouthwash,cabbage)",
);

/// Checks that each shipped group lists exactly `groups` and that every
/// member, split or whole, conflates to the group's first entry.
pub fn check_groups(rules: &RuleSet, groups: &[&[&str]]) -> Result<(), String> {
    let shipped: Vec<(String, Vec<String>)> = rules
        .lexicon
        .synonym_groups()
        .map(|(c, m)| (c.to_string(), m.to_vec()))
        .collect();
    for group in groups {
        let canonical = group[0];
        let entry = shipped
            .iter()
            .find(|(c, _)| c == canonical)
            .ok_or_else(|| format!("group {canonical} missing"))?;
        let members: Vec<&str> = entry.1.iter().map(String::as_str).collect();
        if members != *group {
            return Err(format!("group {canonical} is {members:?}"));
        }
        for member in *group {
            let split: Vec<Tagged> = member.split(' ').map(|w| Tagged::new(w, "NN")).collect();
            let want = vec![Tagged::new(canonical, rules.lexicon.tag_of(canonical).unwrap_or("NN"))];
            if conflate_synonyms(split, &rules.lexicon) != want {
                return Err(format!("{member} (split) does not conflate to {canonical}"));
            }
            let whole = vec![Tagged::new(*member, "NN")];
            if conflate_synonyms(whole, &rules.lexicon)[0].text != canonical {
                return Err(format!("{member} does not conflate to {canonical}"));
            }
        }
    }
    Ok(())
}

/// Every listed phrasing of `table` against its conjunction.
pub fn check_templates(rules: &RuleSet, table: &[(&str, &str)]) -> Result<(), String> {
    for (s, want) in table {
        let got = rules.parse_sentence(s).map_err(|e| format!("{s:?}: {e}"))?.to_string();
        if got != *want {
            return Err(format!("{s:?}: got {got}, want {want}"));
        }
    }
    Ok(())
}
