mod common;

use codetect::semparse::{
    conflate_synonyms, filter_pos, lemmatize, match_templates, pos_tag, tokenize, ParseError, RuleSet, Tagged,
};
use common::parser::{check_groups, CAD_SYNONYMS, CAD_TEMPLATES, KITCHEN_SYNONYMS, KITCHEN_TEMPLATES, MOUTHWASH};
use proptest::prelude::*;

fn parse(rules: &RuleSet, s: &str) -> String {
    rules.parse_sentence(s).unwrap_or_else(|e| panic!("{s:?}: {e}")).to_string()
}

fn tag_one(rules: &RuleSet, phrase: &str) -> Vec<Tagged> {
    let toks: Vec<String> = phrase.split(' ').map(str::to_string).collect();
    pos_tag(&toks, &rules.lexicon).unwrap()
}

#[test]
fn kitchen_templates_map_listed_phrasings() {
    let r = RuleSet::kitchen();
    for (s, want) in KITCHEN_TEMPLATES {
        assert_eq!(parse(&r, s), *want, "{s}");
    }
}

#[test]
fn cad_templates_map_listed_phrasings() {
    let r = RuleSet::cad120();
    for (s, want) in CAD_TEMPLATES {
        assert_eq!(parse(&r, s), *want, "{s}");
    }
}

#[test]
fn natural_sentences_reach_the_templates() {
    let k = RuleSet::kitchen();
    let cases = [
        ("The person carried the blue box rightwards and put it near the bowl.", "moveHorizontal(box) ∧ nearEnd(box,bowl)"),
        ("The man carries the pineapple to the left, near the watering can.", "moveHorizontal(pineapple) ∧ nearEnd(pineapple,watering can)"),
        ("The boy moved the cardboard box from the left to the right near the ice chest.", "moveHorizontal(box) ∧ nearEnd(box,cooler)"),
        ("The person takes the vegetable out of the pail.", "inStart(cabbage,bucket) ∧ awayFrom(cabbage,bucket)"),
        ("The person took the almond milk from the cooler and put it on the counter.", "inStart(milk,cooler) ∧ awayFrom(milk,cooler)"),
        ("The person lifted the gasoline tank.", "moveUp(gas can)"),
        ("The person poured the juice into the cup.", "rotate(juice) ∧ over(juice,cup)"),
    ];
    for (s, want) in cases {
        assert_eq!(parse(&k, s), want, "{s}");
    }
    let c = RuleSet::cad120();
    let cases = [
        ("The person placed the mug down on the table.", "moveDown(cup)"),
        ("The person puts down the cereal box.", "moveDown(cereal)"),
        ("The person picked up the container and poured it into the bowl.", "rotate(cup) ∧ over(cup,bowl)"),
        ("The person raises the tin.", "moveUp(cup)"),
        ("The person pours the liquid into the bowl.", "rotate(water) ∧ over(water,bowl)"),
    ];
    for (s, want) in cases {
        assert_eq!(parse(&c, s), want, "{s}");
    }
}

#[test]
fn mouthwash_sentence() {
    for r in [RuleSet::kitchen(), RuleSet::cad120()] {
        let c = r
            .parse_sentence(MOUTHWASH.0)
            .unwrap();
        assert_eq!(c.to_string(), MOUTHWASH.1);
        let ids: Vec<_> = c.instances.iter().map(|i| i.id.as_str()).collect();
        assert_eq!(ids, ["mouthwash", "cabbage"]);
    }
}

#[test]
fn operation_examples() {
    let k = RuleSet::kitchen();
    assert_eq!(parse(&k, "The person picks up the pineapple."), "moveUp(pineapple)");
    assert_eq!(parse(&k, "person pour juice into cup"), "rotate(juice) ∧ over(juice,cup)");
    assert_eq!(parse(&k, "person take cabbage out of bowl"), "inStart(cabbage,bowl) ∧ awayFrom(cabbage,bowl)");
    assert_eq!(parse(&k, "person put cup down"), "moveDown(cup)");
    assert_eq!(k.parse_sentence(""), Err(ParseError::NoTemplateMatch(String::new())));
    assert!(matches!(k.parse_sentence("The person juggles the xylophone"), Err(ParseError::UnknownWord(_))));
    assert!(matches!(k.parse_sentence("The person walked"), Err(ParseError::NoTemplateMatch(_))));
}

#[test]
fn spelling_then_parse() {
    let k = RuleSet::kitchen();
    assert_eq!(parse(&k, "The persn picked up the pinapple."), "moveUp(pineapple)");
}

#[test]
fn table_overrides() {
    let k = RuleSet::kitchen();
    for (phrase, tag) in [
        ("towards", "IN"),
        ("ice chest", "NN"),
        ("watering can", "NN"),
        ("vegetable", "NN"),
        ("watering pot", "NN"),
        ("gas can", "NN"),
        ("poured", "VBD"),
        ("pineapple", "NN"),
        ("box", "NN"),
        ("blue", "JJ"),
        ("violet", "JJ"),
        ("pours", "VBZ"),
        ("underneath", "IN"),
        ("off", "IN"),
        ("inside", "IN"),
        ("place", "VB"),
    ] {
        assert_eq!(tag_one(&k, phrase), vec![Tagged::new(phrase, tag)], "{phrase}");
    }
    let c = RuleSet::cad120();
    for (phrase, tag) in [
        ("up", "RP"),
        ("down", "RP"),
        ("blue", "JJ"),
        ("drank", "VBD"),
        ("pours", "VBZ"),
        ("poured", "VBD"),
        ("places", "VBZ"),
        ("reaches", "VBZ"),
        ("bowl", "NN"),
    ] {
        assert_eq!(tag_one(&c, phrase), vec![Tagged::new(phrase, tag)], "{phrase}");
    }
}

#[test]
fn filter_and_lemma_examples() {
    let k = RuleSet::kitchen();
    let tagged = tag_one(&k, "the blue boxes");
    let kept = filter_pos(tagged);
    assert_eq!(lemmatize(kept, &k.lexicon), vec![Tagged::new("box", "NN")]);
    let l = lemmatize(tag_one(&k, "pours put took carried"), &k.lexicon);
    let words: Vec<_> = l.iter().map(|t| t.text.as_str()).collect();
    assert_eq!(words, ["pour", "put", "take", "carry"]);
    let c = RuleSet::cad120();
    let l = lemmatize(tag_one(&c, "drank places reaches"), &c.lexicon);
    let words: Vec<_> = l.iter().map(|t| t.text.as_str()).collect();
    assert_eq!(words, ["drink", "place", "reach"]);
}

#[test]
fn kitchen_synonym_groups() {
    check_groups(&RuleSet::kitchen(), KITCHEN_SYNONYMS).unwrap();
}

#[test]
fn cad_synonym_groups() {
    check_groups(&RuleSet::cad120(), CAD_SYNONYMS).unwrap();
}

#[test]
fn template_outputs_only_mention_sentence_objects() {
    for r in [RuleSet::kitchen(), RuleSet::cad120()] {
        for t in &r.templates {
            for atom in &t.output {
                assert_eq!(atom.vars.len(), atom.predicate.arity());
            }
        }
        for (s, _) in KITCHEN_TEMPLATES.iter().chain(CAD_TEMPLATES) {
            if let Ok(c) = r.parse_sentence(s) {
                for inst in &c.instances {
                    assert!(c.canonical.contains(&inst.class));
                }
            }
        }
    }
}

#[test]
fn matching_is_independent_of_rule_order() {
    let k = RuleSet::kitchen();
    let mut reversed = k.templates.clone();
    reversed.reverse();
    for (s, _) in KITCHEN_TEMPLATES {
        let tagged = pos_tag(&tokenize(s), &k.lexicon).unwrap();
        let toks = conflate_synonyms(lemmatize(filter_pos(tagged), &k.lexicon), &k.lexicon);
        assert_eq!(
            match_templates(&toks, &k.templates, s).unwrap().atoms,
            match_templates(&toks, &reversed, s).unwrap().atoms
        );
    }
}

const DETERMINERS: &[&str] = &["the", "a"];
const KITCHEN_NOUNS: &[&str] = &["box", "pail", "ice chest", "pineapple", "watering can", "cabbage", "bowl", "dish"];

proptest! {
    #[test]
    fn canonical_paraphrase_is_a_fixed_point(
        template in 0..KITCHEN_TEMPLATES.len(),
        x in 0..KITCHEN_NOUNS.len(),
        y in 0..KITCHEN_NOUNS.len(),
        det in 0..DETERMINERS.len(),
    ) {
        prop_assume!(x != y);
        let k = RuleSet::kitchen();
        let pattern = KITCHEN_TEMPLATES[template].0;
        let d = DETERMINERS[det];
        let sentence = pattern
            .replace("cabbage", "@x").replace("box", "@x")
            .replace("bowl", "@y")
            .replace("@x", &format!("{d} {}", KITCHEN_NOUNS[x]))
            .replace("@y", &format!("{d} {}", KITCHEN_NOUNS[y]));
        let first = k.parse_sentence(&sentence);
        prop_assume!(first.is_ok());
        let first = first.unwrap();
        let again = k.parse_sentence(&first.canonical).unwrap();
        prop_assert_eq!(first.atoms, again.atoms);
        prop_assert_eq!(first.instances, again.instances);
    }
}
