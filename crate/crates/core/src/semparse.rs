//! Rule-driven semantic parser: English event sentence to a conjunction of
//! catalogue predicates over named object instances.
//!
//! The parser runs seven fixed steps over a token stream: tokenization with
//! spelling correction, lexicon tagging, tag-override rules, tag filtering,
//! lemmatization, synonym conflation and template matching. All linguistic
//! knowledge lives in a rule file (see [`RuleSet::parse`] for the grammar);
//! two rule sets ship with the crate, one per corpus.
//!
//! # Rule file grammar
//!
//! ```text
//! codetect-rules 1            # version header, first non-comment line
//! [lexicon]
//! phrase | TAG [TAG ...] [| frequency]
//! [overrides]
//! phrase | TAG
//! [lemmas]
//! suffix | noun|verb | suffix | replacement
//! except | noun|verb | form | lemma
//! [synonyms]
//! canonical | phrase | phrase ...
//! [templates]
//! pattern words with ?vars | pred(?x) & pred(?x, ?y) [| rank]
//! ```
//!
//! Blank lines and text after `#` are ignored. Phrases may contain spaces;
//! fields are separated by `|`. An empty replacement is written `-`.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::predicates::Predicate;

pub const RULES_VERSION: u32 = 1;

/// Rule set for the kitchen/basement/garage corpus.
pub const KITCHEN_RULES: &str = include_str!("../rules/kitchen.rules");
/// Rule set for the CAD-120 subset.
pub const CAD120_RULES: &str = include_str!("../rules/cad120.rules");

/// Tags removed before lemmatization.
pub const FILTERED_TAGS: &[&str] = &["PRP$", "RB", ",", ".", "JJ", "CC", "CD", "DT", "JJR"];

/// Maximum edit distance for spelling correction.
const MAX_EDIT_DISTANCE: usize = 2;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ParseError {
    #[error("unknown word `{0}`")]
    UnknownWord(String),
    #[error("no template matches `{0}`")]
    NoTemplateMatch(String),
}

#[derive(Debug, Error, Clone, PartialEq)]
#[error("rule file line {line}: {message}")]
pub struct RuleFileError {
    pub line: usize,
    pub message: String,
}

fn rule_err(line: usize, message: impl Into<String>) -> RuleFileError {
    RuleFileError {
        line,
        message: message.into(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum WordClass {
    Noun,
    Verb,
}

impl WordClass {
    fn of_tag(tag: &str) -> Option<Self> {
        if tag.starts_with("NN") {
            Some(WordClass::Noun)
        } else if tag.starts_with("VB") {
            Some(WordClass::Verb)
        } else {
            None
        }
    }

    fn base_tag(self) -> &'static str {
        match self {
            WordClass::Noun => "NN",
            WordClass::Verb => "VB",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
struct LexEntry {
    tags: Vec<String>,
    frequency: u32,
}

#[derive(Debug, Clone, PartialEq)]
struct SuffixRule {
    class: WordClass,
    suffix: String,
    replacement: String,
}

/// Word and phrase knowledge: default tags, tag overrides, lemma rules and
/// synonym groups.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Lexicon {
    entries: BTreeMap<String, LexEntry>,
    overrides: BTreeMap<String, String>,
    suffixes: Vec<SuffixRule>,
    exceptions: BTreeMap<(WordClass, String), String>,
    /// phrase -> canonical
    synonyms: BTreeMap<String, String>,
    /// canonical -> members (canonical included)
    groups: BTreeMap<String, Vec<String>>,
    /// single words of every phrase with their best frequency
    vocabulary: BTreeMap<String, u32>,
    max_phrase_words: usize,
    max_synonym_words: usize,
}

impl Lexicon {
    /// Tag the tagger would assign to a phrase, overrides first.
    pub fn tag_of(&self, phrase: &str) -> Option<&str> {
        self.overrides
            .get(phrase)
            .map(String::as_str)
            .or_else(|| self.entries.get(phrase).and_then(|e| e.tags.first()).map(String::as_str))
    }

    pub fn contains_word(&self, word: &str) -> bool {
        self.vocabulary.contains_key(word)
    }

    pub fn canonical(&self, phrase: &str) -> Option<&str> {
        self.synonyms.get(phrase).map(String::as_str)
    }

    /// Synonym groups as `(canonical, members)`.
    pub fn synonym_groups(&self) -> impl Iterator<Item = (&str, &[String])> {
        self.groups.iter().map(|(c, m)| (c.as_str(), m.as_slice()))
    }

    fn is_base_form(&self, phrase: &str, class: WordClass) -> bool {
        let base = class.base_tag();
        self.overrides.get(phrase).is_some_and(|t| t == base)
            || self.entries.get(phrase).is_some_and(|e| e.tags.iter().any(|t| t == base))
    }

    fn lemma(&self, phrase: &str, class: WordClass) -> String {
        if let Some(l) = self.exceptions.get(&(class, phrase.to_string())) {
            return l.clone();
        }
        if self.is_base_form(phrase, class) {
            return phrase.to_string();
        }
        for rule in self.suffixes.iter().filter(|r| r.class == class) {
            if let Some(stem) = phrase.strip_suffix(rule.suffix.as_str()) {
                if stem.is_empty() {
                    continue;
                }
                let candidate = format!("{stem}{}", rule.replacement);
                if self.is_base_form(&candidate, class) {
                    return candidate;
                }
            }
        }
        phrase.to_string()
    }

    fn rebuild_indexes(&mut self) {
        let mut vocab: BTreeMap<String, u32> = BTreeMap::new();
        let mut longest = 1;
        let phrases = self
            .entries
            .iter()
            .map(|(p, e)| (p, e.frequency))
            .chain(self.overrides.keys().map(|p| (p, 1)));
        for (phrase, freq) in phrases {
            let words: Vec<&str> = phrase.split(' ').collect();
            longest = longest.max(words.len());
            for w in words {
                let f = vocab.entry(w.to_string()).or_insert(0);
                *f = (*f).max(freq);
            }
        }
        self.vocabulary = vocab;
        self.max_phrase_words = longest;
        self.max_synonym_words = self
            .synonyms
            .keys()
            .map(|p| p.split(' ').count())
            .max()
            .unwrap_or(1);
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum PatternItem {
    Word(String),
    Var(String),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AtomSchema {
    pub predicate: Predicate,
    pub vars: Vec<String>,
}

/// A word pattern over the canonicalized sentence and the conjunction it
/// produces. Variables bind whole noun tokens.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TemplateRule {
    pub pattern: Vec<PatternItem>,
    pub output: Vec<AtomSchema>,
    pub rank: i64,
    pub line: usize,
}

impl TemplateRule {
    pub fn pattern_text(&self) -> String {
        self.pattern
            .iter()
            .map(|i| match i {
                PatternItem::Word(w) => w.clone(),
                PatternItem::Var(v) => format!("?{v}"),
            })
            .collect::<Vec<_>>()
            .join(" ")
    }

    fn priority_key(&self) -> (std::cmp::Reverse<usize>, std::cmp::Reverse<i64>, String) {
        (
            std::cmp::Reverse(self.pattern.len()),
            std::cmp::Reverse(self.rank),
            self.pattern_text(),
        )
    }
}

/// A parsed rule file.
#[derive(Debug, Clone, PartialEq)]
pub struct RuleSet {
    pub lexicon: Lexicon,
    /// Sorted most-specific first.
    pub templates: Vec<TemplateRule>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Section {
    Lexicon,
    Overrides,
    Lemmas,
    Synonyms,
    Templates,
}

fn fields(body: &str) -> Vec<&str> {
    body.split('|').map(str::trim).collect()
}

fn normalize_phrase(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ").to_lowercase()
}

fn parse_class(s: &str, line: usize) -> Result<WordClass, RuleFileError> {
    match s {
        "noun" => Ok(WordClass::Noun),
        "verb" => Ok(WordClass::Verb),
        other => Err(rule_err(line, format!("expected `noun` or `verb`, got `{other}`"))),
    }
}

fn parse_conjunction(s: &str, line: usize) -> Result<Vec<AtomSchema>, RuleFileError> {
    let mut atoms = Vec::new();
    for part in s.split(['&', '∧']) {
        let part = part.trim();
        let (name, rest) = part
            .split_once('(')
            .ok_or_else(|| rule_err(line, format!("malformed atom `{part}`")))?;
        let args = rest
            .strip_suffix(')')
            .ok_or_else(|| rule_err(line, format!("malformed atom `{part}`")))?;
        let predicate: Predicate = name
            .trim()
            .parse()
            .map_err(|e: crate::predicates::PredicateError| rule_err(line, e.to_string()))?;
        let vars = args
            .split(',')
            .map(|a| {
                a.trim()
                    .strip_prefix('?')
                    .filter(|v| !v.is_empty())
                    .map(str::to_string)
                    .ok_or_else(|| rule_err(line, format!("atom arguments must be ?variables: `{part}`")))
            })
            .collect::<Result<Vec<_>, _>>()?;
        if vars.len() != predicate.arity() {
            return Err(rule_err(
                line,
                format!("`{}` takes {} argument(s), got {}", predicate, predicate.arity(), vars.len()),
            ));
        }
        atoms.push(AtomSchema { predicate, vars });
    }
    Ok(atoms)
}

impl RuleSet {
    /// Parses a rule file. Errors carry 1-based line numbers.
    pub fn parse(text: &str) -> Result<Self, RuleFileError> {
        let mut lex = Lexicon::default();
        let mut templates = Vec::new();
        let mut section: Option<Section> = None;
        let mut seen_header = false;

        for (idx, raw) in text.lines().enumerate() {
            let line = idx + 1;
            let body = raw.split('#').next().unwrap_or("").trim();
            if body.is_empty() {
                continue;
            }
            if !seen_header {
                let version = body
                    .strip_prefix("codetect-rules")
                    .and_then(|v| v.trim().parse::<u32>().ok())
                    .ok_or_else(|| rule_err(line, "missing `codetect-rules <version>` header"))?;
                if version != RULES_VERSION {
                    return Err(rule_err(line, format!("unsupported rule file version {version}")));
                }
                seen_header = true;
                continue;
            }
            if let Some(name) = body.strip_prefix('[').and_then(|b| b.strip_suffix(']')) {
                section = Some(match name.trim() {
                    "lexicon" => Section::Lexicon,
                    "overrides" => Section::Overrides,
                    "lemmas" => Section::Lemmas,
                    "synonyms" => Section::Synonyms,
                    "templates" => Section::Templates,
                    other => return Err(rule_err(line, format!("unknown section [{other}]"))),
                });
                continue;
            }
            let f = fields(body);
            match section {
                None => return Err(rule_err(line, "rule outside of any section")),
                Some(Section::Lexicon) => {
                    if f.len() < 2 || f.len() > 3 || f[0].is_empty() {
                        return Err(rule_err(line, "expected `phrase | TAGS [| frequency]`"));
                    }
                    let tags: Vec<String> = f[1].split_whitespace().map(str::to_string).collect();
                    if tags.is_empty() {
                        return Err(rule_err(line, "lexicon entry without tags"));
                    }
                    let frequency = match f.get(2) {
                        Some(s) => s.parse().map_err(|_| rule_err(line, format!("bad frequency `{s}`")))?,
                        None => 1,
                    };
                    let phrase = normalize_phrase(f[0]);
                    if lex.entries.insert(phrase.clone(), LexEntry { tags, frequency }).is_some() {
                        return Err(rule_err(line, format!("duplicate lexicon entry `{phrase}`")));
                    }
                }
                Some(Section::Overrides) => {
                    if f.len() != 2 || f[0].is_empty() || f[1].split_whitespace().count() != 1 {
                        return Err(rule_err(line, "expected `phrase | TAG`"));
                    }
                    lex.overrides.insert(normalize_phrase(f[0]), f[1].to_string());
                }
                Some(Section::Lemmas) => {
                    if f.len() != 4 {
                        return Err(rule_err(line, "expected `suffix|except | class | from | to`"));
                    }
                    let class = parse_class(f[1], line)?;
                    let to = if f[3] == "-" { String::new() } else { normalize_phrase(f[3]) };
                    match f[0] {
                        "suffix" => lex.suffixes.push(SuffixRule {
                            class,
                            suffix: f[2].to_string(),
                            replacement: to,
                        }),
                        "except" => {
                            lex.exceptions.insert((class, normalize_phrase(f[2])), to);
                        }
                        other => return Err(rule_err(line, format!("unknown lemma rule kind `{other}`"))),
                    }
                }
                Some(Section::Synonyms) => {
                    if f.len() < 2 || f.iter().any(|p| p.is_empty()) {
                        return Err(rule_err(line, "expected `canonical | phrase [| phrase ...]`"));
                    }
                    let canonical = normalize_phrase(f[0]);
                    let mut members = Vec::new();
                    for p in &f {
                        let p = normalize_phrase(p);
                        if let Some(prev) = lex.synonyms.get(&p) {
                            if *prev != canonical {
                                return Err(rule_err(line, format!("`{p}` already belongs to group `{prev}`")));
                            }
                        }
                        lex.synonyms.insert(p.clone(), canonical.clone());
                        members.push(p);
                    }
                    if lex.groups.insert(canonical.clone(), members).is_some() {
                        return Err(rule_err(line, format!("duplicate synonym group `{canonical}`")));
                    }
                }
                Some(Section::Templates) => {
                    if f.len() < 2 || f.len() > 3 {
                        return Err(rule_err(line, "expected `pattern | conjunction [| rank]`"));
                    }
                    let pattern: Vec<PatternItem> = f[0]
                        .split_whitespace()
                        .map(|w| match w.strip_prefix('?') {
                            Some(v) => PatternItem::Var(v.to_string()),
                            None => PatternItem::Word(w.to_lowercase()),
                        })
                        .collect();
                    if pattern.is_empty() {
                        return Err(rule_err(line, "empty template pattern"));
                    }
                    let output = parse_conjunction(f[1], line)?;
                    let bound: BTreeSet<&str> = pattern
                        .iter()
                        .filter_map(|i| match i {
                            PatternItem::Var(v) => Some(v.as_str()),
                            PatternItem::Word(_) => None,
                        })
                        .collect();
                    for atom in &output {
                        for v in &atom.vars {
                            if !bound.contains(v.as_str()) {
                                return Err(rule_err(line, format!("output variable ?{v} not bound by the pattern")));
                            }
                        }
                    }
                    let rank = match f.get(2) {
                        Some(s) => s.parse().map_err(|_| rule_err(line, format!("bad rank `{s}`")))?,
                        None => 0,
                    };
                    templates.push(TemplateRule {
                        pattern,
                        output,
                        rank,
                        line,
                    });
                }
            }
        }
        if !seen_header {
            return Err(rule_err(0, "empty rule file"));
        }
        lex.rebuild_indexes();
        templates.sort_by_key(TemplateRule::priority_key);
        Ok(RuleSet { lexicon: lex, templates })
    }

    pub fn kitchen() -> Self {
        Self::parse(KITCHEN_RULES).expect("bundled kitchen rules are valid")
    }

    pub fn cad120() -> Self {
        Self::parse(CAD120_RULES).expect("bundled CAD-120 rules are valid")
    }

    /// Looks up a bundled rule set by name (`kitchen` or `cad120`).
    pub fn builtin(name: &str) -> Option<Self> {
        match name {
            "kitchen" => Some(Self::kitchen()),
            "cad120" => Some(Self::cad120()),
            _ => None,
        }
    }

    pub fn parse_sentence(&self, sentence: &str) -> Result<PredicateConjunction, ParseError> {
        parse_sentence(sentence, &self.lexicon, &self.templates)
    }
}

/// A token with its part-of-speech tag. `text` may hold a multiword phrase.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Tagged {
    pub text: String,
    pub tag: String,
}

impl Tagged {
    pub fn new(text: impl Into<String>, tag: impl Into<String>) -> Self {
        Self {
            text: text.into(),
            tag: tag.into(),
        }
    }
}

/// Lowercases and splits a sentence into word and punctuation tokens.
pub fn tokenize(sentence: &str) -> Vec<String> {
    let mut out = Vec::new();
    let lowered = sentence.to_lowercase().replace('-', " ");
    for raw in lowered.split_whitespace() {
        let mut word = String::new();
        for ch in raw.chars() {
            match ch {
                ',' | ';' | ':' => {
                    if !word.is_empty() {
                        out.push(std::mem::take(&mut word));
                    }
                    out.push(",".to_string());
                }
                '.' | '!' | '?' => {
                    if !word.is_empty() {
                        out.push(std::mem::take(&mut word));
                    }
                    out.push(".".to_string());
                }
                '"' | '(' | ')' => {}
                c => word.push(c),
            }
        }
        if !word.is_empty() {
            out.push(word);
        }
    }
    out
}

fn builtin_tag(token: &str) -> Option<&'static str> {
    match token {
        "," => Some(","),
        "." => Some("."),
        t if !t.is_empty() && t.chars().all(|c| c.is_ascii_digit()) => Some("CD"),
        _ => None,
    }
}

/// Replaces out-of-vocabulary tokens by the closest vocabulary word within
/// edit distance 2; ties go to the more frequent word, then the
/// lexicographically smaller one.
pub fn correct_spelling(tokens: &[String], lexicon: &Lexicon) -> Vec<String> {
    tokens
        .iter()
        .map(|tok| {
            if builtin_tag(tok).is_some() || lexicon.contains_word(tok) {
                return tok.clone();
            }
            lexicon
                .vocabulary
                .iter()
                .filter_map(|(word, freq)| {
                    let d = strsim::levenshtein(tok, word);
                    (d <= MAX_EDIT_DISTANCE).then_some((d, std::cmp::Reverse(*freq), word))
                })
                .min()
                .map(|(_, _, w)| w.clone())
                .unwrap_or_else(|| tok.clone())
        })
        .collect()
}

/// Tags tokens by greedy longest-phrase lookup; override rules win over the
/// lexicon's default tags and may merge several tokens into one phrase.
pub fn pos_tag(tokens: &[String], lexicon: &Lexicon) -> Result<Vec<Tagged>, ParseError> {
    let mut out = Vec::new();
    let mut i = 0;
    while i < tokens.len() {
        if let Some(tag) = builtin_tag(&tokens[i]) {
            out.push(Tagged::new(tokens[i].clone(), tag));
            i += 1;
            continue;
        }
        let longest = lexicon.max_phrase_words.min(tokens.len() - i);
        let hit = (1..=longest).rev().find_map(|n| {
            let phrase = tokens[i..i + n].join(" ");
            lexicon.tag_of(&phrase).map(|tag| (n, Tagged::new(phrase.clone(), tag)))
        });
        match hit {
            Some((n, tagged)) => {
                out.push(tagged);
                i += n;
            }
            None => return Err(ParseError::UnknownWord(tokens[i].clone())),
        }
    }
    Ok(out)
}

/// Drops tokens whose tag is in [`FILTERED_TAGS`].
pub fn filter_pos(tagged: Vec<Tagged>) -> Vec<Tagged> {
    tagged
        .into_iter()
        .filter(|t| !FILTERED_TAGS.contains(&t.tag.as_str()))
        .collect()
}

/// Reduces nouns to their singular and verbs to their base form.
pub fn lemmatize(tagged: Vec<Tagged>, lexicon: &Lexicon) -> Vec<Tagged> {
    tagged
        .into_iter()
        .map(|t| match WordClass::of_tag(&t.tag) {
            Some(class) => Tagged::new(lexicon.lemma(&t.text, class), class.base_tag()),
            None => t,
        })
        .collect()
}

/// Replaces every synonym phrase by its group's canonical form, matching the
/// longest phrase first at each position.
pub fn conflate_synonyms(tagged: Vec<Tagged>, lexicon: &Lexicon) -> Vec<Tagged> {
    let mut out = Vec::with_capacity(tagged.len());
    let mut i = 0;
    while i < tagged.len() {
        let longest = lexicon.max_synonym_words.min(tagged.len() - i);
        let hit = (1..=longest).rev().find_map(|n| {
            let phrase = tagged[i..i + n]
                .iter()
                .map(|t| t.text.as_str())
                .collect::<Vec<_>>()
                .join(" ");
            lexicon.canonical(&phrase).map(|c| (n, c.to_string()))
        });
        match hit {
            Some((n, canonical)) => {
                let tag = lexicon
                    .tag_of(&canonical)
                    .map(str::to_string)
                    .unwrap_or_else(|| tagged[i + n - 1].tag.clone());
                out.push(Tagged::new(canonical, tag));
                i += n;
            }
            None => {
                out.push(tagged[i].clone());
                i += 1;
            }
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ObjectInstance {
    pub id: String,
    pub class: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Atom {
    pub predicate: Predicate,
    pub args: Vec<String>,
}

impl fmt::Display for Atom {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}({})", self.predicate, self.args.join(","))
    }
}

/// The parsed meaning of a sentence.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PredicateConjunction {
    pub sentence: String,
    /// Token string the templates were matched against.
    pub canonical: String,
    pub instances: Vec<ObjectInstance>,
    pub atoms: Vec<Atom>,
}

impl PredicateConjunction {
    pub fn instance(&self, id: &str) -> Option<&ObjectInstance> {
        self.instances.iter().find(|i| i.id == id)
    }
}

impl fmt::Display for PredicateConjunction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let atoms: Vec<String> = self.atoms.iter().map(Atom::to_string).collect();
        f.write_str(&atoms.join(" ∧ "))
    }
}

fn try_match(rule: &TemplateRule, tokens: &[Tagged]) -> Option<HashMap<String, String>> {
    let words: Vec<Vec<&str>> = tokens.iter().map(|t| t.text.split(' ').collect()).collect();
    let mut bindings: HashMap<String, String> = HashMap::new();
    let (mut ti, mut wi) = (0usize, 0usize);
    for item in &rule.pattern {
        if ti >= tokens.len() {
            return None;
        }
        match item {
            PatternItem::Word(w) => {
                if words[ti][wi] != w {
                    return None;
                }
                wi += 1;
                if wi == words[ti].len() {
                    ti += 1;
                    wi = 0;
                }
            }
            PatternItem::Var(v) => {
                if wi != 0 || WordClass::of_tag(&tokens[ti].tag) != Some(WordClass::Noun) {
                    return None;
                }
                let text = &tokens[ti].text;
                if let Some(prev) = bindings.get(v) {
                    if prev != text {
                        return None;
                    }
                }
                bindings.insert(v.clone(), text.clone());
                ti += 1;
            }
        }
    }
    (ti == tokens.len() && wi == 0).then_some(bindings)
}

/// Instantiates the first (most specific) matching template.
pub fn match_templates(
    tokens: &[Tagged],
    rules: &[TemplateRule],
    sentence: &str,
) -> Result<PredicateConjunction, ParseError> {
    let canonical = tokens.iter().map(|t| t.text.as_str()).collect::<Vec<_>>().join(" ");
    let mut ordered: Vec<&TemplateRule> = rules.iter().collect();
    ordered.sort_by_key(|r| r.priority_key());
    for rule in ordered {
        let Some(bindings) = try_match(rule, tokens) else {
            continue;
        };
        let mut var_ids: BTreeMap<&str, String> = BTreeMap::new();
        let mut instances: Vec<ObjectInstance> = Vec::new();
        let mut atoms = Vec::new();
        for schema in &rule.output {
            let mut args = Vec::new();
            for var in &schema.vars {
                let id = match var_ids.get(var.as_str()) {
                    Some(id) => id.clone(),
                    None => {
                        let class = bindings[var].clone();
                        let same = instances.iter().filter(|i| i.class == class).count();
                        let id = if same == 0 { class.clone() } else { format!("{class}_{}", same + 1) };
                        instances.push(ObjectInstance {
                            id: id.clone(),
                            class,
                        });
                        var_ids.insert(var, id.clone());
                        id
                    }
                };
                args.push(id);
            }
            atoms.push(Atom {
                predicate: schema.predicate,
                args,
            });
        }
        return Ok(PredicateConjunction {
            sentence: sentence.to_string(),
            canonical,
            instances,
            atoms,
        });
    }
    Err(ParseError::NoTemplateMatch(canonical))
}

/// Runs all parsing steps in order.
pub fn parse_sentence(
    sentence: &str,
    lexicon: &Lexicon,
    rules: &[TemplateRule],
) -> Result<PredicateConjunction, ParseError> {
    let tokens = tokenize(sentence);
    let corrected = correct_spelling(&tokens, lexicon);
    let tagged = pos_tag(&corrected, lexicon)?;
    let filtered = filter_pos(tagged);
    let lemmas = lemmatize(filtered, lexicon);
    let canonical = conflate_synonyms(lemmas, lexicon);
    match_templates(&canonical, rules, sentence)
}
