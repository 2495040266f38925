//! Annotation parsing, caption templating, tokenization and vocabularies.
//!
//! Captions come in two granularities: the full caption expands each
//! `[something]` slot with the actor-written object description, while the
//! simplified caption keeps only the head word of each description.

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};
use std::collections::HashMap;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

/// Literal text of the placeholder slot.
pub const SOMETHING_TEXT: &str = "[something]";

/// Reserved vocabulary indices.
pub const PAD: usize = 0;
pub const BOS: usize = 1;
pub const EOS: usize = 2;
pub const SOMETHING: usize = 3;

const SPECIAL_TOKENS: [&str; 4] = ["<pad>", "<bos>", "<eos>", SOMETHING_TEXT];

/// Default caption length cap in content tokens.
pub const MAX_CAPTION_LEN: usize = 14;

/// One video's labels at every granularity.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct AnnotationRecord {
    pub video_id: String,
    pub action_group_id: usize,
    pub action_category_id: usize,
    pub template: String,
    pub placeholders: Vec<String>,
    pub full_caption: String,
    pub simplified_caption: Option<String>,
}

impl AnnotationRecord {
    /// Checks the slot/placeholder arity invariant.
    pub fn validate(&self) -> Result<()> {
        let slots = count_slots(&self.template);
        if slots != self.placeholders.len() {
            return Err(Error::Validation {
                video_id: self.video_id.clone(),
                message: format!(
                    "template has {slots} slot(s) but {} placeholder(s)",
                    self.placeholders.len()
                ),
            });
        }
        Ok(())
    }

    /// Checks the category/group consistency against a hierarchy.
    pub fn validate_against(&self, hierarchy: &LabelHierarchy) -> Result<()> {
        self.validate()?;
        let mapped = hierarchy.group_of(self.action_category_id)?;
        if mapped != self.action_group_id {
            return Err(Error::Validation {
                video_id: self.video_id.clone(),
                message: format!(
                    "category {} maps to group {mapped}, record says {}",
                    self.action_category_id, self.action_group_id
                ),
            });
        }
        Ok(())
    }

    /// The simplified caption, deriving it from the template when the record
    /// does not carry one.
    pub fn simplified(&self) -> String {
        match &self.simplified_caption {
            Some(s) => s.clone(),
            None => {
                let simple: Vec<String> =
                    self.placeholders.iter().map(|p| simplify_placeholder(p)).collect();
                expand_template(&self.template, &simple).expect("record validated")
            }
        }
    }
}

/// Total map from fine category ids to coarse group ids.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct LabelHierarchy {
    group_of: Vec<usize>,
    group_count: usize,
}

impl LabelHierarchy {
    pub fn new(group_of: Vec<usize>, group_count: usize) -> Result<Self> {
        if group_of.is_empty() {
            return Err(Error::Label("hierarchy must cover at least one category".into()));
        }
        for (cat, &g) in group_of.iter().enumerate() {
            if g >= group_count {
                return Err(Error::Label(format!(
                    "category {cat} assigned to group {g}, but group count is {group_count}"
                )));
            }
        }
        Ok(LabelHierarchy { group_of, group_count })
    }

    /// Identity hierarchy (K groups of one category each).
    pub fn identity(k: usize) -> Self {
        LabelHierarchy { group_of: (0..k).collect(), group_count: k }
    }

    pub fn group_of(&self, category_id: usize) -> Result<usize> {
        self.group_of.get(category_id).copied().ok_or_else(|| {
            Error::Label(format!(
                "category id {category_id} out of range (K = {})",
                self.group_of.len()
            ))
        })
    }

    pub fn category_count(&self) -> usize {
        self.group_of.len()
    }

    pub fn group_count(&self) -> usize {
        self.group_count
    }

    /// Categories belonging to `group`, ascending.
    pub fn categories_in(&self, group: usize) -> Vec<usize> {
        self.group_of
            .iter()
            .enumerate()
            .filter(|(_, &g)| g == group)
            .map(|(c, _)| c)
            .collect()
    }

    pub fn mapping(&self) -> &[usize] {
        &self.group_of
    }
}

/// Coarse group of a fine category (range-checked lookup).
pub fn coarse_of_fine(category_id: usize, hierarchy: &LabelHierarchy) -> Result<usize> {
    hierarchy.group_of(category_id)
}

/// Token-to-index map with fixed specials at indices 0..=3. Frozen after
/// construction: unknown lookups return the `[something]` index, mirroring
/// how rare words were folded at build time.
#[derive(Debug, Clone, PartialEq)]
pub struct Vocabulary {
    token_to_index: HashMap<String, usize>,
    index_to_token: Vec<String>,
}

impl Vocabulary {
    fn from_tokens(tokens: Vec<String>) -> Self {
        let mut token_to_index = HashMap::new();
        for (i, t) in tokens.iter().enumerate() {
            token_to_index.insert(t.clone(), i);
        }
        Vocabulary { token_to_index, index_to_token: tokens }
    }

    pub fn len(&self) -> usize {
        self.index_to_token.len()
    }

    pub fn is_empty(&self) -> bool {
        false // specials are always present
    }

    /// Index of a token; unknown tokens resolve to the `[something]` special.
    pub fn index_of(&self, token: &str) -> usize {
        self.token_to_index.get(token).copied().unwrap_or(SOMETHING)
    }

    pub fn contains(&self, token: &str) -> bool {
        self.token_to_index.contains_key(token)
    }

    pub fn token_at(&self, index: usize) -> Option<&str> {
        self.index_to_token.get(index).map(String::as_str)
    }

    pub fn tokens(&self) -> &[String] {
        &self.index_to_token
    }

    /// One token per line, line number = index.
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        for t in &self.index_to_token {
            writeln!(f, "{t}").map_err(|e| Error::io(path, e))?;
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let content = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let tokens: Vec<String> = content.lines().map(str::to_string).collect();
        if tokens.len() < SPECIAL_TOKENS.len() {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                line: tokens.len(),
                message: "vocabulary file shorter than the four reserved lines".into(),
            });
        }
        for (i, expected) in SPECIAL_TOKENS.iter().enumerate() {
            if tokens[i] != *expected {
                return Err(Error::Parse {
                    path: path.to_path_buf(),
                    line: i + 1,
                    message: format!("line {} must be '{expected}', found '{}'", i + 1, tokens[i]),
                });
            }
        }
        Ok(Vocabulary::from_tokens(tokens))
    }

    /// Rebuilds from a previously saved token list (e.g. a checkpoint echo).
    pub fn from_token_list(tokens: Vec<String>) -> Result<Self> {
        if tokens.len() < 4 || tokens[..4] != SPECIAL_TOKENS.map(String::from) {
            return Err(Error::Config("token list does not start with the reserved specials".into()));
        }
        Ok(Vocabulary::from_tokens(tokens))
    }
}

/// Fixed-length encoded caption: BOS, content, EOS, then PAD.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenSequence {
    indices: Vec<usize>,
}

impl TokenSequence {
    /// Validates the BOS/EOS/PAD layout invariants.
    pub fn new(indices: Vec<usize>) -> Result<Self> {
        if indices.first() != Some(&BOS) {
            return Err(Error::Validation {
                video_id: String::new(),
                message: "token sequence must begin with BOS".into(),
            });
        }
        let eos_count = indices.iter().filter(|&&i| i == EOS).count();
        if eos_count != 1 {
            return Err(Error::Validation {
                video_id: String::new(),
                message: format!("token sequence must contain exactly one EOS, found {eos_count}"),
            });
        }
        let eos_pos = indices.iter().position(|&i| i == EOS).unwrap();
        if indices[..eos_pos].iter().any(|&i| i == PAD) {
            return Err(Error::Validation {
                video_id: String::new(),
                message: "PAD before EOS".into(),
            });
        }
        if indices[eos_pos + 1..].iter().any(|&i| i != PAD) {
            return Err(Error::Validation {
                video_id: String::new(),
                message: "non-PAD token after EOS".into(),
            });
        }
        Ok(TokenSequence { indices })
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    /// Number of content tokens (between BOS and EOS).
    pub fn content_len(&self) -> usize {
        self.indices.iter().position(|&i| i == EOS).unwrap() - 1
    }

    /// Content token indices, specials stripped.
    pub fn content(&self) -> &[usize] {
        let eos = self.indices.iter().position(|&i| i == EOS).unwrap();
        &self.indices[1..eos]
    }

    /// Content tokens as strings.
    pub fn decode(&self, vocab: &Vocabulary) -> Vec<String> {
        self.content()
            .iter()
            .map(|&i| vocab.token_at(i).unwrap_or(SOMETHING_TEXT).to_string())
            .collect()
    }
}

fn count_slots(template: &str) -> usize {
    slot_positions(template).len()
}

/// Byte offsets of each `[something]` slot, case-insensitive.
fn slot_positions(template: &str) -> Vec<usize> {
    let lower = template.to_lowercase();
    let mut out = Vec::new();
    let mut from = 0;
    while let Some(pos) = lower[from..].find(SOMETHING_TEXT) {
        out.push(from + pos);
        from = from + pos + SOMETHING_TEXT.len();
    }
    out
}

/// Replaces the i-th slot with the i-th placeholder, left to right, and
/// normalizes runs of whitespace to single spaces.
pub fn expand_template(template: &str, placeholders: &[String]) -> Result<String> {
    let slots = slot_positions(template);
    if slots.len() != placeholders.len() {
        return Err(Error::Validation {
            video_id: String::new(),
            message: format!(
                "template has {} slot(s) but {} placeholder(s)",
                slots.len(),
                placeholders.len()
            ),
        });
    }
    let mut out = String::with_capacity(template.len());
    let mut cursor = 0;
    for (pos, ph) in slots.iter().zip(placeholders) {
        out.push_str(&template[cursor..*pos]);
        out.push_str(ph);
        cursor = pos + SOMETHING_TEXT.len();
    }
    out.push_str(&template[cursor..]);
    Ok(out.split_whitespace().collect::<Vec<_>>().join(" "))
}

/// Reduces an object description to its head word: lowercase, possessive
/// suffixes and punctuation dropped, final whitespace-delimited token kept.
/// The head-final heuristic stands in for noun detection.
pub fn simplify_placeholder(placeholder: &str) -> String {
    let lower = placeholder.to_lowercase();
    let cleaned: String = lower
        .replace("'s", "")
        .replace("\u{2019}s", "")
        .chars()
        .map(|c| if c.is_alphanumeric() || c.is_whitespace() { c } else { ' ' })
        .collect();
    match cleaned.split_whitespace().last() {
        Some(w) => w.to_string(),
        None => SOMETHING_TEXT.to_string(),
    }
}

/// Lowercases, deletes apostrophes, treats other punctuation as separators,
/// and splits on whitespace. `[something]` survives as a single token.
pub fn tokenize_caption(caption: &str) -> Vec<String> {
    let lower = caption.to_lowercase().replace(['\'', '\u{2019}'], "");
    // shield slot markers from punctuation stripping
    let shielded = lower.replace(SOMETHING_TEXT, "\u{1}");
    let cleaned: String = shielded
        .chars()
        .map(|c| {
            if c.is_alphanumeric() || c.is_whitespace() || c == '\u{1}' {
                c
            } else {
                ' '
            }
        })
        .collect();
    cleaned
        .split_whitespace()
        .map(|t| t.replace('\u{1}', SOMETHING_TEXT))
        .collect()
}

/// Builds a frozen vocabulary from a tokenized corpus. Tokens occurring
/// fewer than `min_occurrences` times fold into `[something]`; indices are
/// assigned by descending count with lexicographic tie-break.
pub fn build_vocabulary(captions: &[Vec<String>], min_occurrences: usize) -> Vocabulary {
    let mut counts: HashMap<&str, usize> = HashMap::new();
    for caption in captions {
        for tok in caption {
            if tok != SOMETHING_TEXT {
                *counts.entry(tok.as_str()).or_insert(0) += 1;
            }
        }
    }
    let mut kept: Vec<(&str, usize)> = counts
        .into_iter()
        .filter(|&(_, c)| c >= min_occurrences)
        .collect();
    kept.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
    let mut tokens: Vec<String> = SPECIAL_TOKENS.iter().map(|s| s.to_string()).collect();
    tokens.extend(kept.into_iter().map(|(t, _)| t.to_string()));
    Vocabulary::from_tokens(tokens)
}

/// Encodes tokens as BOS + at most `max_len` indices + EOS, padded to the
/// fixed storage length `max_len + 2`. Unknown tokens map to `[something]`.
pub fn encode_tokens(tokens: &[String], vocab: &Vocabulary, max_len: usize) -> TokenSequence {
    let mut indices = Vec::with_capacity(max_len + 2);
    indices.push(BOS);
    for tok in tokens.iter().take(max_len) {
        indices.push(vocab.index_of(tok));
    }
    indices.push(EOS);
    indices.resize(max_len + 2, PAD);
    TokenSequence { indices }
}

/// Parses a JSON-lines annotation file; one record per line with fields
/// `id, group, category, template, placeholders, caption`.
pub fn load_annotations(path: &Path) -> Result<Vec<AnnotationRecord>> {
    #[derive(Deserialize)]
    struct Line {
        id: String,
        group: usize,
        category: usize,
        template: String,
        placeholders: Vec<String>,
        caption: String,
        #[serde(default)]
        simplified_caption: Option<String>,
    }

    let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let reader = BufReader::new(f);
    let mut records = Vec::new();
    for (lineno, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let parsed: Line = serde_json::from_str(&line).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: lineno + 1,
            message: e.to_string(),
        })?;
        let record = AnnotationRecord {
            video_id: parsed.id,
            action_group_id: parsed.group,
            action_category_id: parsed.category,
            template: parsed.template,
            placeholders: parsed.placeholders,
            full_caption: parsed.caption,
            simplified_caption: parsed.simplified_caption,
        };
        record.validate()?;
        records.push(record);
    }
    Ok(records)
}

/// Writes records in the same JSON-lines layout `load_annotations` reads.
pub fn save_annotations(path: &Path, records: &[AnnotationRecord]) -> Result<()> {
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    for r in records {
        let line = serde_json::json!({
            "id": r.video_id,
            "group": r.action_group_id,
            "category": r.action_category_id,
            "template": r.template,
            "placeholders": r.placeholders,
            "caption": r.full_caption,
            "simplified_caption": r.simplified_caption,
        });
        writeln!(f, "{line}").map_err(|e| Error::io(path, e))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn expand_matches_annotation_example() {
        let out = expand_template(
            "Holding [something] in front of [something]",
            &["cap".to_string(), "shirt".to_string()],
        )
        .unwrap();
        assert_eq!(out, "Holding cap in front of shirt");
    }

    #[test]
    fn expand_with_full_descriptions() {
        let out = expand_template(
            "Putting [something] on [something]",
            &["a red cup".to_string(), "a blue plastic box".to_string()],
        )
        .unwrap();
        assert_eq!(out, "Putting a red cup on a blue plastic box");
    }

    #[test]
    fn expand_zero_slots_is_identity() {
        assert_eq!(expand_template("Doing nothing", &[]).unwrap(), "Doing nothing");
    }

    #[test]
    fn expand_count_mismatch_errors() {
        assert!(expand_template("Holding [something]", &[]).is_err());
    }

    #[test]
    fn simplify_keeps_head_word() {
        assert_eq!(simplify_placeholder("a blue plastic cap"), "cap");
        assert_eq!(simplify_placeholder("a men's short sleeve shirt"), "shirt");
        assert_eq!(simplify_placeholder("cup"), "cup");
        assert_eq!(simplify_placeholder("Dog's"), "dog");
        assert_eq!(simplify_placeholder("--"), SOMETHING_TEXT);
    }

    #[test]
    fn tokenize_basics() {
        assert_eq!(
            tokenize_caption("Holding cap in front of shirt"),
            vec!["holding", "cap", "in", "front", "of", "shirt"]
        );
        assert_eq!(tokenize_caption("doesn't"), vec!["doesnt"]);
        assert_eq!(
            tokenize_caption("Putting [something] on [something]"),
            vec!["putting", "[something]", "on", "[something]"]
        );
        assert!(tokenize_caption("").is_empty());
        assert_eq!(tokenize_caption("red,blue"), vec!["red", "blue"]);
    }

    #[test]
    fn vocabulary_threshold_is_inclusive_at_six() {
        let mut captions = Vec::new();
        for _ in 0..6 {
            captions.push(vec!["cup".to_string()]);
        }
        for _ in 0..5 {
            captions.push(vec!["ocelot".to_string()]);
        }
        let vocab = build_vocabulary(&captions, 6);
        assert!(vocab.contains("cup"));
        assert!(!vocab.contains("ocelot"));
        assert_eq!(vocab.index_of("ocelot"), SOMETHING);
    }

    #[test]
    fn empty_corpus_vocab_is_specials_only() {
        let vocab = build_vocabulary(&[], 6);
        assert_eq!(vocab.len(), 4);
        assert_eq!(vocab.token_at(PAD), Some("<pad>"));
        assert_eq!(vocab.token_at(SOMETHING), Some(SOMETHING_TEXT));
    }

    #[test]
    fn vocab_order_descending_count_then_lexicographic() {
        let captions = vec![
            vec!["b".to_string(), "b".to_string(), "a".to_string()],
            vec!["a".to_string(), "c".to_string(), "c".to_string()],
        ];
        let vocab = build_vocabulary(&captions, 1);
        // a, b, c all occur twice -> lexicographic after specials
        assert_eq!(vocab.token_at(4), Some("a"));
        assert_eq!(vocab.token_at(5), Some("b"));
        assert_eq!(vocab.token_at(6), Some("c"));
    }

    #[test]
    fn encode_pads_to_fixed_storage() {
        let vocab = build_vocabulary(
            &[vec!["a".into(), "b".into(), "c".into(), "d".into(), "e".into(), "f".into()]],
            1,
        );
        let toks: Vec<String> = ["a", "b", "c", "d", "e", "f"].iter().map(|s| s.to_string()).collect();
        let seq = encode_tokens(&toks, &vocab, 14);
        assert_eq!(seq.len(), 16);
        assert_eq!(seq.indices()[0], BOS);
        assert_eq!(seq.indices()[7], EOS);
        assert_eq!(seq.content_len(), 6);
        assert!(seq.indices()[8..].iter().all(|&i| i == PAD));
    }

    #[test]
    fn encode_truncates_long_captions() {
        let vocab = build_vocabulary(&[vec!["w".to_string(); 20]], 1);
        let toks = vec!["w".to_string(); 20];
        let seq = encode_tokens(&toks, &vocab, 14);
        assert_eq!(seq.content_len(), 14);
        assert_eq!(seq.len(), 16);
    }

    #[test]
    fn encode_unknown_maps_to_something() {
        let vocab = build_vocabulary(&[], 1);
        let seq = encode_tokens(&["mystery".to_string()], &vocab, 14);
        assert_eq!(seq.content()[0], SOMETHING);
    }

    #[test]
    fn hierarchy_lookup_and_errors() {
        let h = LabelHierarchy::new(vec![0, 0, 1, 1], 2).unwrap();
        assert_eq!(coarse_of_fine(2, &h).unwrap(), 1);
        assert!(coarse_of_fine(4, &h).is_err());
        let ident = LabelHierarchy::identity(5);
        assert_eq!(coarse_of_fine(3, &ident).unwrap(), 3);
    }

    #[test]
    fn load_annotations_round_trip_and_errors() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("annotations.jsonl");
        std::fs::write(
            &path,
            concat!(
                r#"{"id":"81955","group":3,"category":7,"template":"Holding [something] in front of [something]","placeholders":["a blue plastic cap","a men's short sleeve shirt"],"caption":"Holding a blue plastic cap in front of a men short sleeve shirt"}"#,
                "\n"
            ),
        )
        .unwrap();
        let records = load_annotations(&path).unwrap();
        assert_eq!(records.len(), 1);
        assert_eq!(records[0].video_id, "81955");
        assert_eq!(records[0].simplified(), "Holding cap in front of shirt");

        // empty file -> empty list
        let empty = dir.path().join("empty.jsonl");
        std::fs::write(&empty, "").unwrap();
        assert!(load_annotations(&empty).unwrap().is_empty());

        // slot/placeholder mismatch -> validation error naming the video
        let bad = dir.path().join("bad.jsonl");
        std::fs::write(
            &bad,
            r#"{"id":"v1","group":0,"category":0,"template":"Moving [something] next to [something]","placeholders":["pen"],"caption":"x"}"#,
        )
        .unwrap();
        let err = load_annotations(&bad).unwrap_err();
        assert!(err.to_string().contains("v1"));

        // malformed json -> parse error naming the line
        let mal = dir.path().join("mal.jsonl");
        std::fs::write(&mal, "{not json}\n").unwrap();
        let err = load_annotations(&mal).unwrap_err();
        assert!(err.to_string().contains(":1"));
    }

    #[test]
    fn token_sequence_invariants() {
        assert!(TokenSequence::new(vec![BOS, 5, EOS, PAD]).is_ok());
        assert!(TokenSequence::new(vec![5, EOS]).is_err()); // no BOS
        assert!(TokenSequence::new(vec![BOS, 5, PAD, EOS]).is_err()); // PAD before EOS
        assert!(TokenSequence::new(vec![BOS, EOS, 5]).is_err()); // content after EOS
        assert!(TokenSequence::new(vec![BOS, 5, EOS, EOS]).is_err()); // two EOS
    }

    #[test]
    fn vocab_file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("vocab.txt");
        let captions = vec![vec!["holding".to_string(), "cap".to_string()]];
        let vocab = build_vocabulary(&captions, 1);
        vocab.save(&path).unwrap();
        let loaded = Vocabulary::load(&path).unwrap();
        assert_eq!(vocab, loaded);
        let text = std::fs::read_to_string(&path).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(&lines[..4], &["<pad>", "<bos>", "<eos>", "[something]"]);
    }
}
