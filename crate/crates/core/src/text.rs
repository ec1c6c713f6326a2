//! Shared text utilities: word counting, entity normalization and rule-based
//! sentence segmentation.
//!
//! Every component that segments or normalizes text goes through this module
//! so that offsets and matches agree across the crate.

/// Number of Unicode-whitespace separated tokens in `text`.
pub fn word_count(text: &str) -> usize {
    text.split_whitespace().count()
}

/// Canonical form of an entity string: lowercased, trimmed, with internal
/// whitespace runs collapsed to a single space.
pub fn normalize_entity(text: &str) -> String {
    let lowered = text.to_lowercase();
    let mut out = String::with_capacity(lowered.len());
    for token in lowered.split_whitespace() {
        if !out.is_empty() {
            out.push(' ');
        }
        out.push_str(token);
    }
    out
}

/// Lowercase a single char, keeping it unchanged when its lowercase form is
/// not a single char. Keeps char offsets aligned between a text and its
/// lowercased view.
pub(crate) fn lower_char(c: char) -> char {
    let mut lower = c.to_lowercase();
    match (lower.next(), lower.next()) {
        (Some(l), None) => l,
        _ => c,
    }
}

/// Substitute `{name}` placeholders in a single left-to-right pass, so values
/// that themselves contain braces are never re-expanded. Unknown placeholders
/// are left as written.
pub fn fill_template(template: &str, values: &[(&str, &str)]) -> String {
    let mut out = String::with_capacity(template.len());
    let mut rest = template;
    while let Some(open) = rest.find('{') {
        out.push_str(&rest[..open]);
        let after = &rest[open + 1..];
        let replaced = after.find('}').and_then(|close| {
            let name = &after[..close];
            values.iter().find(|(k, _)| *k == name).map(|(_, v)| (*v, close))
        });
        match replaced {
            Some((value, close)) => {
                out.push_str(value);
                rest = &after[close + 1..];
            }
            None => {
                out.push('{');
                rest = after;
            }
        }
    }
    out.push_str(rest);
    out
}

/// Tokens that end in a period without ending a sentence.
const ABBREVIATIONS: &[&str] = &[
    "mr.", "mrs.", "ms.", "dr.", "prof.", "sr.", "jr.", "st.", "mt.", "u.s.", "u.k.", "u.n.", "e.g.", "i.e.", "etc.",
    "vs.", "no.", "inc.", "ltd.", "co.", "corp.", "gen.", "col.", "lt.", "sgt.", "capt.", "gov.", "sen.", "rep.",
    "jan.", "feb.", "mar.", "apr.", "jun.", "jul.", "aug.", "sep.", "sept.", "oct.", "nov.", "dec.", "a.m.", "p.m.",
];

const TERMINATORS: &[char] = &['.', '!', '?'];
const CLOSERS: &[char] = &['"', '\'', ')', ']', '\u{201d}', '\u{2019}'];

/// One segmented sentence with char offsets into the source text.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Sentence {
    /// Char offset of the first char.
    pub start: usize,
    /// Char offset one past the last char.
    pub end: usize,
    pub text: String,
}

/// Split `text` into sentences.
///
/// A sentence ends at a run of `.`, `!` or `?` (optionally followed by closing
/// quotes or brackets) that is followed by whitespace or the end of the text.
/// A lone period ending a known abbreviation ("Mr.", "U.S.", ...) does not end
/// a sentence. Sentences are trimmed and empty ones are dropped.
pub fn split_sentences(text: &str) -> Vec<Sentence> {
    let chars: Vec<char> = text.chars().collect();
    let mut sentences = Vec::new();
    let mut seg_start = 0;
    let mut i = 0;
    while i < chars.len() {
        if !TERMINATORS.contains(&chars[i]) {
            i += 1;
            continue;
        }
        let run_start = i;
        while i < chars.len() && TERMINATORS.contains(&chars[i]) {
            i += 1;
        }
        let run_end = i;
        while i < chars.len() && CLOSERS.contains(&chars[i]) {
            i += 1;
        }
        let at_boundary = i == chars.len() || chars[i].is_whitespace();
        if !at_boundary {
            continue;
        }
        if run_end - run_start == 1 && chars[run_start] == '.' && is_abbreviation(&chars[seg_start..run_end]) {
            continue;
        }
        push_trimmed(&chars, seg_start, i, &mut sentences);
        seg_start = i;
    }
    push_trimmed(&chars, seg_start, chars.len(), &mut sentences);
    sentences
}

fn is_abbreviation(segment: &[char]) -> bool {
    let word_start = segment.iter().rposition(|c| c.is_whitespace()).map_or(0, |p| p + 1);
    let word: String = segment[word_start..]
        .iter()
        .skip_while(|c| matches!(c, '(' | '[' | '"' | '\'' | '\u{201c}' | '\u{2018}'))
        .map(|&c| lower_char(c))
        .collect();
    ABBREVIATIONS.contains(&word.as_str())
}

fn push_trimmed(chars: &[char], mut start: usize, mut end: usize, out: &mut Vec<Sentence>) {
    while start < end && chars[start].is_whitespace() {
        start += 1;
    }
    while end > start && chars[end - 1].is_whitespace() {
        end -= 1;
    }
    if start < end {
        out.push(Sentence {
            start,
            end,
            text: chars[start..end].iter().collect(),
        });
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn texts(text: &str) -> Vec<String> {
        split_sentences(text).into_iter().map(|s| s.text).collect()
    }

    #[test]
    fn counts_words_on_unicode_whitespace() {
        assert_eq!(word_count(""), 0);
        assert_eq!(word_count("  one\ttwo\nthree\u{2003}four "), 4);
    }

    #[test]
    fn normalizes_entities() {
        assert_eq!(normalize_entity("  Edvard   VANN\n"), "edvard vann");
        assert_eq!(normalize_entity(""), "");
    }

    #[test]
    fn splits_on_terminators() {
        assert_eq!(
            texts("First one. Second one! Third one? Fourth"),
            vec!["First one.", "Second one!", "Third one?", "Fourth"]
        );
    }

    #[test]
    fn abbreviation_guard() {
        assert_eq!(
            texts("Mr. Vann met Dr. Bodrogi in the U.S. embassy. They left."),
            vec!["Mr. Vann met Dr. Bodrogi in the U.S. embassy.", "They left."]
        );
    }

    #[test]
    fn decimals_and_inner_periods_do_not_split() {
        assert_eq!(
            texts("It cost 3.5 million. Done."),
            vec!["It cost 3.5 million.", "Done."]
        );
        assert_eq!(texts("see www.example.com today."), vec!["see www.example.com today."]);
    }

    #[test]
    fn closing_quotes_stay_with_sentence() {
        assert_eq!(
            texts("He said \"stop.\" Then ran. Wait?! Ok..."),
            vec!["He said \"stop.\"", "Then ran.", "Wait?!", "Ok..."]
        );
    }

    #[test]
    fn offsets_are_char_based() {
        let text = "Ärger über alles. Zweiter Satz.";
        let sentences = split_sentences(text);
        let chars: Vec<char> = text.chars().collect();
        assert_eq!(sentences.len(), 2);
        for s in &sentences {
            let slice: String = chars[s.start..s.end].iter().collect();
            assert_eq!(slice, s.text);
        }
        assert_eq!(sentences[1].start, 18);
    }

    #[test]
    fn fills_templates_in_one_pass() {
        let filled = fill_template(
            "Q: {question} / {missing} / {a}",
            &[("question", "why {a}?"), ("a", "A")],
        );
        assert_eq!(filled, "Q: why {a}? / {missing} / A");
        assert_eq!(fill_template("no braces", &[]), "no braces");
        assert_eq!(fill_template("open { only", &[]), "open { only");
    }

    #[test]
    fn empty_and_whitespace() {
        assert!(split_sentences("").is_empty());
        assert!(split_sentences("   \n ").is_empty());
    }
}
