//! Shared text utilities: the mixed-script tokenizer used by both the
//! verifier's Jaccard filter and the ROUGE metrics, name normalization, and
//! character-offset slicing.
//!
//! Offsets throughout the crate are Unicode scalar-value offsets, never byte
//! offsets.

use std::collections::BTreeSet;

/// True for ideographs, kana and hangul syllables. Each such character is its
/// own token.
pub fn is_cjk(c: char) -> bool {
    matches!(c as u32,
        0x3040..=0x30FF       // hiragana, katakana
        | 0x3400..=0x4DBF     // extension A
        | 0x4E00..=0x9FFF     // unified ideographs
        | 0xAC00..=0xD7AF     // hangul syllables
        | 0xF900..=0xFAFF     // compatibility ideographs
        | 0x20000..=0x2A6DF   // extension B
        | 0x2A700..=0x2EBEF   // extensions C-F
        | 0x30000..=0x3134F) // extension G
}

fn is_apostrophe(c: char) -> bool {
    c == '\'' || c == '\u{2019}'
}

#[derive(Clone, Copy, PartialEq)]
enum Run {
    None,
    Word,
    Digits,
}

/// Splits text into tokens: every CJK character is a token, Latin letter runs
/// become lowercase words (inner apostrophes kept, normalized to `'`), and
/// digit runs are kept whole. Everything else separates tokens.
pub fn tokenize(text: &str) -> Vec<String> {
    let mut tokens = Vec::new();
    let mut current = String::new();
    let mut run = Run::None;
    let chars: Vec<char> = text.chars().collect();

    let flush = |current: &mut String, tokens: &mut Vec<String>| {
        if !current.is_empty() {
            tokens.push(std::mem::take(current));
        }
    };

    for (i, &c) in chars.iter().enumerate() {
        if is_cjk(c) {
            flush(&mut current, &mut tokens);
            run = Run::None;
            tokens.push(c.to_string());
        } else if c.is_ascii_digit() || (c.is_numeric() && c.to_digit(10).is_some()) {
            if run != Run::Digits {
                flush(&mut current, &mut tokens);
                run = Run::Digits;
            }
            current.push(c);
        } else if c.is_alphabetic() {
            if run != Run::Word {
                flush(&mut current, &mut tokens);
                run = Run::Word;
            }
            current.extend(c.to_lowercase());
        } else if is_apostrophe(c)
            && run == Run::Word
            && chars
                .get(i + 1)
                .is_some_and(|n| n.is_alphabetic() && !is_cjk(*n))
        {
            current.push('\'');
        } else {
            flush(&mut current, &mut tokens);
            run = Run::None;
        }
    }
    flush(&mut current, &mut tokens);
    tokens
}

/// Token set of `text` under [`tokenize`].
pub fn token_set(text: &str) -> BTreeSet<String> {
    tokenize(text).into_iter().collect()
}

/// Lookup key for entity names: trimmed, internal whitespace collapsed to a
/// single space, Latin case-folded, curly apostrophes straightened. CJK text
/// passes through unchanged.
pub fn normalize_name(name: &str) -> String {
    let mut out = String::with_capacity(name.len());
    for word in name.split_whitespace() {
        if !out.is_empty() {
            out.push(' ');
        }
        for c in word.chars() {
            if c == '\u{2019}' {
                out.push('\'');
            } else {
                out.extend(c.to_lowercase());
            }
        }
    }
    out
}

/// Number of Unicode scalar values in `s`.
pub fn char_len(s: &str) -> usize {
    s.chars().count()
}

/// Byte offset of every character boundary of a string, including the end.
/// Makes repeated char-offset slicing O(1).
#[derive(Debug, Clone)]
pub struct CharIndex {
    bounds: Vec<usize>,
}

impl CharIndex {
    pub fn new(s: &str) -> Self {
        let mut bounds: Vec<usize> = s.char_indices().map(|(b, _)| b).collect();
        bounds.push(s.len());
        Self { bounds }
    }

    /// Length in characters.
    pub fn len(&self) -> usize {
        self.bounds.len() - 1
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn byte_offset(&self, char_offset: usize) -> Option<usize> {
        self.bounds.get(char_offset).copied()
    }

    /// Character offset of a byte offset that lies on a char boundary.
    pub fn char_offset(&self, byte_offset: usize) -> Option<usize> {
        self.bounds.binary_search(&byte_offset).ok()
    }

    /// Slices `s` (the string this index was built from) by char offsets.
    pub fn slice<'a>(&self, s: &'a str, start: usize, end: usize) -> Option<&'a str> {
        if start > end {
            return None;
        }
        let (b0, b1) = (self.byte_offset(start)?, self.byte_offset(end)?);
        s.get(b0..b1)
    }
}

/// Share of CJK characters among the alphabetic/ideographic characters of
/// `text`; used to decide which script a rewrite should be rendered in.
pub fn is_mostly_cjk(text: &str) -> bool {
    let (mut cjk, mut latin) = (0usize, 0usize);
    for c in text.chars() {
        if is_cjk(c) {
            cjk += 1;
        } else if c.is_alphabetic() {
            latin += 1;
        }
    }
    cjk > latin
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cjk_characters_are_single_tokens() {
        assert_eq!(tokenize("胡鄂，字卓庵"), vec!["胡", "鄂", "字", "卓", "庵"]);
    }

    #[test]
    fn latin_words_are_lowercased_and_digits_kept_whole() {
        assert_eq!(
            tokenize("Born in the Third year (1630)."),
            vec!["born", "in", "the", "third", "year", "1630"]
        );
    }

    #[test]
    fn mixed_script_runs_split_at_script_changes() {
        assert_eq!(tokenize("崇祯3年1630AD"), vec!["崇", "祯", "3", "年", "1630", "ad"]);
    }

    #[test]
    fn inner_apostrophes_stay_in_words() {
        assert_eq!(tokenize("Zhuo’an's 'x'"), vec!["zhuo'an's", "x"]);
    }

    #[test]
    fn name_normalization() {
        assert_eq!(normalize_name("  Hu   E "), "hu e");
        assert_eq!(normalize_name("Zhuo’an"), "zhuo'an");
        assert_eq!(normalize_name(" 胡鄂 "), "胡鄂");
    }

    #[test]
    fn char_index_slices_by_scalar_values() {
        let s = "甲a乙";
        let idx = CharIndex::new(s);
        assert_eq!(idx.len(), 3);
        assert_eq!(idx.slice(s, 1, 3), Some("a乙"));
        assert_eq!(idx.slice(s, 2, 4), None);
        assert_eq!(idx.char_offset(4), Some(2));
    }
}
