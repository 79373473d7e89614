//! Dictionary-driven tokenizer for Japanese with script-run and character
//! bigram fallbacks.

use std::collections::HashSet;
use std::fs;
use std::io;
use std::path::Path;

const DEFAULT_LEXICON: &str = include_str!("../../../../data/topics/lexicon_ja.txt");
const DEFAULT_STOPWORDS: &str = include_str!("../../../../data/topics/stopwords_ja.txt");

/// Kanji runs longer than this with no dictionary entry are split into
/// overlapping character bigrams.
pub const MAX_KANJI_RUN: usize = 4;

pub trait Tokenizer: Send + Sync {
    fn tokenize(&self, sentence: &str) -> Vec<String>;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Script {
    Kanji,
    Hiragana,
    Katakana,
    Alnum,
    Sep,
}

fn script(c: char) -> Script {
    match c {
        '々' | '〆' | 'ヶ' | '\u{3400}'..='\u{4DBF}' | '\u{4E00}'..='\u{9FFF}' | '\u{F900}'..='\u{FAFF}' => {
            Script::Kanji
        }
        '\u{3041}'..='\u{309F}' => Script::Hiragana,
        '\u{30A0}'..='\u{30FF}' | '\u{31F0}'..='\u{31FF}' => Script::Katakana,
        c if c.is_alphanumeric() => Script::Alnum,
        _ => Script::Sep,
    }
}

/// Full-width ASCII to half-width, then ASCII lowercase.
fn normalize(c: char) -> char {
    let c = match c {
        '\u{FF01}'..='\u{FF5E}' => char::from_u32(c as u32 - 0xFEE0).unwrap_or(c),
        '\u{3000}' => ' ',
        _ => c,
    };
    c.to_ascii_lowercase()
}

fn parse_list(text: &str) -> impl Iterator<Item = String> + '_ {
    text.lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .map(|l| l.chars().map(normalize).collect())
}

/// Longest dictionary match first; otherwise one token per script run.
/// Hiragana outside the dictionary is treated as inflection and skipped.
#[derive(Debug, Clone)]
pub struct LexiconTokenizer {
    lexicon: HashSet<Vec<char>>,
    max_entry: usize,
    stopwords: HashSet<String>,
    use_stopwords: bool,
}

impl Default for LexiconTokenizer {
    fn default() -> Self {
        Self::from_lists(DEFAULT_LEXICON, DEFAULT_STOPWORDS)
    }
}

impl LexiconTokenizer {
    /// Both lists are one term per line; `#` starts a comment line.
    pub fn from_lists(lexicon: &str, stopwords: &str) -> Self {
        let lexicon: HashSet<Vec<char>> = parse_list(lexicon).map(|s| s.chars().collect()).collect();
        let max_entry = lexicon.iter().map(Vec::len).max().unwrap_or(0);
        Self {
            lexicon,
            max_entry,
            stopwords: parse_list(stopwords).collect(),
            use_stopwords: true,
        }
    }

    pub fn from_files(lexicon: Option<&Path>, stopwords: Option<&Path>) -> io::Result<Self> {
        let lex = match lexicon {
            Some(p) => fs::read_to_string(p)?,
            None => DEFAULT_LEXICON.to_string(),
        };
        let stop = match stopwords {
            Some(p) => fs::read_to_string(p)?,
            None => DEFAULT_STOPWORDS.to_string(),
        };
        Ok(Self::from_lists(&lex, &stop))
    }

    pub fn with_stopwords(mut self, enabled: bool) -> Self {
        self.use_stopwords = enabled;
        self
    }

    fn longest_entry(&self, chars: &[char], at: usize) -> usize {
        let limit = self.max_entry.min(chars.len() - at);
        (1..=limit)
            .rev()
            .find(|&len| self.lexicon.contains(&chars[at..at + len]))
            .unwrap_or(0)
    }

    fn push(&self, out: &mut Vec<String>, term: String) {
        if term.chars().all(|c| c.is_ascii_digit()) {
            return;
        }
        if self.use_stopwords && self.stopwords.contains(&term) {
            return;
        }
        out.push(term);
    }
}

impl Tokenizer for LexiconTokenizer {
    fn tokenize(&self, sentence: &str) -> Vec<String> {
        let chars: Vec<char> = sentence.chars().map(normalize).collect();
        let mut out = Vec::new();
        let mut i = 0;
        while i < chars.len() {
            let kind = script(chars[i]);
            if kind == Script::Sep {
                i += 1;
                continue;
            }
            let hit = self.longest_entry(&chars, i);
            if hit > 0 {
                self.push(&mut out, chars[i..i + hit].iter().collect());
                i += hit;
                continue;
            }
            let mut j = i + 1;
            while j < chars.len() && script(chars[j]) == kind && self.longest_entry(&chars, j) == 0 {
                j += 1;
            }
            let run = &chars[i..j];
            if kind == Script::Hiragana {
                // inflection and okurigana outside the dictionary carry no topic
            } else if kind == Script::Kanji && run.len() > MAX_KANJI_RUN {
                for w in run.windows(2) {
                    self.push(&mut out, w.iter().collect());
                }
            } else {
                self.push(&mut out, run.iter().collect());
            }
            i = j;
        }
        out
    }
}

/// Splits on anything that is not alphanumeric; lowercase; no stop list.
#[derive(Debug, Clone, Copy, Default)]
pub struct WhitespaceTokenizer;

impl Tokenizer for WhitespaceTokenizer {
    fn tokenize(&self, sentence: &str) -> Vec<String> {
        sentence
            .split(|c: char| !c.is_alphanumeric())
            .filter(|t| !t.is_empty())
            .map(str::to_lowercase)
            .collect()
    }
}
