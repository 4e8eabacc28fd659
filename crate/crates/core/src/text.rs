//! Italian text model: tokenization, syllable counting, GULPEASE readability
//! and segmentation into short phrases of one to five words.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Largest phrase the segmenter will ever produce.
pub const MAX_PHRASE_WORDS: usize = 5;

const SENTENCE_TERMINATORS: [char; 5] = ['.', '?', '!', ';', ':'];

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TextError {
    #[error("text contains no word tokens")]
    EmptyText,
    #[error("word {0:?} has no vowel")]
    NoVowel(String),
    #[error("max_words must be between 1 and {MAX_PHRASE_WORDS}, got {0}")]
    InvalidMaxWords(usize),
    #[error("reading duration must be positive, got {0}")]
    NonPositiveDuration(f64),
    #[error("syllable count must be positive")]
    NoSyllables,
}

pub type Result<T> = std::result::Result<T, TextError>;

/// A word token and its byte span in the source text.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Word {
    pub text: String,
    pub start: usize,
    pub end: usize,
}

/// Inclusive range of word indices forming one sentence.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Sentence {
    pub first_word: usize,
    pub last_word: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Document {
    pub id: String,
    pub title: String,
    pub raw_text: String,
    pub words: Vec<Word>,
    pub sentences: Vec<Sentence>,
}

impl Document {
    /// Tokenizes `raw_text` into words and sentences.
    ///
    /// Words are whitespace-delimited chunks with leading and trailing
    /// punctuation stripped; anything between the first and last alphanumeric
    /// character stays in the word, so elisions like `l'oceano` are one token.
    /// A sentence ends at any chunk whose trailing punctuation contains one of
    /// `. ? ! ; :`.
    pub fn new(id: impl Into<String>, title: impl Into<String>, raw_text: impl Into<String>) -> Result<Self> {
        let raw_text = raw_text.into();
        let mut words = Vec::new();
        let mut sentences = Vec::new();
        let mut sentence_start: Option<usize> = None;

        for (chunk_start, chunk) in whitespace_chunks(&raw_text) {
            let first = chunk.char_indices().find(|(_, c)| c.is_alphanumeric());
            let last = chunk.char_indices().rev().find(|(_, c)| c.is_alphanumeric());
            let trailing = match (first, last) {
                (Some((first, _)), Some((last, last_char))) => {
                    let end = last + last_char.len_utf8();
                    words.push(Word {
                        text: chunk[first..end].to_string(),
                        start: chunk_start + first,
                        end: chunk_start + end,
                    });
                    sentence_start.get_or_insert(words.len() - 1);
                    &chunk[end..]
                }
                _ => chunk,
            };
            if trailing.contains(SENTENCE_TERMINATORS) {
                if let Some(first_word) = sentence_start.take() {
                    sentences.push(Sentence { first_word, last_word: words.len() - 1 });
                }
            }
        }
        if let Some(first_word) = sentence_start {
            sentences.push(Sentence { first_word, last_word: words.len() - 1 });
        }
        if words.is_empty() {
            return Err(TextError::EmptyText);
        }
        Ok(Self { id: id.into(), title: title.into(), raw_text, words, sentences })
    }

    /// Source text between word `i - 1` and word `i`; index `words.len()`
    /// yields the tail after the last word.
    pub fn separator(&self, i: usize) -> &str {
        let from = if i == 0 { 0 } else { self.words[i - 1].end };
        let to = self.words.get(i).map_or(self.raw_text.len(), |w| w.start);
        &self.raw_text[from..to]
    }

    /// True when punctuation separates word `i` from the next word (or ends the text).
    pub fn punctuated_after(&self, i: usize) -> bool {
        self.separator(i + 1).chars().any(|c| !c.is_whitespace())
    }

    /// Alphabetic characters over all words; digits and apostrophes are not letters.
    pub fn letter_count(&self) -> usize {
        self.words
            .iter()
            .map(|w| w.text.chars().filter(|c| c.is_alphabetic()).count())
            .sum()
    }
}

pub fn tokenize(raw_text: &str) -> Result<Document> {
    Document::new("text", "", raw_text)
}

fn whitespace_chunks(text: &str) -> impl Iterator<Item = (usize, &str)> {
    let mut rest = text.char_indices().peekable();
    std::iter::from_fn(move || {
        while let Some(&(_, c)) = rest.peek() {
            if !c.is_whitespace() {
                break;
            }
            rest.next();
        }
        let (start, _) = *rest.peek()?;
        let mut end = text.len();
        while let Some(&(i, c)) = rest.peek() {
            if c.is_whitespace() {
                end = i;
                break;
            }
            rest.next();
        }
        Some((start, &text[start..end]))
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Vowel {
    Strong,
    Weak,
}

fn classify(c: char) -> Option<Vowel> {
    match c {
        'a' | 'e' | 'o' => Some(Vowel::Strong),
        // an explicit accent marks stress, which blocks diphthong merging
        'à' | 'á' | 'è' | 'é' | 'ì' | 'í' | 'ò' | 'ó' | 'ù' | 'ú' => Some(Vowel::Strong),
        'i' | 'u' | 'y' => Some(Vowel::Weak),
        _ => None,
    }
}

/// Counts syllables in an Italian word by counting vowel nuclei.
///
/// Each maximal run of vowels contributes one nucleus per strong vowel
/// (`a e o` or any accented vowel), and at least one: unstressed `i`/`u`
/// glide into their neighbours. The `u` of `qu` before a vowel is a glide and
/// never counts.
pub fn count_syllables(word: &str) -> Result<usize> {
    let chars: Vec<char> = word.chars().flat_map(char::to_lowercase).collect();
    let mut nuclei = 0;
    let mut run: Option<(usize, usize)> = None; // (strong, weak)
    for (i, &c) in chars.iter().enumerate() {
        let glide_after_q = c == 'u'
            && i > 0
            && chars[i - 1] == 'q'
            && chars.get(i + 1).copied().and_then(classify).is_some();
        match classify(c).filter(|_| !glide_after_q) {
            Some(kind) => {
                let (strong, weak) = run.get_or_insert((0, 0));
                match kind {
                    Vowel::Strong => *strong += 1,
                    Vowel::Weak => *weak += 1,
                }
            }
            None => {
                if let Some((strong, _)) = run.take() {
                    nuclei += strong.max(1);
                }
            }
        }
    }
    if let Some((strong, _)) = run {
        nuclei += strong.max(1);
    }
    if nuclei == 0 {
        return Err(TextError::NoVowel(word.to_string()));
    }
    Ok(nuclei)
}

/// GULPEASE index from raw counts, clamped to [0, 100].
pub fn gulpease_from_counts(words: usize, letters: usize, sentences: usize) -> Result<f64> {
    if words == 0 || sentences == 0 {
        return Err(TextError::EmptyText);
    }
    Ok(gulpease_unclamped(words, letters, sentences).clamp(0.0, 100.0))
}

pub fn gulpease_unclamped(words: usize, letters: usize, sentences: usize) -> f64 {
    89.0 + (300.0 * sentences as f64 - 10.0 * letters as f64) / words as f64
}

pub fn gulpease(doc: &Document) -> Result<f64> {
    gulpease_from_counts(doc.words.len(), doc.letter_count(), doc.sentences.len())
}

/// A run of consecutive words read and highlighted as one unit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Phrase {
    pub index: usize,
    /// Inclusive `[first_word, last_word]`.
    pub word_span: [usize; 2],
    pub syllable_count: usize,
}

impl Phrase {
    pub fn first_word(&self) -> usize {
        self.word_span[0]
    }

    pub fn last_word(&self) -> usize {
        self.word_span[1]
    }

    pub fn word_count(&self) -> usize {
        self.word_span[1] - self.word_span[0] + 1
    }

    pub fn words(&self) -> std::ops::RangeInclusive<usize> {
        self.word_span[0]..=self.word_span[1]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentedText {
    #[serde(flatten)]
    pub document: Document,
    /// Syllables per word, parallel to `document.words`.
    pub word_syllables: Vec<usize>,
    pub phrases: Vec<Phrase>,
    pub total_syllables: usize,
    pub gulpease: f64,
}

impl SegmentedText {
    pub fn word_count(&self) -> usize {
        self.document.words.len()
    }

    pub fn phrase_of_word(&self, word: usize) -> Option<usize> {
        let idx = self.phrases.partition_point(|p| p.last_word() < word);
        self.phrases.get(idx).filter(|p| p.first_word() <= word).map(|p| p.index)
    }
}

/// Splits the document into phrases.
///
/// Phrases break at every punctuation mark; a punctuation-free run longer
/// than `max_words` is cut greedily into chunks of `max_words` with the
/// remainder last. Tokens without a vowel (numerals, abbreviations) count as
/// one syllable here.
pub fn segment_phrases(doc: Document, max_words: usize) -> Result<SegmentedText> {
    if !(1..=MAX_PHRASE_WORDS).contains(&max_words) {
        return Err(TextError::InvalidMaxWords(max_words));
    }
    if doc.words.is_empty() {
        return Err(TextError::EmptyText);
    }
    let word_syllables: Vec<usize> = doc
        .words
        .iter()
        .map(|w| count_syllables(&w.text).unwrap_or(1))
        .collect();

    let mut phrases = Vec::new();
    let mut run_start = 0;
    for i in 0..doc.words.len() {
        let run_ends = i + 1 == doc.words.len() || doc.punctuated_after(i);
        if !run_ends {
            continue;
        }
        let mut first = run_start;
        while first <= i {
            let last = (first + max_words - 1).min(i);
            phrases.push(Phrase {
                index: phrases.len(),
                word_span: [first, last],
                syllable_count: word_syllables[first..=last].iter().sum(),
            });
            first = last + 1;
        }
        run_start = i + 1;
    }

    let total_syllables = phrases.iter().map(|p| p.syllable_count).sum();
    let gulpease = gulpease(&doc)?;
    Ok(SegmentedText { document: doc, word_syllables, phrases, total_syllables, gulpease })
}

/// Tokenizes and segments in one step.
pub fn segment_text(raw_text: &str, max_words: usize) -> Result<SegmentedText> {
    segment_phrases(tokenize(raw_text)?, max_words)
}

/// Reading speed in syllables per second.
pub fn reading_speed(total_syllables: usize, duration_s: f64) -> Result<f64> {
    if !(duration_s > 0.0) {
        return Err(TextError::NonPositiveDuration(duration_s));
    }
    if total_syllables == 0 {
        return Err(TextError::NoSyllables);
    }
    Ok(total_syllables as f64 / duration_s)
}
