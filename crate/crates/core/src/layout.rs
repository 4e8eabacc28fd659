//! Page layout with a fixed-width font model, and areas of interest (AOIs)
//! around phrases for gaze hit-testing.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::text::{Phrase, SegmentedText};

/// Text lines shown per page.
pub const LINES_PER_PAGE: usize = 7;
/// Line height over nominal glyph height.
pub const LINE_SPACING: f64 = 1.5;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LayoutError {
    #[error("word {word} is {width_px} px wide but lines are {line_width_px} px")]
    WordTooWide { word: usize, width_px: f64, line_width_px: f64 },
    #[error("phrase {phrase} is not on page {page}")]
    PhraseNotOnPage { phrase: usize, page: usize },
    #[error("phrase {0} does not fit on an empty page")]
    PageTooSmall(usize),
    #[error("invalid viewport: {0}")]
    InvalidViewport(&'static str),
    #[error("page geometry does not match page {0}")]
    GeometryMismatch(usize),
}

pub type Result<T> = std::result::Result<T, LayoutError>;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Rect {
    pub x: f64,
    pub y: f64,
    pub w: f64,
    pub h: f64,
}

impl Rect {
    pub const fn new(x: f64, y: f64, w: f64, h: f64) -> Self {
        Self { x, y, w, h }
    }

    pub fn right(&self) -> f64 {
        self.x + self.w
    }

    pub fn bottom(&self) -> f64 {
        self.y + self.h
    }

    /// Inclusive on every edge.
    pub fn contains(&self, p: Point) -> bool {
        p.x >= self.x && p.x <= self.right() && p.y >= self.y && p.y <= self.bottom()
    }

    pub fn contains_rect(&self, other: &Rect) -> bool {
        other.x >= self.x && other.right() <= self.right() && other.y >= self.y && other.bottom() <= self.bottom()
    }

    /// Open-interior overlap; rectangles sharing only an edge do not intersect.
    pub fn intersects(&self, other: &Rect) -> bool {
        self.x < other.right() && other.x < self.right() && self.y < other.bottom() && other.y < self.bottom()
    }

    pub fn expand(&self, pad: f64) -> Rect {
        Rect::new(self.x - pad, self.y - pad, self.w + 2.0 * pad, self.h + 2.0 * pad)
    }

    pub fn union(&self, other: &Rect) -> Rect {
        let x = self.x.min(other.x);
        let y = self.y.min(other.y);
        Rect::new(x, y, self.right().max(other.right()) - x, self.bottom().max(other.bottom()) - y)
    }

    pub fn center(&self) -> Point {
        Point::new(self.x + self.w / 2.0, self.y + self.h / 2.0)
    }

    /// Euclidean distance from `p` to the rectangle, zero inside.
    pub fn distance_to(&self, p: Point) -> f64 {
        let dx = (self.x - p.x).max(0.0).max(p.x - self.right());
        let dy = (self.y - p.y).max(0.0).max(p.y - self.bottom());
        dx.hypot(dy)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Viewport {
    pub width_px: u32,
    pub height_px: u32,
    pub char_width_px: f64,
    pub line_height_px: f64,
    pub margin_px: f64,
}

impl Default for Viewport {
    /// 28 px sans-serif on a 1280×720 tablet-sized canvas.
    fn default() -> Self {
        Self::from_font(1280, 720, 28.0, 64.0)
    }
}

impl Viewport {
    /// Viewport for a font of nominal glyph height `font_px`, with average
    /// advance of half an em and 1.5 line spacing.
    pub fn from_font(width_px: u32, height_px: u32, font_px: f64, margin_px: f64) -> Self {
        Self {
            width_px,
            height_px,
            char_width_px: font_px / 2.0,
            line_height_px: font_px * LINE_SPACING,
            margin_px,
        }
    }

    pub fn glyph_height_px(&self) -> f64 {
        self.line_height_px / LINE_SPACING
    }

    pub fn line_width_px(&self) -> f64 {
        self.width_px as f64 - 2.0 * self.margin_px
    }

    pub fn lines_per_page(&self) -> usize {
        let usable = self.height_px as f64 - 2.0 * self.margin_px;
        ((usable / self.line_height_px).floor() as usize).min(LINES_PER_PAGE)
    }

    fn validate(&self) -> Result<()> {
        if self.width_px == 0 || self.height_px == 0 {
            return Err(LayoutError::InvalidViewport("zero-sized viewport"));
        }
        if !(self.char_width_px > 0.0 && self.line_height_px > 0.0 && self.margin_px >= 0.0) {
            return Err(LayoutError::InvalidViewport("non-positive font metrics"));
        }
        if self.line_width_px() <= 0.0 || self.lines_per_page() == 0 {
            return Err(LayoutError::InvalidViewport("margins leave no room for text"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WordBox {
    /// Global word index.
    pub word: usize,
    pub rect: Rect,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Line {
    pub words: Vec<WordBox>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PageLayout {
    pub page_index: usize,
    pub line_height_px: f64,
    /// Inclusive range of phrase indices on this page.
    pub phrases: [usize; 2],
    pub lines: Vec<Line>,
}

impl PageLayout {
    pub fn first_phrase(&self) -> usize {
        self.phrases[0]
    }

    pub fn last_phrase(&self) -> usize {
        self.phrases[1]
    }

    pub fn has_phrase(&self, phrase: usize) -> bool {
        (self.phrases[0]..=self.phrases[1]).contains(&phrase)
    }

    pub fn first_word(&self) -> usize {
        self.lines[0].words[0].word
    }

    pub fn last_word(&self) -> usize {
        self.lines.last().and_then(|l| l.words.last()).map_or(0, |b| b.word)
    }

    pub fn word_count(&self) -> usize {
        self.lines.iter().map(|l| l.words.len()).sum()
    }

    pub fn boxes(&self) -> impl Iterator<Item = (usize, &WordBox)> {
        self.lines
            .iter()
            .enumerate()
            .flat_map(|(line, l)| l.words.iter().map(move |b| (line, b)))
    }

    /// Line index and box of a global word index.
    pub fn locate(&self, word: usize) -> Option<(usize, &WordBox)> {
        if word < self.first_word() || word > self.last_word() {
            return None;
        }
        self.boxes().find(|(_, b)| b.word == word)
    }

    /// Replaces the word geometry with externally measured boxes, e.g. boxes
    /// re-measured by a renderer with real glyph metrics. The word sequence
    /// and line structure must match.
    pub fn with_measured_boxes(&self, lines: Vec<Line>) -> Result<PageLayout> {
        let same_shape = lines.len() == self.lines.len()
            && lines.iter().zip(&self.lines).all(|(a, b)| {
                a.words.len() == b.words.len() && a.words.iter().zip(&b.words).all(|(x, y)| x.word == y.word)
            });
        let finite = lines
            .iter()
            .flat_map(|l| &l.words)
            .all(|b| [b.rect.x, b.rect.y, b.rect.w, b.rect.h].iter().all(|v| v.is_finite()) && b.rect.w >= 0.0 && b.rect.h >= 0.0);
        if !same_shape || !finite {
            return Err(LayoutError::GeometryMismatch(self.page_index));
        }
        Ok(PageLayout { lines, ..self.clone() })
    }
}

/// Area-of-interest settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AoiConfig {
    /// Calibration residual in px; widens every AOI.
    pub expansion_rms_px: f64,
    pub lookahead_words: usize,
}

impl Default for AoiConfig {
    fn default() -> Self {
        Self { expansion_rms_px: 0.0, lookahead_words: 5 }
    }
}

impl AoiConfig {
    pub fn pad(&self, line_height_px: f64) -> f64 {
        (0.5 * line_height_px).max(1.5 * self.expansion_rms_px)
    }
}

/// Non-whitespace characters displayed with each word: the word itself plus
/// the punctuation glued to it.
fn display_chars(seg: &SegmentedText) -> Vec<usize> {
    let doc = &seg.document;
    let n = doc.words.len();
    let mut chars: Vec<usize> = doc.words.iter().map(|w| w.text.chars().count()).collect();
    for gap in 0..=n {
        let sep = doc.separator(gap);
        let visible = |s: &str| s.chars().filter(|c| !c.is_whitespace()).count();
        // the part after the last whitespace opens the next word, the rest closes the previous one
        let split = sep.rfind(char::is_whitespace).map(|i| i + sep[i..].chars().next().unwrap().len_utf8());
        let (head, tail) = match split {
            Some(i) => (&sep[..i], &sep[i..]),
            None if gap == 0 => ("", sep),
            None => (sep, ""),
        };
        match gap {
            0 => chars[0] += visible(head) + visible(tail),
            g if g == n => chars[n - 1] += visible(head) + visible(tail),
            g => {
                chars[g - 1] += visible(head);
                chars[g] += visible(tail);
            }
        }
    }
    chars
}

/// Lays the text out into pages of at most seven lines.
///
/// Lines fill greedily. A phrase never straddles a page: when the next phrase
/// would spill past the last line, the page breaks before it.
pub fn paginate(seg: &SegmentedText, vp: &Viewport) -> Result<Vec<PageLayout>> {
    vp.validate()?;
    let widths: Vec<f64> = display_chars(seg).iter().map(|&c| c as f64 * vp.char_width_px).collect();
    let line_width = vp.line_width_px();
    for (word, &w) in widths.iter().enumerate() {
        if w > line_width {
            return Err(LayoutError::WordTooWide { word, width_px: w, line_width_px: line_width });
        }
    }
    let max_lines = vp.lines_per_page();
    let space = vp.char_width_px;

    // (line, x) placements of one phrase starting from a cursor
    let place = |phrase: &Phrase, mut line: usize, mut x: f64, mut line_used: bool| {
        let mut out = Vec::with_capacity(phrase.word_count());
        for word in phrase.words() {
            let w = widths[word];
            if line_used && x + space + w > line_width {
                line += 1;
                x = 0.0;
                line_used = false;
            }
            let left = if line_used { x + space } else { x };
            out.push((word, line, left));
            x = left + w;
            line_used = true;
        }
        (out, line, x)
    };

    let mut pages: Vec<Vec<(usize, usize, f64)>> = Vec::new();
    let mut current: Vec<(usize, usize, f64)> = Vec::new();
    let mut page_phrases: Vec<[usize; 2]> = Vec::new();
    let mut first_phrase = 0;
    let (mut line, mut x, mut used) = (0usize, 0.0f64, false);

    for phrase in &seg.phrases {
        let (mut placed, mut end_line, mut end_x) = place(phrase, line, x, used);
        if end_line >= max_lines {
            if current.is_empty() {
                return Err(LayoutError::PageTooSmall(phrase.index));
            }
            pages.push(std::mem::take(&mut current));
            page_phrases.push([first_phrase, phrase.index - 1]);
            first_phrase = phrase.index;
            (placed, end_line, end_x) = place(phrase, 0, 0.0, false);
            if end_line >= max_lines {
                return Err(LayoutError::PageTooSmall(phrase.index));
            }
        }
        current.extend(placed);
        (line, x, used) = (end_line, end_x, true);
    }
    pages.push(current);
    page_phrases.push([first_phrase, seg.phrases.len() - 1]);

    let glyph_h = vp.glyph_height_px();
    let top = vp.margin_px + (vp.line_height_px - glyph_h) / 2.0;
    Ok(pages
        .into_iter()
        .zip(page_phrases)
        .enumerate()
        .map(|(page_index, (placed, phrases))| {
            let n_lines = placed.last().map_or(0, |p| p.1 + 1);
            let mut lines = vec![Line { words: Vec::new() }; n_lines];
            for (word, line, left) in placed {
                lines[line].words.push(WordBox {
                    word,
                    rect: Rect::new(
                        vp.margin_px + left,
                        top + line as f64 * vp.line_height_px,
                        widths[word],
                        glyph_h,
                    ),
                });
            }
            PageLayout { page_index, line_height_px: vp.line_height_px, phrases, lines }
        })
        .collect())
}

/// Index of the page holding `phrase`.
pub fn page_of_phrase(pages: &[PageLayout], phrase: usize) -> Option<usize> {
    let idx = pages.partition_point(|p| p.last_phrase() < phrase);
    pages.get(idx).filter(|p| p.has_phrase(phrase)).map(|p| p.page_index)
}

/// Per-line union boxes of a set of consecutive words, unexpanded.
fn line_unions(page: &PageLayout, words: std::ops::RangeInclusive<usize>) -> Vec<Rect> {
    let mut out: Vec<(usize, Rect)> = Vec::new();
    for (line, b) in page.boxes().filter(|(_, b)| words.contains(&b.word)) {
        match out.last_mut() {
            Some((l, r)) if *l == line => *r = r.union(&b.rect),
            _ => out.push((line, b.rect)),
        }
    }
    out.into_iter().map(|(_, r)| r).collect()
}

/// Text boxes of a phrase, one union box per line, without expansion.
pub fn phrase_boxes(page: &PageLayout, phrase: &Phrase) -> Result<Vec<Rect>> {
    if !page.has_phrase(phrase.index) {
        return Err(LayoutError::PhraseNotOnPage { phrase: phrase.index, page: page.page_index });
    }
    Ok(line_unions(page, phrase.words()))
}

/// AOI of a phrase: per line it touches, the union of its word boxes expanded
/// by `max(0.5·line_height, 1.5·rms)` on every side.
pub fn aoi_for_phrase(page: &PageLayout, phrase: &Phrase, cfg: &AoiConfig) -> Result<Vec<Rect>> {
    let pad = cfg.pad(page.line_height_px);
    Ok(phrase_boxes(page, phrase)?.into_iter().map(|r| r.expand(pad)).collect())
}

/// Unexpanded boxes of the words right after a phrase, up to
/// `lookahead_words` and never past the end of the page.
pub fn lookahead_boxes(page: &PageLayout, seg: &SegmentedText, phrase_index: usize, cfg: &AoiConfig) -> Result<Vec<Rect>> {
    if !page.has_phrase(phrase_index) {
        return Err(LayoutError::PhraseNotOnPage { phrase: phrase_index, page: page.page_index });
    }
    let first = seg.phrases[phrase_index].last_word() + 1;
    let last = (first + cfg.lookahead_words).min(page.last_word() + 1);
    if first >= last {
        return Ok(Vec::new());
    }
    Ok(line_unions(page, first..=last - 1))
}

/// Look-ahead AOI: the expanded boxes of the words following the phrase.
/// Empty when the phrase is the last on its page.
pub fn lookahead_region(page: &PageLayout, seg: &SegmentedText, phrase_index: usize, cfg: &AoiConfig) -> Result<Vec<Rect>> {
    let pad = cfg.pad(page.line_height_px);
    Ok(lookahead_boxes(page, seg, phrase_index, cfg)?.into_iter().map(|r| r.expand(pad)).collect())
}

/// Union of the word boxes on a page's first line.
pub fn first_line_box(page: &PageLayout) -> Rect {
    let line = &page.lines[0].words;
    line.iter().skip(1).fold(line[0].rect, |acc, b| acc.union(&b.rect))
}

/// Expanded box around the whole first line of a page.
pub fn first_line_aoi(page: &PageLayout, cfg: &AoiConfig) -> Rect {
    first_line_box(page).expand(cfg.pad(page.line_height_px))
}
