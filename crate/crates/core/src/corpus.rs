//! Segmented corpora and their position-tag encodings.
//!
//! Word files hold one sentence per line with words separated by single
//! spaces. In unit mode the base units of a word are joined by `_`
//! (`học_sinh giỏi`), otherwise every Unicode scalar value is a unit.
//! Morph files additionally join the morphs of a word with `//`
//! (`tu//o kremppo//j//a`).

use std::fmt;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

/// Unit occupying the boundary slot between two words in a BIESX stream.
///
/// Real units never contain a space, so the marker cannot collide with content.
pub const BOUNDARY_UNIT: &str = " ";

pub const MORPH_SEPARATOR: &str = "//";
pub const UNIT_SEPARATOR: char = '_';

/// Half-open range of unit indices.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Span {
    pub start: usize,
    pub end: usize,
}

impl Span {
    pub fn new(start: usize, end: usize) -> Self {
        Span { start, end }
    }

    pub fn len(&self) -> usize {
        self.end - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.end <= self.start
    }

    pub fn shift(&self, offset: usize) -> Span {
        Span::new(self.start + offset, self.end + offset)
    }
}

/// A sentence as a stream of base units with its gold segmentation.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Sentence {
    pub units: Vec<String>,
    /// Word spans over `units`; contiguous and covering.
    pub words: Vec<Span>,
    /// Per-word morph spans, relative to the start of the word.
    pub morphs: Option<Vec<Vec<Span>>>,
}

impl Sentence {
    /// Builds a sentence from words given as lists of units.
    pub fn from_words<W, U>(words: W) -> Result<Self>
    where
        W: IntoIterator<Item = U>,
        U: IntoIterator,
        U::Item: Into<String>,
    {
        let mut units = Vec::new();
        let mut spans = Vec::new();
        for word in words {
            let start = units.len();
            for unit in word {
                let unit = unit.into();
                if unit.is_empty() {
                    return Err(Error::MalformedWord { word: unit });
                }
                units.push(unit);
            }
            if units.len() == start {
                return Err(Error::MalformedWord {
                    word: String::new(),
                });
            }
            spans.push(Span::new(start, units.len()));
        }
        Ok(Sentence {
            units,
            words: spans,
            morphs: None,
        })
    }

    pub fn len(&self) -> usize {
        self.units.len()
    }

    pub fn is_empty(&self) -> bool {
        self.units.is_empty()
    }

    pub fn word_units(&self, word: usize) -> &[String] {
        let span = self.words[word];
        &self.units[span.start..span.end]
    }

    /// Morph spans in absolute unit indices, paired with the enclosing word span.
    pub fn absolute_morphs(&self) -> Option<Vec<(Span, Span)>> {
        let morphs = self.morphs.as_ref()?;
        let mut out = Vec::new();
        for (word, word_morphs) in self.words.iter().zip(morphs) {
            out.extend(word_morphs.iter().map(|m| (*word, m.shift(word.start))));
        }
        Some(out)
    }

    /// Checks the structural invariants of the segmentation.
    pub fn validate(&self) -> Result<()> {
        let mut next = 0;
        for (i, w) in self.words.iter().enumerate() {
            if w.start != next || w.is_empty() || w.end > self.units.len() {
                return Err(Error::ShapeMismatch(format!(
                    "word {i} span {}..{} does not continue the cover at {next}",
                    w.start, w.end
                )));
            }
            next = w.end;
        }
        if next != self.units.len() {
            return Err(Error::ShapeMismatch(format!(
                "words cover {next} of {} units",
                self.units.len()
            )));
        }
        if let Some(u) = self.units.iter().find(|u| u.is_empty()) {
            return Err(Error::MalformedWord { word: u.clone() });
        }
        if let Some(morphs) = &self.morphs {
            if morphs.len() != self.words.len() {
                return Err(Error::ShapeMismatch(format!(
                    "{} morph lists for {} words",
                    morphs.len(),
                    self.words.len()
                )));
            }
            for (w, list) in self.words.iter().zip(morphs) {
                let mut at = 0;
                for m in list {
                    if m.start != at || m.is_empty() {
                        return Err(Error::MalformedMorpheme {
                            word: self.units[w.start..w.end].concat(),
                        });
                    }
                    at = m.end;
                }
                if at != w.len() {
                    return Err(Error::MalformedMorpheme {
                        word: self.units[w.start..w.end].concat(),
                    });
                }
            }
        }
        Ok(())
    }

    /// Renders the sentence in the word file format.
    pub fn to_word_line(&self, unit_mode: bool) -> String {
        let joiner = if unit_mode { "_" } else { "" };
        self.words
            .iter()
            .map(|w| self.units[w.start..w.end].join(joiner))
            .collect::<Vec<_>>()
            .join(" ")
    }

    /// Renders the sentence in the morph file format. Words without morph
    /// annotation are written as single morphs.
    pub fn to_morph_line(&self, unit_mode: bool) -> String {
        let joiner = if unit_mode { "_" } else { "" };
        let mut words = Vec::with_capacity(self.words.len());
        for (i, w) in self.words.iter().enumerate() {
            let units = &self.units[w.start..w.end];
            match self.morphs.as_ref().map(|m| &m[i]) {
                Some(list) => words.push(
                    list.iter()
                        .map(|m| units[m.start..m.end].join(joiner))
                        .collect::<Vec<_>>()
                        .join(MORPH_SEPARATOR),
                ),
                None => words.push(units.join(joiner)),
            }
        }
        words.join(" ")
    }

    /// The unsegmented form the decoder consumes: characters run together
    /// (or units separated by spaces in unit mode) for word segmentation,
    /// words without morph separators for morpheme segmentation.
    pub fn to_raw_line(&self, scheme: TagScheme, unit_mode: bool) -> String {
        match scheme {
            TagScheme::Bies if unit_mode => self.units.join(" "),
            TagScheme::Bies => self.units.concat(),
            TagScheme::Biesx => {
                let joiner = if unit_mode { "_" } else { "" };
                self.words
                    .iter()
                    .map(|w| self.units[w.start..w.end].join(joiner))
                    .collect::<Vec<_>>()
                    .join(" ")
            }
        }
    }
}

fn split_units(word: &str, unit_mode: bool) -> Result<Vec<String>> {
    if word.is_empty() {
        return Err(Error::MalformedWord {
            word: word.to_string(),
        });
    }
    if unit_mode {
        let units: Vec<String> = word.split(UNIT_SEPARATOR).map(str::to_string).collect();
        if units.iter().any(String::is_empty) {
            return Err(Error::MalformedWord {
                word: word.to_string(),
            });
        }
        Ok(units)
    } else {
        Ok(word.chars().map(String::from).collect())
    }
}

fn trim_line(line: &str) -> Result<&str> {
    let line = line.trim_end_matches(['\n', '\r']);
    if line.trim().is_empty() {
        return Err(Error::EmptyLine);
    }
    Ok(line)
}

/// Parses a line of the word file format.
pub fn parse_word_line(line: &str, unit_mode: bool) -> Result<Sentence> {
    let line = trim_line(line)?;
    let words = line
        .split(' ')
        .map(|w| split_units(w, unit_mode))
        .collect::<Result<Vec<_>>>()?;
    Sentence::from_words(words)
}

/// Parses a line of the morph file format with character units.
pub fn parse_morpheme_line(line: &str) -> Result<Sentence> {
    parse_morpheme_line_with(line, false)
}

/// Parses a line of the morph file format; in unit mode the units of a
/// morph are joined by `_`.
pub fn parse_morpheme_line_with(line: &str, unit_mode: bool) -> Result<Sentence> {
    let line = trim_line(line)?;
    let mut units = Vec::new();
    let mut words = Vec::new();
    let mut morphs = Vec::new();
    for word in line.split(' ') {
        if word.is_empty() {
            return Err(Error::MalformedWord {
                word: word.to_string(),
            });
        }
        let start = units.len();
        let mut list = Vec::new();
        for morph in word.split(MORPH_SEPARATOR) {
            if morph.is_empty() {
                return Err(Error::MalformedMorpheme {
                    word: word.to_string(),
                });
            }
            let m_start = units.len() - start;
            units.extend(split_units(morph, unit_mode)?);
            list.push(Span::new(m_start, units.len() - start));
        }
        words.push(Span::new(start, units.len()));
        morphs.push(list);
    }
    Ok(Sentence {
        units,
        words,
        morphs: Some(morphs),
    })
}

/// Parses a line in the file format matching `scheme`.
pub fn parse_line(line: &str, scheme: TagScheme, unit_mode: bool) -> Result<Sentence> {
    match scheme {
        TagScheme::Bies => parse_word_line(line, unit_mode),
        TagScheme::Biesx => parse_morpheme_line_with(line, unit_mode),
    }
}

/// Parses unsegmented decoder input into a sentence whose units are known
/// but whose segmentation is trivial (one word for BIES, input words as
/// single morphs for BIESX).
pub fn parse_raw_line(line: &str, scheme: TagScheme, unit_mode: bool) -> Result<Sentence> {
    let line = trim_line(line)?;
    match scheme {
        TagScheme::Bies => {
            let units: Vec<String> = if unit_mode {
                line.split_whitespace().map(str::to_string).collect()
            } else {
                line.chars()
                    .filter(|c| !c.is_whitespace())
                    .map(String::from)
                    .collect()
            };
            Sentence::from_words([units])
        }
        TagScheme::Biesx => {
            let mut s = Sentence::from_words(
                line.split_whitespace()
                    .map(|w| split_units(w, unit_mode))
                    .collect::<Result<Vec<_>>>()?,
            )?;
            s.morphs = Some(
                s.words
                    .iter()
                    .map(|w| vec![Span::new(0, w.len())])
                    .collect(),
            );
            Ok(s)
        }
    }
}

/// Reads a segmented corpus file, skipping blank lines. Errors carry the
/// file path and 1-based line number.
pub fn read_corpus(path: &Path, scheme: TagScheme, unit_mode: bool) -> Result<Vec<Sentence>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let s = parse_line(line, scheme, unit_mode).map_err(|e| Error::AtLine {
            path: path.to_path_buf(),
            line: i + 1,
            source: Box::new(e),
        })?;
        out.push(s);
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[repr(u8)]
pub enum Tag {
    B = 0,
    I = 1,
    E = 2,
    S = 3,
    X = 4,
}

impl Tag {
    pub const ALL: [Tag; 5] = [Tag::B, Tag::I, Tag::E, Tag::S, Tag::X];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Tag> {
        Tag::ALL.get(i).copied()
    }

    pub fn symbol(self) -> char {
        match self {
            Tag::B => 'B',
            Tag::I => 'I',
            Tag::E => 'E',
            Tag::S => 'S',
            Tag::X => 'X',
        }
    }

    pub fn from_symbol(c: char) -> Option<Tag> {
        Tag::ALL.iter().copied().find(|t| t.symbol() == c)
    }
}

/// Position tag inventory: BIES for words, BIESX for morphs with word boundaries.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum TagScheme {
    #[default]
    Bies,
    Biesx,
}

impl TagScheme {
    pub fn tags(self) -> &'static [Tag] {
        match self {
            TagScheme::Bies => &Tag::ALL[..4],
            TagScheme::Biesx => &Tag::ALL,
        }
    }

    pub fn num_tags(self) -> usize {
        self.tags().len()
    }

    pub fn name(self) -> &'static str {
        match self {
            TagScheme::Bies => "bies",
            TagScheme::Biesx => "biesx",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "bies" => Ok(TagScheme::Bies),
            "biesx" => Ok(TagScheme::Biesx),
            other => Err(Error::Config(format!("unknown tag scheme {other:?}"))),
        }
    }
}

impl fmt::Display for TagScheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TagSequence {
    pub scheme: TagScheme,
    pub tags: Vec<Tag>,
}

impl TagSequence {
    pub fn new(scheme: TagScheme, tags: Vec<Tag>) -> Result<Self> {
        if let Some(t) = tags.iter().find(|t| t.index() >= scheme.num_tags()) {
            return Err(Error::SchemeMismatch(format!(
                "tag {} is not part of {scheme}",
                t.symbol()
            )));
        }
        Ok(TagSequence { scheme, tags })
    }

    pub fn from_indices(scheme: TagScheme, indices: &[usize]) -> Result<Self> {
        let tags = indices
            .iter()
            .map(|&i| {
                Tag::from_index(i).ok_or_else(|| {
                    Error::SchemeMismatch(format!("tag index {i} is not part of {scheme}"))
                })
            })
            .collect::<Result<Vec<_>>>()?;
        TagSequence::new(scheme, tags)
    }

    pub fn parse(scheme: TagScheme, s: &str) -> Result<Self> {
        let tags = s
            .chars()
            .filter(|c| !c.is_whitespace())
            .map(|c| {
                Tag::from_symbol(c)
                    .ok_or_else(|| Error::SchemeMismatch(format!("unknown tag symbol {c:?}")))
            })
            .collect::<Result<Vec<_>>>()?;
        TagSequence::new(scheme, tags)
    }

    pub fn indices(&self) -> Vec<usize> {
        self.tags.iter().map(|t| t.index()).collect()
    }

    pub fn len(&self) -> usize {
        self.tags.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tags.is_empty()
    }
}

impl fmt::Display for TagSequence {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for t in &self.tags {
            write!(f, "{}", t.symbol())?;
        }
        Ok(())
    }
}

/// The unit stream the model tags: the sentence units for BIES, and for
/// BIESX the units with a [`BOUNDARY_UNIT`] between consecutive words.
pub fn stream_units(s: &Sentence, scheme: TagScheme) -> Vec<String> {
    match scheme {
        TagScheme::Bies => s.units.clone(),
        TagScheme::Biesx => {
            let mut out = Vec::with_capacity(s.units.len() + s.words.len());
            for (i, w) in s.words.iter().enumerate() {
                if i > 0 {
                    out.push(BOUNDARY_UNIT.to_string());
                }
                out.extend_from_slice(&s.units[w.start..w.end]);
            }
            out
        }
    }
}

fn push_segment(tags: &mut Vec<Tag>, len: usize) {
    match len {
        0 => {}
        1 => tags.push(Tag::S),
        n => {
            tags.push(Tag::B);
            tags.extend(std::iter::repeat_n(Tag::I, n - 2));
            tags.push(Tag::E);
        }
    }
}

pub fn encode_tags(s: &Sentence, scheme: TagScheme) -> Result<TagSequence> {
    let mut tags = Vec::with_capacity(s.units.len() + s.words.len());
    match scheme {
        TagScheme::Bies => {
            for w in &s.words {
                push_segment(&mut tags, w.len());
            }
        }
        TagScheme::Biesx => {
            let morphs = s.morphs.as_ref().ok_or_else(|| {
                Error::SchemeMismatch("BIESX tagging needs morph annotation".into())
            })?;
            for (i, list) in morphs.iter().enumerate() {
                if i > 0 {
                    tags.push(Tag::X);
                }
                for m in list {
                    push_segment(&mut tags, m.len());
                }
            }
        }
    }
    Ok(TagSequence { scheme, tags })
}

/// Accumulates segments while walking a tag stream.
#[derive(Default)]
struct SegmentBuilder {
    units: Vec<String>,
    words: Vec<Span>,
    morphs: Vec<Vec<Span>>,
    word_start: usize,
    cur_morphs: Vec<Span>,
    open: Option<usize>,
}

impl SegmentBuilder {
    fn close_segment(&mut self) {
        if let Some(start) = self.open.take() {
            let end = self.units.len();
            if end > start {
                self.cur_morphs
                    .push(Span::new(start - self.word_start, end - self.word_start));
            }
        }
    }

    fn close_word(&mut self) {
        self.close_segment();
        let end = self.units.len();
        if end > self.word_start {
            self.words.push(Span::new(self.word_start, end));
            self.morphs.push(std::mem::take(&mut self.cur_morphs));
        }
        self.word_start = end;
    }

    fn open_segment(&mut self, segments_are_words: bool) {
        if segments_are_words {
            self.close_word();
        } else {
            self.close_segment();
        }
        self.open = Some(self.units.len());
    }

    fn push(&mut self, unit: &str, tag: Tag, segments_are_words: bool) {
        match tag {
            Tag::B | Tag::S | Tag::X => self.open_segment(segments_are_words),
            Tag::I | Tag::E => {
                if self.open.is_none() {
                    self.open_segment(segments_are_words);
                }
            }
        }
        self.units.push(unit.to_string());
        if matches!(tag, Tag::S | Tag::E) {
            if segments_are_words {
                self.close_word();
            } else {
                self.close_segment();
            }
        }
    }
}

/// Rebuilds a segmentation from a stream of units and tags.
///
/// Invalid tag sequences are repaired: B and S always open a segment, I or E
/// with no open segment opens one, X always closes the current word. In a
/// BIESX stream the boundary marker unit is never content and acts as X
/// whatever its tag; an X on a content unit closes the word and the unit
/// opens a new segment in the next word.
pub fn decode_tags(units: &[String], t: &TagSequence) -> Result<Sentence> {
    if units.len() != t.tags.len() {
        return Err(Error::LengthMismatch {
            expected: units.len(),
            found: t.tags.len(),
        });
    }
    let mut b = SegmentBuilder::default();
    match t.scheme {
        TagScheme::Bies => {
            for (unit, &tag) in units.iter().zip(&t.tags) {
                b.push(unit, tag, true);
            }
            b.close_word();
            Ok(Sentence {
                units: b.units,
                words: b.words,
                morphs: None,
            })
        }
        TagScheme::Biesx => {
            for (unit, &tag) in units.iter().zip(&t.tags) {
                if unit == BOUNDARY_UNIT {
                    b.close_word();
                } else if tag == Tag::X {
                    b.close_word();
                    b.push(unit, Tag::B, false);
                } else {
                    b.push(unit, tag, false);
                }
            }
            b.close_word();
            Ok(Sentence {
                units: b.units,
                words: b.words,
                morphs: Some(b.morphs),
            })
        }
    }
}

pub const DEFAULT_LENGTH_LIMIT: usize = 300;

/// Splits a unit stream into consecutive fragments of at most `limit` units.
pub fn chop<T>(units: &[T], limit: usize) -> Result<Vec<&[T]>> {
    if units.is_empty() {
        return Err(Error::EmptyInput);
    }
    if limit == 0 {
        return Err(Error::Config("length limit must be at least 1".into()));
    }
    Ok(units.chunks(limit).collect())
}

/// Concatenates fragment tag sequences back into one sequence.
pub fn stitch(fragments: &[TagSequence]) -> Result<TagSequence> {
    let scheme = fragments.first().ok_or(Error::EmptyInput)?.scheme;
    let mut tags = Vec::with_capacity(fragments.iter().map(TagSequence::len).sum());
    for f in fragments {
        if f.scheme != scheme {
            return Err(Error::SchemeMismatch(format!(
                "cannot stitch {} fragment onto {scheme}",
                f.scheme
            )));
        }
        tags.extend_from_slice(&f.tags);
    }
    Ok(TagSequence { scheme, tags })
}
