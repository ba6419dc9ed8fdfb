//! Section extraction and rule-based sentence segmentation for free-text
//! radiology reports.
//!
//! A report is reduced to the sentences of its FINDINGS and IMPRESSION
//! sections. Reports without either header fall back to their last
//! paragraph (the text after the final blank line).

use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

use super::CorpusError;

/// Abbreviations that never end a sentence when followed by a period.
pub const DEFAULT_ABBREVIATIONS: &[&str] = &["Dr", "Mr", "Mrs", "vs", "No", "e.g", "i.e"];

/// Unparsed report text as it appears in a corpus file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RawReport {
    pub id: String,
    pub text: String,
}

impl RawReport {
    pub fn new(id: impl Into<String>, text: impl Into<String>) -> Self {
        Self {
            id: id.into(),
            text: text.into(),
        }
    }
}

/// Where the kept sentences of a report came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SourceSection {
    FindingsImpression,
    LastParagraph,
}

/// A section-extracted, sentence-segmented report. Always holds at least one
/// sentence, in original document order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StructuredReport {
    id: String,
    sentences: Vec<String>,
    source_section: SourceSection,
}

impl StructuredReport {
    /// Builds a report from already segmented sentences.
    pub fn from_sentences(
        id: impl Into<String>,
        sentences: Vec<String>,
        source_section: SourceSection,
    ) -> Result<Self, CorpusError> {
        let id = id.into();
        if sentences.is_empty() {
            return Err(CorpusError::NoContent(id));
        }
        if sentences.iter().any(|s| s.trim().is_empty()) {
            return Err(CorpusError::BlankSentence(id));
        }
        Ok(Self {
            id,
            sentences,
            source_section,
        })
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn sentences(&self) -> &[String] {
        &self.sentences
    }

    /// Number of sentences (`m`).
    pub fn len(&self) -> usize {
        self.sentences.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sentences.is_empty()
    }

    pub fn source_section(&self) -> SourceSection {
        self.source_section
    }

    /// All sentences joined with a single space.
    pub fn joined(&self) -> String {
        self.sentences.join(" ")
    }
}

/// Splits text at `.`, `!` or `?` followed by whitespace, unless the token
/// before a period is a single letter or a listed abbreviation.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SentenceSplitter {
    abbreviations: Vec<String>,
}

impl Default for SentenceSplitter {
    fn default() -> Self {
        Self::with_abbreviations(DEFAULT_ABBREVIATIONS.iter().copied())
    }
}

impl SentenceSplitter {
    pub fn with_abbreviations<I, S>(abbreviations: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        Self {
            abbreviations: abbreviations.into_iter().map(Into::into).collect(),
        }
    }

    pub fn abbreviations(&self) -> &[String] {
        &self.abbreviations
    }

    fn blocks_split(&self, token: &str) -> bool {
        let token = token.trim_start_matches(|c: char| !c.is_alphanumeric());
        let mut chars = token.chars();
        if let (Some(c), None) = (chars.next(), chars.next()) {
            if c.is_alphabetic() {
                return true;
            }
        }
        self.abbreviations.iter().any(|a| a == token)
    }

    /// Segments `text` into sentences with internal whitespace collapsed.
    /// Fragments without any alphanumeric character are dropped.
    pub fn split(&self, text: &str) -> Vec<String> {
        let normalized = text.split_whitespace().collect::<Vec<_>>().join(" ");
        let bytes = normalized.as_bytes();
        let mut sentences = Vec::new();
        let mut start = 0;
        for (i, &b) in bytes.iter().enumerate() {
            if !matches!(b, b'.' | b'!' | b'?') {
                continue;
            }
            let at_boundary = i + 1 == bytes.len() || bytes[i + 1] == b' ';
            if !at_boundary {
                continue;
            }
            if b == b'.' {
                let token_start = normalized[start..i].rfind(' ').map_or(start, |p| start + p + 1);
                if self.blocks_split(&normalized[token_start..i]) {
                    continue;
                }
            }
            push_sentence(&mut sentences, &normalized[start..=i]);
            start = i + 1;
        }
        if start < normalized.len() {
            push_sentence(&mut sentences, &normalized[start..]);
        }
        sentences
    }
}

fn push_sentence(out: &mut Vec<String>, fragment: &str) {
    let fragment = fragment.trim();
    if fragment.chars().any(char::is_alphanumeric) {
        out.push(fragment.to_string());
    }
}

#[derive(Debug)]
struct Header {
    name_start: usize,
    content_start: usize,
    keep: bool,
}

fn header_patterns() -> &'static [Regex; 4] {
    static PATTERNS: OnceLock<[Regex; 4]> = OnceLock::new();
    PATTERNS.get_or_init(|| {
        [
            // "Name:" at the start of a line, any case.
            Regex::new(r"(?m)^[ \t]*(?P<name>[A-Za-z][A-Za-z /&()-]{0,40}?)[ \t]*:").unwrap(),
            // "NAME:" in all caps following the end of a sentence on the same line.
            Regex::new(r"[.!?][ \t]+(?P<name>[A-Z][A-Z /&()-]{0,40}?)[ \t]*:").unwrap(),
            // "Findings:" / "Impression:" in any case following the end of a sentence.
            Regex::new(r"(?i)[.!?][ \t]+(?P<name>findings|impression)[ \t]*:").unwrap(),
            // A line holding only the header word, colon optional.
            Regex::new(r"(?im)^[ \t]*(?P<name>findings|impression)[ \t]*:?[ \t]*$").unwrap(),
        ]
    })
}

fn is_kept_section(name: &str) -> bool {
    let name = name.trim();
    name.eq_ignore_ascii_case("findings") || name.eq_ignore_ascii_case("impression")
}

fn find_headers(text: &str) -> Vec<Header> {
    let mut headers: Vec<Header> = header_patterns()
        .iter()
        .flat_map(|re| {
            re.captures_iter(text).map(|caps| {
                let name = caps.name("name").expect("pattern has a name group");
                Header {
                    name_start: name.start(),
                    content_start: caps.get(0).expect("whole match").end(),
                    keep: is_kept_section(name.as_str()),
                }
            })
        })
        .collect();
    headers.sort_by_key(|h| (h.name_start, std::cmp::Reverse(h.content_start)));
    headers.dedup_by_key(|h| h.name_start);
    // Drop headers that start inside another header's span.
    let mut out: Vec<Header> = Vec::with_capacity(headers.len());
    for h in headers {
        if out.last().is_some_and(|prev| h.name_start < prev.content_start) {
            continue;
        }
        out.push(h);
    }
    out
}

fn last_paragraph(text: &str) -> &str {
    static BLANK_LINE: OnceLock<Regex> = OnceLock::new();
    let re = BLANK_LINE.get_or_init(|| Regex::new(r"\n[ \t]*(\r?\n)").unwrap());
    re.split(text).filter(|p| !p.trim().is_empty()).last().unwrap_or(text)
}

/// Report parser with a configurable sentence splitter.
#[derive(Debug, Clone, Default)]
pub struct ReportParser {
    splitter: SentenceSplitter,
}

impl ReportParser {
    pub fn new(splitter: SentenceSplitter) -> Self {
        Self { splitter }
    }

    pub fn splitter(&self) -> &SentenceSplitter {
        &self.splitter
    }

    pub fn parse(&self, raw: &RawReport) -> Result<StructuredReport, CorpusError> {
        let text = raw.text.replace("\r\n", "\n");
        if text.trim().is_empty() {
            return Err(CorpusError::EmptyReport(raw.id.clone()));
        }

        let headers = find_headers(&text);
        let (sentences, source) = if headers.iter().any(|h| h.keep) {
            let mut sentences = Vec::new();
            for (i, h) in headers.iter().enumerate() {
                if !h.keep {
                    continue;
                }
                let end = headers.get(i + 1).map_or(text.len(), |next| next.name_start);
                sentences.extend(self.splitter.split(&text[h.content_start..end]));
            }
            (sentences, SourceSection::FindingsImpression)
        } else {
            (self.splitter.split(last_paragraph(&text)), SourceSection::LastParagraph)
        };

        if sentences.is_empty() {
            return Err(CorpusError::NoContent(raw.id.clone()));
        }
        StructuredReport::from_sentences(raw.id.clone(), sentences, source)
    }
}

/// Parses `raw` with the default abbreviation list.
pub fn parse_report(raw: &RawReport) -> Result<StructuredReport, CorpusError> {
    ReportParser::default().parse(raw)
}
