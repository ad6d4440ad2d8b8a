//! Corpus ingestion: word-frequency records in, bigram counts out, plus
//! text normalization for the benchmark path.

use std::collections::HashMap;
use std::fmt;
use std::io::BufRead;

use nalgebra::DMatrix;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::matrix::serde_rows;

/// An ordered set of distinct symbols. The order is stable and defines the
/// row/column indexing of every matrix in the crate.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Alphabet {
    letters: Vec<char>,
    index: HashMap<char, usize>,
}

impl Alphabet {
    /// The 26 lowercase Latin letters in lexicographic order.
    pub fn latin_lowercase() -> Self {
        Self::from_letters(('a'..='z').collect()).expect("static alphabet")
    }

    /// Cluster sub-alphabets may hold a single letter; corpus-facing entry
    /// points require at least two.
    pub fn from_letters(letters: Vec<char>) -> Result<Self> {
        if letters.is_empty() {
            return Err(Error::InvalidAlphabet("need at least 1 symbol".into()));
        }
        let mut index = HashMap::with_capacity(letters.len());
        for (i, &c) in letters.iter().enumerate() {
            if index.insert(c, i).is_some() {
                return Err(Error::InvalidAlphabet(format!("duplicate symbol {c:?}")));
            }
        }
        Ok(Alphabet { letters, index })
    }

    pub fn from_str_letters(s: &str) -> Result<Self> {
        Self::from_letters(s.chars().collect())
    }

    pub fn len(&self) -> usize {
        self.letters.len()
    }

    pub fn is_empty(&self) -> bool {
        self.letters.is_empty()
    }

    pub fn letters(&self) -> &[char] {
        &self.letters
    }

    pub fn letter(&self, i: usize) -> char {
        self.letters[i]
    }

    pub fn index_of(&self, c: char) -> Option<usize> {
        self.index.get(&c).copied()
    }

    pub fn contains(&self, c: char) -> bool {
        self.index.contains_key(&c)
    }

    pub fn as_string(&self) -> String {
        self.letters.iter().collect()
    }
}

impl fmt::Display for Alphabet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.as_string())
    }
}

impl Serialize for Alphabet {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(&self.as_string())
    }
}

impl<'de> Deserialize<'de> for Alphabet {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        Alphabet::from_str_letters(&s).map_err(serde::de::Error::custom)
    }
}

/// One row of a word-frequency dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct WordFrequencyRecord {
    pub word: String,
    /// Occurrence weight. Stored as a real so scaled or merged corpora stay exact.
    pub count: f64,
}

impl WordFrequencyRecord {
    pub fn new(word: impl Into<String>, count: f64) -> Self {
        WordFrequencyRecord {
            word: word.into(),
            count,
        }
    }
}

/// Counts of adjacent letter pairs, indexed by the alphabet.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BigramCounts {
    pub alphabet: Alphabet,
    #[serde(with = "serde_rows")]
    pub counts: DMatrix<f64>,
}

impl BigramCounts {
    pub fn zeros(alphabet: Alphabet) -> Self {
        let n = alphabet.len();
        BigramCounts {
            alphabet,
            counts: DMatrix::zeros(n, n),
        }
    }

    pub fn total(&self) -> f64 {
        self.counts.sum()
    }

    /// Elementwise sum; ingestion is linear so merging corpora is exact.
    pub fn merge(&self, other: &BigramCounts) -> Result<BigramCounts> {
        if self.alphabet != other.alphabet {
            return Err(Error::AlphabetMismatch);
        }
        Ok(BigramCounts {
            alphabet: self.alphabet.clone(),
            counts: &self.counts + &other.counts,
        })
    }

    pub fn scale(&self, factor: f64) -> BigramCounts {
        BigramCounts {
            alphabet: self.alphabet.clone(),
            counts: &self.counts * factor,
        }
    }
}

/// Per-ingestion tallies for records that contributed nothing.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct IngestDiagnostics {
    /// Records seen in the stream.
    pub records: usize,
    /// Records whose word had no alphabet characters at all after lowercasing.
    pub skipped_empty: usize,
    /// Records that normalized to letters but produced no adjacent pair
    /// (single letters, or segments all shorter than 2).
    pub skipped_short: usize,
}

impl IngestDiagnostics {
    pub fn skipped(&self) -> usize {
        self.skipped_empty + self.skipped_short
    }
}

/// Split a word into maximal runs of alphabet letters after ASCII lowercasing.
/// Out-of-alphabet characters act as separators, so no bigram is ever counted
/// across a removed character.
fn letter_segments(word: &str, alphabet: &Alphabet) -> Vec<Vec<usize>> {
    let mut segments = Vec::new();
    let mut current = Vec::new();
    for c in word.chars() {
        let c = c.to_ascii_lowercase();
        match alphabet.index_of(c) {
            Some(i) => current.push(i),
            None => {
                if !current.is_empty() {
                    segments.push(std::mem::take(&mut current));
                }
            }
        }
    }
    if !current.is_empty() {
        segments.push(current);
    }
    segments
}

/// Accumulate bigram counts from a stream of word-frequency records.
///
/// Each adjacent letter pair inside a word contributes the record's count.
/// Records with no usable pair are skipped and tallied; the call errors only
/// when nothing at all was counted.
pub fn ingest_word_frequencies<I>(
    records: I,
    alphabet: &Alphabet,
) -> Result<(BigramCounts, IngestDiagnostics)>
where
    I: IntoIterator<Item = WordFrequencyRecord>,
{
    if alphabet.len() < 2 {
        return Err(Error::InvalidAlphabet(
            "bigram ingestion needs at least 2 symbols".into(),
        ));
    }
    let mut counts = BigramCounts::zeros(alphabet.clone());
    let mut diag = IngestDiagnostics::default();

    for record in records {
        diag.records += 1;
        if !(record.count.is_finite() && record.count >= 0.0) {
            diag.skipped_empty += 1;
            continue;
        }
        let segments = letter_segments(&record.word, alphabet);
        if segments.is_empty() {
            diag.skipped_empty += 1;
            continue;
        }
        let mut pairs = 0usize;
        for segment in &segments {
            for pair in segment.windows(2) {
                counts.counts[(pair[0], pair[1])] += record.count;
                pairs += 1;
            }
        }
        if pairs == 0 {
            diag.skipped_short += 1;
        }
    }

    if diag.records == 0 {
        return Err(Error::EmptyCorpus);
    }
    if diag.skipped() == diag.records {
        return Err(Error::AllRecordsSkipped {
            skipped: diag.skipped(),
        });
    }
    if counts.total() <= 0.0 {
        return Err(Error::EmptyCorpus);
    }
    Ok((counts, diag))
}

/// Letter occurrence frequencies from the same records, normalized to sum 1.
/// Used to cross-check the stationary distribution of the fitted chain.
pub fn letter_frequencies<I>(records: I, alphabet: &Alphabet) -> Result<Vec<f64>>
where
    I: IntoIterator<Item = WordFrequencyRecord>,
{
    let mut freq = vec![0.0; alphabet.len()];
    for record in records {
        if !(record.count.is_finite() && record.count >= 0.0) {
            continue;
        }
        for segment in letter_segments(&record.word, alphabet) {
            for i in segment {
                freq[i] += record.count;
            }
        }
    }
    let total: f64 = freq.iter().sum();
    if total <= 0.0 {
        return Err(Error::EmptyCorpus);
    }
    for f in &mut freq {
        *f /= total;
    }
    Ok(freq)
}

/// Lowercase and drop every non-alphabet character, preserving order.
pub fn normalize_text(raw: &str, alphabet: &Alphabet) -> String {
    raw.chars()
        .map(|c| c.to_ascii_lowercase())
        .filter(|&c| alphabet.contains(c))
        .collect()
}

/// Parse `word,count` lines. A header line is detected by a second field that
/// does not parse as a number. Malformed lines are skipped; the caller sees
/// them through [`IngestDiagnostics`] once the records are ingested.
pub fn read_word_frequencies<R: BufRead>(reader: R) -> Result<Vec<WordFrequencyRecord>> {
    let mut records = Vec::new();
    for (lineno, line) in reader.lines().enumerate() {
        let line = line?;
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let Some((word, count)) = line.rsplit_once(',') else {
            if lineno == 0 {
                continue; // header without delimiter
            }
            continue;
        };
        match count.trim().parse::<f64>() {
            Ok(c) => records.push(WordFrequencyRecord::new(word.trim(), c)),
            Err(_) if lineno == 0 => continue, // header row
            Err(_) => continue,
        }
    }
    if records.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    Ok(records)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn abc() -> Alphabet {
        Alphabet::latin_lowercase()
    }

    fn pair(counts: &BigramCounts, a: char, b: char) -> f64 {
        let i = counts.alphabet.index_of(a).unwrap();
        let j = counts.alphabet.index_of(b).unwrap();
        counts.counts[(i, j)]
    }

    #[test]
    fn the_contributes_th_and_he() {
        let (counts, diag) =
            ingest_word_frequencies([WordFrequencyRecord::new("the", 1.0)], &abc()).unwrap();
        assert_eq!(pair(&counts, 't', 'h'), 1.0);
        assert_eq!(pair(&counts, 'h', 'e'), 1.0);
        assert_eq!(counts.total(), 2.0);
        assert_eq!(diag.skipped(), 0);
    }

    #[test]
    fn repeated_pair_scales_with_count() {
        let (counts, _) =
            ingest_word_frequencies([WordFrequencyRecord::new("aa", 3.0)], &abc()).unwrap();
        assert_eq!(pair(&counts, 'a', 'a'), 3.0);
        assert_eq!(counts.total(), 3.0);
    }

    #[test]
    fn adjacent_pairs_enumerated_by_hand() {
        let records = [
            WordFrequencyRecord::new("aba", 2.0),
            WordFrequencyRecord::new("ba", 1.0),
        ];
        let (counts, _) = ingest_word_frequencies(records, &abc()).unwrap();
        assert_eq!(pair(&counts, 'a', 'b'), 2.0);
        assert_eq!(pair(&counts, 'b', 'a'), 3.0);
        assert_eq!(counts.total(), 5.0);
    }

    #[test]
    fn out_of_alphabet_chars_split_words() {
        // "a'b" has segments "a" and "b": no bigram crosses the apostrophe.
        let records = [
            WordFrequencyRecord::new("a'b", 5.0),
            WordFrequencyRecord::new("don't", 1.0),
        ];
        let (counts, diag) = ingest_word_frequencies(records, &abc()).unwrap();
        assert_eq!(pair(&counts, 'a', 'b'), 0.0);
        assert_eq!(pair(&counts, 'd', 'o'), 1.0);
        assert_eq!(pair(&counts, 'o', 'n'), 1.0);
        assert_eq!(pair(&counts, 'n', 't'), 0.0); // split at the apostrophe
        assert_eq!(diag.skipped_short, 1); // a'b produced nothing
    }

    #[test]
    fn empty_stream_errors() {
        let err = ingest_word_frequencies(std::iter::empty(), &abc()).unwrap_err();
        assert!(matches!(err, Error::EmptyCorpus));
    }

    #[test]
    fn all_skipped_errors() {
        let records = [
            WordFrequencyRecord::new("1234", 2.0),
            WordFrequencyRecord::new("x", 9.0),
        ];
        let err = ingest_word_frequencies(records, &abc()).unwrap_err();
        assert!(matches!(err, Error::AllRecordsSkipped { skipped: 2 }));
    }

    #[test]
    fn normalize_examples() {
        let a = abc();
        assert_eq!(normalize_text("Cat, dog!", &a), "catdog");
        assert_eq!(normalize_text("", &a), "");
        assert_eq!(normalize_text("A\nB", &a), "ab");
    }

    #[test]
    fn csv_header_detected() {
        let data = "word,count\nthe,100\na,50\nhe,25\n";
        let records = read_word_frequencies(data.as_bytes()).unwrap();
        assert_eq!(records.len(), 3);
        assert_eq!(records[0], WordFrequencyRecord::new("the", 100.0));
    }

    #[test]
    fn counts_json_round_trip() {
        let (counts, _) =
            ingest_word_frequencies([WordFrequencyRecord::new("the", 2.0)], &abc()).unwrap();
        let json = serde_json::to_string(&counts).unwrap();
        assert!(json.starts_with(r#"{"alphabet":"abcdefghijklmnopqrstuvwxyz""#));
        let back: BigramCounts = serde_json::from_str(&json).unwrap();
        assert_eq!(back, counts);
    }

    proptest! {
        #[test]
        fn ingestion_is_linear(words in proptest::collection::vec("[a-z]{2,8}", 1..20), lambda in 1u32..5) {
            let a = abc();
            let records: Vec<_> = words.iter().map(|w| WordFrequencyRecord::new(w.clone(), 1.0)).collect();
            let half: Vec<_> = records.iter().cloned().take(records.len() / 2).collect();
            let rest: Vec<_> = records.iter().cloned().skip(records.len() / 2).collect();
            let (whole, _) = ingest_word_frequencies(records.clone(), &a).unwrap();
            if !half.is_empty() && !rest.is_empty() {
                let (c1, _) = ingest_word_frequencies(half, &a).unwrap();
                let (c2, _) = ingest_word_frequencies(rest, &a).unwrap();
                let merged = c1.merge(&c2).unwrap();
                prop_assert_eq!(&merged, &whole);
            }
            let scaled_records: Vec<_> = records.iter()
                .map(|r| WordFrequencyRecord::new(r.word.clone(), r.count * f64::from(lambda)))
                .collect();
            let (scaled, _) = ingest_word_frequencies(scaled_records, &a).unwrap();
            prop_assert_eq!(&scaled, &whole.scale(f64::from(lambda)));
        }

        #[test]
        fn normalize_is_idempotent(s in "\\PC*") {
            let a = abc();
            let once = normalize_text(&s, &a);
            prop_assert_eq!(normalize_text(&once, &a), once.clone());
        }
    }
}
