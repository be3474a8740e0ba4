//! Categorical survey data: designs, records, response patterns and
//! missing-data-aware pattern frequencies.
//!
//! Outcome codes run from 1 to `L_j`; code 0 is reserved and means
//! "missing" inside a record and "marginalized" inside a pattern.

use std::fmt;
use std::io::BufRead;
use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Code = u16;

/// Numbers of outcomes per question.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<usize>", into = "Vec<usize>")]
pub struct SurveyDesign {
    levels: Vec<usize>,
    offsets: Vec<usize>,
}

impl SurveyDesign {
    pub fn new(levels: Vec<usize>) -> Result<Self> {
        if levels.is_empty() {
            return Err(Error::Design("at least one question is required".into()));
        }
        if let Some(j) = levels.iter().position(|&l| l < 2) {
            return Err(Error::Design(format!(
                "question {} has {} outcomes, need at least 2",
                j + 1,
                levels[j]
            )));
        }
        if let Some(j) = levels.iter().position(|&l| l > Code::MAX as usize - 1) {
            return Err(Error::Design(format!("question {} has too many outcomes", j + 1)));
        }
        let mut offsets = Vec::with_capacity(levels.len() + 1);
        let mut acc = 0;
        for &l in &levels {
            offsets.push(acc);
            acc += l;
        }
        offsets.push(acc);
        Ok(SurveyDesign { levels, offsets })
    }

    /// `J` questions with `levels` outcomes each.
    pub fn uniform(questions: usize, levels: usize) -> Result<Self> {
        Self::new(vec![levels; questions])
    }

    /// Parses a design line `L_1 L_2 ... L_J`.
    pub fn parse(text: &str) -> Result<Self> {
        let levels = text
            .split_whitespace()
            .enumerate()
            .map(|(i, tok)| {
                tok.parse::<usize>().map_err(|_| Error::Parse {
                    row: 1,
                    column: i + 1,
                    message: format!("expected a level count, found {tok:?}"),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(levels)
    }

    pub fn to_line(&self) -> String {
        self.levels.iter().map(|l| l.to_string()).collect::<Vec<_>>().join(" ")
    }

    pub fn question_count(&self) -> usize {
        self.levels.len()
    }

    pub fn levels(&self) -> &[usize] {
        &self.levels
    }

    pub fn level(&self, question: usize) -> usize {
        self.levels[question]
    }

    /// `|L|`, the number of (question, outcome) cells.
    pub fn total_cells(&self) -> usize {
        self.offsets[self.levels.len()]
    }

    /// Flat index of question `j` (0-based), outcome `l` (1-based).
    pub fn cell(&self, question: usize, outcome: usize) -> usize {
        debug_assert!(outcome >= 1 && outcome <= self.levels[question]);
        self.offsets[question] + outcome - 1
    }

    /// Inverse of [`cell`](Self::cell).
    pub fn cell_position(&self, cell: usize) -> (usize, usize) {
        let j = self.offsets.partition_point(|&o| o <= cell) - 1;
        (j, cell - self.offsets[j] + 1)
    }

    /// Cells belonging to question `j`.
    pub fn block(&self, question: usize) -> Range<usize> {
        self.offsets[question]..self.offsets[question + 1]
    }

    /// Question of every cell, in cell order.
    pub fn cell_questions(&self) -> Vec<usize> {
        self.levels
            .iter()
            .enumerate()
            .flat_map(|(j, &l)| std::iter::repeat_n(j, l))
            .collect()
    }

    pub(crate) fn check_code(&self, question: usize, code: Code) -> Result<(), String> {
        if code as usize > self.levels[question] {
            Err(format!(
                "code {} exceeds L_{}={}",
                code,
                question + 1,
                self.levels[question]
            ))
        } else {
            Ok(())
        }
    }
}

impl TryFrom<Vec<usize>> for SurveyDesign {
    type Error = Error;

    fn try_from(levels: Vec<usize>) -> Result<Self> {
        SurveyDesign::new(levels)
    }
}

impl From<SurveyDesign> for Vec<usize> {
    fn from(d: SurveyDesign) -> Vec<usize> {
        d.levels
    }
}

/// A vector of per-question outcomes where 0 marks a marginalized question.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ResponsePattern(Vec<Code>);

impl ResponsePattern {
    pub fn new(entries: Vec<Code>) -> Self {
        ResponsePattern(entries)
    }

    /// The all-zero pattern of length `questions`.
    pub fn empty(questions: usize) -> Self {
        ResponsePattern(vec![0; questions])
    }

    /// Pattern with a single nonzero entry.
    pub fn single(questions: usize, question: usize, outcome: Code) -> Self {
        let mut p = Self::empty(questions);
        p.0[question] = outcome;
        p
    }

    /// Pattern with two nonzero entries; the questions must differ.
    pub fn pair(questions: usize, a: (usize, Code), b: (usize, Code)) -> Self {
        debug_assert_ne!(a.0, b.0);
        let mut p = Self::empty(questions);
        p.0[a.0] = a.1;
        p.0[b.0] = b.1;
        p
    }

    pub fn entries(&self) -> &[Code] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Number of nonzero entries.
    pub fn order(&self) -> usize {
        self.0.iter().filter(|&&c| c != 0).count()
    }

    pub fn is_complete(&self) -> bool {
        self.0.iter().all(|&c| c != 0)
    }

    pub fn support(&self) -> impl Iterator<Item = (usize, Code)> + '_ {
        self.0.iter().enumerate().filter(|(_, &c)| c != 0).map(|(j, &c)| (j, c))
    }

    pub fn validate(&self, design: &SurveyDesign) -> Result<()> {
        if self.0.len() != design.question_count() {
            return Err(Error::Pattern {
                pattern: self.0.clone(),
                reason: format!(
                    "length {} does not match {} questions",
                    self.0.len(),
                    design.question_count()
                ),
            });
        }
        for (j, &c) in self.0.iter().enumerate() {
            design.check_code(j, c).map_err(|reason| Error::Pattern {
                pattern: self.0.clone(),
                reason,
            })?;
        }
        Ok(())
    }

    /// Combines patterns with disjoint supports. Overlapping supports are
    /// the inestimable "question mark" combinations.
    pub fn combine(&self, other: &ResponsePattern) -> Result<ResponsePattern> {
        if self.0.len() != other.0.len() {
            return Err(Error::Dimension(format!(
                "pattern lengths {} and {}",
                self.0.len(),
                other.0.len()
            )));
        }
        let mut out = Vec::with_capacity(self.0.len());
        for (j, (&a, &b)) in self.0.iter().zip(&other.0).enumerate() {
            if a != 0 && b != 0 {
                return Err(Error::InestimableCombination {
                    left: self.0.clone(),
                    right: other.0.clone(),
                    question: j + 1,
                });
            }
            out.push(a.max(b));
        }
        Ok(ResponsePattern(out))
    }

    /// Copy with question `j` set to `code`.
    pub fn with(&self, question: usize, code: Code) -> ResponsePattern {
        let mut p = self.clone();
        p.0[question] = code;
        p
    }

    pub(crate) fn matches(&self, record: &[Code]) -> (bool, bool) {
        let mut available = true;
        let mut matched = true;
        for (&p, &r) in self.0.iter().zip(record) {
            if p != 0 {
                if r == 0 {
                    available = false;
                    matched = false;
                    break;
                }
                if p != r {
                    matched = false;
                }
            }
        }
        (matched, available)
    }
}

impl fmt::Display for ResponsePattern {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, c) in self.0.iter().enumerate() {
            if i > 0 {
                f.write_str(" ")?;
            }
            write!(f, "{c}")?;
        }
        Ok(())
    }
}

impl From<Vec<Code>> for ResponsePattern {
    fn from(v: Vec<Code>) -> Self {
        ResponsePattern(v)
    }
}

/// Matching and eligible record counts for a pattern.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PatternCount {
    /// Records agreeing with every nonzero entry.
    pub matches: usize,
    /// Records answering every question in the pattern's support.
    pub available: usize,
}

impl PatternCount {
    pub fn frequency(&self) -> Option<f64> {
        (self.available > 0).then(|| self.matches as f64 / self.available as f64)
    }
}

/// A frequency estimate together with the number of respondents it rests on
/// (`None` when the value is exact).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Frequency {
    pub value: f64,
    pub available: Option<usize>,
}

/// Anything that can report `f_ℓ` for a response pattern: observed data or
/// an exactly known mixing model.
pub trait FrequencySource: Sync {
    fn design(&self) -> &SurveyDesign;

    /// `None` when no respondent is eligible for the pattern.
    fn frequency(&self, pattern: &ResponsePattern) -> Option<Frequency>;

    /// Frequencies of `pattern` extended by each outcome of each question at
    /// which `pattern` is zero, indexed `[question][outcome - 1]`; entries for
    /// questions in the support are empty.
    fn extensions(&self, pattern: &ResponsePattern) -> Vec<Vec<Option<Frequency>>> {
        let design = self.design();
        (0..design.question_count())
            .map(|j| {
                if pattern.entries()[j] != 0 {
                    Vec::new()
                } else {
                    (1..=design.level(j))
                        .map(|l| self.frequency(&pattern.with(j, l as Code)))
                        .collect()
                }
            })
            .collect()
    }
}

/// Parsing options for delimiter-separated survey data.
#[derive(Clone, Debug)]
pub struct LoadOptions {
    pub delimiter: char,
    pub missing_token: String,
    pub has_header: bool,
    /// Recode missing answers as an extra outcome `L_j + 1` for every
    /// question that has any missing answer.
    pub missing_as_category: bool,
}

impl Default for LoadOptions {
    fn default() -> Self {
        LoadOptions {
            delimiter: ',',
            missing_token: ".".to_string(),
            has_header: false,
            missing_as_category: false,
        }
    }
}

/// Immutable set of response records over a design, stored row-major.
#[derive(Clone, Debug)]
pub struct Dataset {
    design: SurveyDesign,
    codes: Vec<Code>,
}

impl Dataset {
    pub fn new(design: SurveyDesign, records: Vec<Vec<Code>>) -> Result<Self> {
        let j = design.question_count();
        let mut codes = Vec::with_capacity(records.len() * j);
        for (i, r) in records.iter().enumerate() {
            if r.len() != j {
                return Err(Error::Parse {
                    row: i + 1,
                    column: r.len().min(j) + 1,
                    message: format!("expected {} answers, found {}", j, r.len()),
                });
            }
            for (q, &c) in r.iter().enumerate() {
                design.check_code(q, c).map_err(|message| Error::Parse {
                    row: i + 1,
                    column: q + 1,
                    message,
                })?;
            }
            codes.extend_from_slice(r);
        }
        Ok(Dataset { design, codes })
    }

    pub(crate) fn from_flat(design: SurveyDesign, codes: Vec<Code>) -> Self {
        debug_assert_eq!(codes.len() % design.question_count(), 0);
        Dataset { design, codes }
    }

    pub fn design(&self) -> &SurveyDesign {
        &self.design
    }

    pub fn len(&self) -> usize {
        self.codes.len() / self.design.question_count()
    }

    pub fn is_empty(&self) -> bool {
        self.codes.is_empty()
    }

    pub fn record(&self, i: usize) -> &[Code] {
        let j = self.design.question_count();
        &self.codes[i * j..(i + 1) * j]
    }

    pub fn records(&self) -> impl ExactSizeIterator<Item = &[Code]> + '_ {
        self.codes.chunks_exact(self.design.question_count())
    }

    pub fn has_missing(&self) -> bool {
        self.codes.contains(&0)
    }

    /// Counts `I_ℓ` and `I_avail` by a full scan.
    pub fn pattern_count(&self, pattern: &ResponsePattern) -> Result<PatternCount> {
        pattern.validate(&self.design)?;
        let mut count = PatternCount {
            matches: 0,
            available: 0,
        };
        for r in self.records() {
            let (m, a) = pattern.matches(r);
            count.matches += m as usize;
            count.available += a as usize;
        }
        Ok(count)
    }

    /// `f_ℓ = I_ℓ / I_avail`; the all-zero pattern has frequency 1.
    pub fn pattern_frequency(&self, pattern: &ResponsePattern) -> Result<f64> {
        let count = self.pattern_count(pattern)?;
        if pattern.order() == 0 {
            return Ok(1.0);
        }
        count
            .frequency()
            .ok_or_else(|| Error::NoEligibleRespondents(pattern.entries().to_vec()))
    }

    /// Counts for `pattern` and every one-question extension of it in one pass.
    pub fn extension_counts(&self, pattern: &ResponsePattern) -> (PatternCount, Vec<Vec<PatternCount>>) {
        let design = &self.design;
        let mut base = PatternCount {
            matches: 0,
            available: 0,
        };
        let mut ext: Vec<Vec<PatternCount>> = (0..design.question_count())
            .map(|j| {
                if pattern.entries()[j] != 0 {
                    Vec::new()
                } else {
                    vec![
                        PatternCount {
                            matches: 0,
                            available: 0
                        };
                        design.level(j)
                    ]
                }
            })
            .collect();
        for r in self.records() {
            let (m, a) = pattern.matches(r);
            if !a {
                continue;
            }
            base.available += 1;
            base.matches += m as usize;
            for (j, cells) in ext.iter_mut().enumerate() {
                if cells.is_empty() || r[j] == 0 {
                    continue;
                }
                for c in cells.iter_mut() {
                    c.available += 1;
                }
                if m {
                    cells[r[j] as usize - 1].matches += 1;
                }
            }
        }
        (base, ext)
    }
}

impl FrequencySource for Dataset {
    fn design(&self) -> &SurveyDesign {
        &self.design
    }

    fn frequency(&self, pattern: &ResponsePattern) -> Option<Frequency> {
        let count = self.pattern_count(pattern).ok()?;
        if pattern.order() == 0 {
            return Some(Frequency {
                value: 1.0,
                available: Some(self.len()),
            });
        }
        count.frequency().map(|value| Frequency {
            value,
            available: Some(count.available),
        })
    }

    fn extensions(&self, pattern: &ResponsePattern) -> Vec<Vec<Option<Frequency>>> {
        let (_, ext) = self.extension_counts(pattern);
        ext.into_iter()
            .map(|cells| {
                cells
                    .into_iter()
                    .map(|c| {
                        c.frequency().map(|value| Frequency {
                            value,
                            available: Some(c.available),
                        })
                    })
                    .collect()
            })
            .collect()
    }
}

/// Reads delimiter-separated integer codes. When `design` is `None` it is
/// inferred as `L_j = max observed code` (at least 2).
pub fn load_dataset<R: BufRead>(
    source: R,
    design: Option<SurveyDesign>,
    options: &LoadOptions,
) -> Result<Dataset> {
    let mut rows: Vec<Vec<Code>> = Vec::new();
    let mut width: Option<usize> = design.as_ref().map(|d| d.question_count());
    let mut skipped_header = !options.has_header;
    for (lineno, line) in source.lines().enumerate() {
        let line = line?;
        let trimmed = line.trim();
        if trimmed.is_empty() {
            continue;
        }
        if !skipped_header {
            skipped_header = true;
            continue;
        }
        let row = lineno + 1;
        let mut codes = Vec::new();
        for (col, tok) in trimmed.split(options.delimiter).enumerate() {
            let tok = tok.trim();
            if tok == options.missing_token {
                codes.push(0);
                continue;
            }
            let code: Code = tok.parse().map_err(|_| Error::Parse {
                row,
                column: col + 1,
                message: format!("expected an integer code, found {tok:?}"),
            })?;
            if code == 0 {
                return Err(Error::Parse {
                    row,
                    column: col + 1,
                    message: "codes start at 1; 0 is reserved for missing".into(),
                });
            }
            if let Some(d) = &design {
                if col < d.question_count() {
                    d.check_code(col, code).map_err(|message| Error::Parse {
                        row,
                        column: col + 1,
                        message,
                    })?;
                }
            }
            codes.push(code);
        }
        match width {
            None => width = Some(codes.len()),
            Some(w) if w != codes.len() => {
                return Err(Error::Parse {
                    row,
                    column: codes.len().min(w) + 1,
                    message: format!("ragged row: expected {} fields, found {}", w, codes.len()),
                })
            }
            _ => {}
        }
        rows.push(codes);
    }
    if rows.is_empty() {
        return Err(Error::NoRecords);
    }
    let width = width.unwrap_or(0);
    let mut design = match design {
        Some(d) => d,
        None => {
            let levels = (0..width)
                .map(|j| rows.iter().map(|r| r[j] as usize).max().unwrap_or(0).max(2))
                .collect();
            SurveyDesign::new(levels)?
        }
    };
    if options.missing_as_category {
        let mut levels = design.levels().to_vec();
        for (j, level) in levels.iter_mut().enumerate() {
            if rows.iter().any(|r| r[j] == 0) {
                *level += 1;
                let code = *level as Code;
                for r in rows.iter_mut().filter(|r| r[j] == 0) {
                    r[j] = code;
                }
            }
        }
        design = SurveyDesign::new(levels)?;
    }
    Dataset::new(design, rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn load(text: &str, levels: Option<Vec<usize>>) -> Result<Dataset> {
        let design = levels.map(|l| SurveyDesign::new(l).unwrap());
        load_dataset(text.as_bytes(), design, &LoadOptions::default())
    }

    fn pat(v: &[Code]) -> ResponsePattern {
        ResponsePattern::new(v.to_vec())
    }

    #[test]
    fn parses_rows() {
        let d = load("1,2\n2,1", Some(vec![2, 2])).unwrap();
        assert_eq!(d.len(), 2);
        assert_eq!(d.record(0), &[1, 2]);
        assert_eq!(d.record(1), &[2, 1]);
    }

    #[test]
    fn missing_token_maps_to_zero() {
        let d = load("1,.", Some(vec![2, 2])).unwrap();
        assert_eq!(d.record(0), &[1, 0]);
    }

    #[test]
    fn out_of_range_code() {
        let err = load("3,1", Some(vec![2, 2])).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("code 3 exceeds L_1=2"), "{msg}");
        assert!(matches!(err, Error::Parse { row: 1, column: 1, .. }));
    }

    #[test]
    fn ragged_row() {
        let err = load("1,2\n1", None).unwrap_err();
        assert!(matches!(err, Error::Parse { row: 2, .. }), "{err}");
    }

    #[test]
    fn infers_design_and_header() {
        let opts = LoadOptions {
            has_header: true,
            ..Default::default()
        };
        let d = load_dataset("a,b,c\n1,3,1\n2,1,1\n".as_bytes(), None, &opts).unwrap();
        assert_eq!(d.design().levels(), &[2, 3, 2]);
        assert_eq!(d.len(), 2);
    }

    #[test]
    fn missing_as_category_recodes() {
        let opts = LoadOptions {
            missing_as_category: true,
            ..Default::default()
        };
        let design = SurveyDesign::new(vec![2, 2]).unwrap();
        let d = load_dataset("1,.\n2,1\n".as_bytes(), Some(design), &opts).unwrap();
        assert_eq!(d.design().levels(), &[2, 3]);
        assert_eq!(d.record(0), &[1, 3]);
        assert!(!d.has_missing());
    }

    #[test]
    fn empty_input() {
        assert!(matches!(load("", None).unwrap_err(), Error::NoRecords));
    }

    #[test]
    fn frequency_direct_count() {
        let d = load("1,1\n1,2\n2,1\n1,1", Some(vec![2, 2])).unwrap();
        assert_eq!(d.pattern_frequency(&pat(&[1, 0])).unwrap(), 0.75);
        assert_eq!(d.pattern_frequency(&pat(&[0, 0])).unwrap(), 1.0);
    }

    #[test]
    fn frequency_excludes_missing_from_denominator() {
        let d = load("1,.\n1,2\n2,1", Some(vec![2, 2])).unwrap();
        let c = d.pattern_count(&pat(&[1, 2])).unwrap();
        assert_eq!(c, PatternCount { matches: 1, available: 2 });
        assert_eq!(d.pattern_frequency(&pat(&[1, 2])).unwrap(), 0.5);
    }

    #[test]
    fn no_eligible_respondents() {
        let d = load(".,1\n.,2", Some(vec![2, 2])).unwrap();
        assert!(matches!(
            d.pattern_frequency(&pat(&[1, 0])).unwrap_err(),
            Error::NoEligibleRespondents(p) if p == vec![1, 0]
        ));
    }

    #[test]
    fn combine_patterns() {
        assert_eq!(pat(&[1, 0, 0]).combine(&pat(&[0, 2, 2])).unwrap(), pat(&[1, 2, 2]));
        assert!(matches!(
            pat(&[1, 0, 0]).combine(&pat(&[1, 0, 2])).unwrap_err(),
            Error::InestimableCombination { question: 1, .. }
        ));
        let p = pat(&[2, 0, 1]);
        assert_eq!(p.combine(&ResponsePattern::empty(3)).unwrap(), p);
    }

    #[test]
    fn cell_indexing() {
        let d = SurveyDesign::new(vec![2, 3, 4]).unwrap();
        assert_eq!(d.total_cells(), 9);
        assert_eq!(d.cell(1, 1), 2);
        assert_eq!(d.cell(2, 4), 8);
        for c in 0..9 {
            let (j, l) = d.cell_position(c);
            assert_eq!(d.cell(j, l), c);
        }
        assert_eq!(d.block(1), 2..5);
    }

    #[test]
    fn design_rejects_single_level() {
        assert!(SurveyDesign::new(vec![2, 1]).is_err());
        assert!(SurveyDesign::new(vec![]).is_err());
        assert_eq!(SurveyDesign::parse("2 3 2").unwrap().levels(), &[2, 3, 2]);
    }

    #[test]
    fn extension_counts_agree_with_scans() {
        let d = load("1,1,2\n1,2,.\n2,1,1\n1,1,1\n.,2,2", Some(vec![2, 2, 2])).unwrap();
        let p = pat(&[1, 0, 0]);
        let (base, ext) = d.extension_counts(&p);
        assert_eq!(base, d.pattern_count(&p).unwrap());
        for j in 1..3 {
            for l in 1..=2 {
                let q = p.with(j, l as Code);
                assert_eq!(ext[j][l - 1], d.pattern_count(&q).unwrap());
            }
        }
        assert!(ext[0].is_empty());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn records() -> impl Strategy<Value = Vec<Vec<Code>>> {
            prop::collection::vec(prop::collection::vec(1u16..=3, 4), 1..40)
        }

        proptest! {
            #[test]
            fn single_cell_frequencies_sum_to_one(rs in records()) {
                let d = Dataset::new(SurveyDesign::uniform(4, 3).unwrap(), rs).unwrap();
                for j in 0..4 {
                    let s: f64 = (1..=3)
                        .map(|l| d.pattern_frequency(&ResponsePattern::single(4, j, l)).unwrap())
                        .sum();
                    prop_assert!((s - 1.0).abs() < 1e-12);
                }
            }

            #[test]
            fn adding_an_entry_never_increases_matches(rs in records(), j in 0usize..4, off in 1usize..4, a in 1u16..=3, b in 1u16..=3) {
                let k = (j + off) % 4;
                let d = Dataset::new(SurveyDesign::uniform(4, 3).unwrap(), rs).unwrap();
                let p = ResponsePattern::single(4, j, a);
                let q = p.with(k, b);
                prop_assert!(d.pattern_count(&q).unwrap().matches <= d.pattern_count(&p).unwrap().matches);
            }

            #[test]
            fn frequency_is_order_invariant(mut rs in records(), p in prop::collection::vec(0u16..=3, 4)) {
                let design = SurveyDesign::uniform(4, 3).unwrap();
                let pattern = ResponsePattern::new(p);
                let a = Dataset::new(design.clone(), rs.clone()).unwrap().pattern_count(&pattern).unwrap();
                rs.reverse();
                rs.rotate_left(1);
                let b = Dataset::new(design, rs).unwrap().pattern_count(&pattern).unwrap();
                prop_assert_eq!(a, b);
            }
        }
    }
}
