//! CER computation, corpus aggregation, length-bucket analysis, and paired
//! significance testing.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};
use thiserror::Error;

use crate::alignment::{align, edit_counts};
use crate::textnorm::{normalize, tokenize, NormalizationOptions, TokenMode};

#[derive(Debug, Error, PartialEq)]
pub enum ScoringError {
    #[error("corpus has no scorable utterances (all references empty)")]
    EmptyCorpus,
    #[error("bucket width must be at least 1")]
    InvalidBucketWidth,
    #[error("paired samples differ in length: {a} vs {b}")]
    LengthMismatch { a: usize, b: usize },
    #[error("paired t-test needs at least 2 samples, got {0}")]
    TooFewSamples(usize),
    #[error("paired differences have zero variance; t statistic is undefined")]
    ZeroVariance,
    #[error("utterance ids do not pair up: {0}")]
    UnpairedUtterance(String),
}

/// Per-utterance scoring record. An utterance whose reference normalizes
/// to nothing is flagged and excluded from corpus denominators.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreRecord {
    pub utt_id: String,
    pub hits: usize,
    pub subs: usize,
    pub dels: usize,
    pub ins: usize,
    pub ref_len: usize,
    pub empty_ref: bool,
}

impl ScoreRecord {
    pub fn errors(&self) -> usize {
        self.subs + self.dels + self.ins
    }

    /// Per-utterance CER, undefined for empty references.
    pub fn cer(&self) -> Option<f64> {
        (self.ref_len > 0).then(|| self.errors() as f64 / self.ref_len as f64)
    }
}

/// Normalizes, tokenizes, and aligns one reference/hypothesis pair.
pub fn score_pair(
    utt_id: &str,
    reference: &str,
    hypothesis: &str,
    norm: &NormalizationOptions,
    mode: TokenMode,
) -> ScoreRecord {
    let ref_seq = tokenize(&normalize(reference, norm), mode);
    let hyp_seq = tokenize(&normalize(hypothesis, norm), mode);
    let alignment = align(&ref_seq, &hyp_seq).expect("identical modes by construction");
    let counts = edit_counts(&alignment);
    ScoreRecord {
        utt_id: utt_id.to_string(),
        hits: counts.hits,
        subs: counts.subs,
        dels: counts.dels,
        ins: counts.ins,
        ref_len: counts.ref_len,
        empty_ref: ref_seq.is_empty(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct CerTotals {
    pub hits: usize,
    pub subs: usize,
    pub dels: usize,
    pub ins: usize,
    pub ref_len: usize,
}

impl CerTotals {
    pub fn errors(&self) -> usize {
        self.subs + self.dels + self.ins
    }
}

/// Corpus-level CER report. The corpus CER pools error counts over the
/// total reference length (SCTK convention) rather than averaging
/// per-utterance rates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CerReport {
    pub per_utterance: Vec<ScoreRecord>,
    pub totals: CerTotals,
    pub corpus_cer: f64,
    /// Utterances excluded from the denominator (empty references).
    pub flagged: Vec<String>,
}

pub fn corpus_cer(records: Vec<ScoreRecord>) -> Result<CerReport, ScoringError> {
    let mut totals = CerTotals::default();
    let mut flagged = Vec::new();
    for record in &records {
        if record.empty_ref {
            flagged.push(record.utt_id.clone());
            continue;
        }
        totals.hits += record.hits;
        totals.subs += record.subs;
        totals.dels += record.dels;
        totals.ins += record.ins;
        totals.ref_len += record.ref_len;
    }
    if totals.ref_len == 0 {
        return Err(ScoringError::EmptyCorpus);
    }
    let corpus_cer = totals.errors() as f64 / totals.ref_len as f64;
    Ok(CerReport {
        per_utterance: records,
        totals,
        corpus_cer,
        flagged,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Bucket {
    /// Inclusive lower bound of the reference-length range.
    pub lo: usize,
    /// Exclusive upper bound.
    pub hi: usize,
    pub utterances: usize,
    pub errors: usize,
    pub ref_len: usize,
    /// Pooled CER within the bucket; None when the bucket holds no
    /// reference characters.
    pub cer: Option<f64>,
}

/// CER broken down by reference length, matching the shape of
/// per-length evaluation plots.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BucketReport {
    pub bucket_width: usize,
    pub buckets: Vec<Bucket>,
}

/// Assigns each record to bucket `floor(ref_len / bucket_width)` and pools
/// errors within each bucket. Buckets form a contiguous partition of
/// `[0, max_len]`; counts sum to the record count.
pub fn bucket_report(
    records: &[ScoreRecord],
    bucket_width: usize,
) -> Result<BucketReport, ScoringError> {
    if bucket_width == 0 {
        return Err(ScoringError::InvalidBucketWidth);
    }
    let max_bucket = records
        .iter()
        .map(|r| r.ref_len / bucket_width)
        .max()
        .unwrap_or(0);
    let mut buckets: Vec<Bucket> = (0..=max_bucket)
        .map(|b| Bucket {
            lo: b * bucket_width,
            hi: (b + 1) * bucket_width,
            utterances: 0,
            errors: 0,
            ref_len: 0,
            cer: None,
        })
        .collect();
    for record in records {
        let bucket = &mut buckets[record.ref_len / bucket_width];
        bucket.utterances += 1;
        if !record.empty_ref {
            bucket.errors += record.errors();
            bucket.ref_len += record.ref_len;
        }
    }
    for bucket in &mut buckets {
        if bucket.ref_len > 0 {
            bucket.cer = Some(bucket.errors as f64 / bucket.ref_len as f64);
        }
    }
    Ok(BucketReport {
        bucket_width,
        buckets,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PairedTTest {
    pub t: f64,
    pub df: usize,
    pub p_two_sided: f64,
}

/// Paired Student's t-test on per-utterance metric pairs.
///
/// With differences `d = a - b`: `t = mean(d) / (sd(d) / sqrt(n))` using
/// the sample standard deviation, df = n - 1, and a two-sided p-value from
/// the t distribution. Zero variance is reported as an explicit error
/// rather than a silent NaN.
pub fn paired_ttest(a: &[f64], b: &[f64]) -> Result<PairedTTest, ScoringError> {
    if a.len() != b.len() {
        return Err(ScoringError::LengthMismatch {
            a: a.len(),
            b: b.len(),
        });
    }
    let n = a.len();
    if n < 2 {
        return Err(ScoringError::TooFewSamples(n));
    }
    let diffs: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let mean = diffs.iter().sum::<f64>() / n as f64;
    let var = diffs.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    if var == 0.0 {
        return Err(ScoringError::ZeroVariance);
    }
    let t = mean / (var.sqrt() / (n as f64).sqrt());
    Ok(PairedTTest {
        t,
        df: n - 1,
        p_two_sided: students_t_p_two_sided(t, n - 1),
    })
}

/// Two-sided p-value of a t statistic: survival function of Student's t,
/// evaluated through the regularized incomplete beta function.
pub fn students_t_p_two_sided(t: f64, df: usize) -> f64 {
    let dist = StudentsT::new(0.0, 1.0, df as f64).expect("df >= 1");
    2.0 * dist.sf(t.abs())
}

/// Pairs two per-utterance metric lists by utterance id, preserving the
/// order of `a`. Every id must appear exactly once on both sides.
pub fn pair_by_utt_id(
    a: &[(String, f64)],
    b: &[(String, f64)],
) -> Result<(Vec<f64>, Vec<f64>), ScoringError> {
    if a.len() != b.len() {
        return Err(ScoringError::LengthMismatch {
            a: a.len(),
            b: b.len(),
        });
    }
    let lookup: std::collections::HashMap<&str, f64> =
        b.iter().map(|(id, v)| (id.as_str(), *v)).collect();
    if lookup.len() != b.len() {
        let dup = b
            .iter()
            .map(|(id, _)| id)
            .find(|id| b.iter().filter(|(other, _)| other == *id).count() > 1)
            .expect("duplicate exists");
        return Err(ScoringError::UnpairedUtterance(dup.clone()));
    }
    let mut left = Vec::with_capacity(a.len());
    let mut right = Vec::with_capacity(a.len());
    for (id, value) in a {
        let other = lookup
            .get(id.as_str())
            .ok_or_else(|| ScoringError::UnpairedUtterance(id.clone()))?;
        left.push(*value);
        right.push(*other);
    }
    Ok((left, right))
}
