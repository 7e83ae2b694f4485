use std::ops::Range;

use thiserror::Error;

use crate::kv::{self, KvError, Writer};

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct TraceMeta {
    pub sequence_hash: String,
    pub emitter_hash: String,
    pub seed: u64,
}

/// Detected photons per output bin, summed over repetitions.
///
/// Bins are stored as explicit `[start, end)` pairs because unrecorded
/// segments leave gaps between them.
#[derive(Debug, Clone, PartialEq)]
pub struct BinnedTrace {
    pub bin_start: Vec<f64>,
    pub bin_end: Vec<f64>,
    /// Index of the sequence segment each bin belongs to.
    pub segment: Vec<usize>,
    pub counts: Vec<u64>,
    pub n_reps: u64,
    pub meta: TraceMeta,
}

#[derive(Debug, Clone, PartialEq, Error)]
#[error("line {line}: {msg}")]
pub struct TraceParseError {
    pub line: usize,
    pub msg: String,
}

pub const TRACE_CSV_HEADER: &str = "bin_start_s, bin_end_s, counts, n_reps";

impl BinnedTrace {
    pub fn len(&self) -> usize {
        self.counts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.counts.is_empty()
    }

    pub fn bin_centers(&self) -> Vec<f64> {
        self.bin_start
            .iter()
            .zip(&self.bin_end)
            .map(|(a, b)| 0.5 * (a + b))
            .collect()
    }

    /// Mean detected rate per bin, counts/s per repetition.
    pub fn rates(&self) -> Vec<f64> {
        (0..self.len())
            .map(|i| self.counts[i] as f64 / (self.n_reps as f64 * (self.bin_end[i] - self.bin_start[i])))
            .collect()
    }

    /// Bins belonging to sequence segment `segment`.
    pub fn segment_range(&self, segment: usize) -> Range<usize> {
        let lo = self.segment.partition_point(|&s| s < segment);
        let hi = self.segment.partition_point(|&s| s <= segment);
        lo..hi
    }

    /// Distinct recorded segments in order.
    pub fn segments(&self) -> Vec<usize> {
        let mut v = self.segment.clone();
        v.dedup();
        v
    }

    pub fn segment_total(&self, segment: usize) -> u64 {
        self.counts[self.segment_range(segment)].iter().sum()
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::with_capacity(32 * (self.len() + 1));
        out.push_str(TRACE_CSV_HEADER);
        out.push('\n');
        for i in 0..self.len() {
            out.push_str(&format!(
                "{},{},{},{}\n",
                self.bin_start[i], self.bin_end[i], self.counts[i], self.n_reps
            ));
        }
        out
    }

    pub fn meta_text(&self) -> String {
        let mut w = Writer::new();
        w.section("trace")
            .raw("sequence_sha256", &self.meta.sequence_hash)
            .raw("emitter_sha256", &self.meta.emitter_hash)
            .raw("seed", self.meta.seed)
            .raw("n_bins", self.len())
            .raw("n_reps", self.n_reps);
        let segs = self.segments();
        let join = |v: Vec<String>| v.join(", ");
        if !segs.is_empty() {
            w.raw("segment_ids", join(segs.iter().map(|s| s.to_string()).collect()))
                .raw(
                    "segment_first_bin",
                    join(segs.iter().map(|&s| self.segment_range(s).start.to_string()).collect()),
                );
        }
        w.finish()
    }
}

/// Reads a trace written by [`BinnedTrace::to_csv`].
///
/// The segment index is not stored; consecutive bins belong to the same
/// segment while each starts where the previous one ended.
pub fn parse_trace_csv(text: &str) -> Result<BinnedTrace, TraceParseError> {
    let err = |line: usize, msg: String| TraceParseError { line, msg };
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h.split(',').map(str::trim).eq(TRACE_CSV_HEADER.split(',').map(str::trim)) => {}
        _ => return Err(err(1, format!("expected header `{TRACE_CSV_HEADER}`"))),
    }
    let mut t = BinnedTrace {
        bin_start: Vec::new(),
        bin_end: Vec::new(),
        segment: Vec::new(),
        counts: Vec::new(),
        n_reps: 0,
        meta: TraceMeta::default(),
    };
    for (idx, raw) in lines {
        let line = idx + 1;
        if raw.trim().is_empty() {
            continue;
        }
        let f: Vec<&str> = raw.split(',').map(str::trim).collect();
        if f.len() != 4 {
            return Err(err(line, format!("expected 4 fields, found {}", f.len())));
        }
        let num = |s: &str| s.parse::<f64>().map_err(|_| err(line, format!("`{s}` is not a number")));
        let int = |s: &str| s.parse::<u64>().map_err(|_| err(line, format!("`{s}` is not a count")));
        let (a, b, c, n) = (num(f[0])?, num(f[1])?, int(f[2])?, int(f[3])?);
        if !(b > a) {
            return Err(err(line, "bin end must exceed bin start".into()));
        }
        if t.counts.is_empty() {
            t.n_reps = n;
        } else if n != t.n_reps {
            return Err(err(line, "n_reps differs between rows".into()));
        }
        let seg = match (t.bin_end.last(), t.segment.last()) {
            (Some(&prev_end), Some(&s)) => {
                if a < prev_end {
                    return Err(err(line, "bins overlap or are out of order".into()));
                }
                if a == prev_end {
                    s
                } else {
                    s + 1
                }
            }
            _ => 0,
        };
        t.bin_start.push(a);
        t.bin_end.push(b);
        t.segment.push(seg);
        t.counts.push(c);
    }
    Ok(t)
}

pub fn parse_trace_meta(text: &str) -> Result<TraceMeta, KvError> {
    let doc = kv::parse(text)?;
    doc.allow_sections(&["trace"])?;
    let s = doc
        .section("trace")
        .ok_or_else(|| KvError::semantic(1, "trace", "missing [trace] section"))?;
    s.reject_unknown(&[
        "sequence_sha256",
        "emitter_sha256",
        "seed",
        "n_bins",
        "n_reps",
        "segment_ids",
        "segment_first_bin",
    ])?;
    Ok(TraceMeta {
        sequence_hash: s.str("sequence_sha256")?.to_string(),
        emitter_hash: s.str("emitter_sha256")?.to_string(),
        seed: s.u64("seed")?,
    })
}

/// Reads a trace CSV together with its sidecar, restoring metadata and the
/// exact segment index of every bin.
pub fn parse_trace(csv: &str, meta: &str) -> Result<BinnedTrace, TraceParseError> {
    let kv_err = |e: KvError| match e {
        KvError::Syntax { line, msg, .. } => TraceParseError { line, msg: format!("sidecar: {msg}") },
        KvError::Semantic { line, key, msg } => TraceParseError {
            line,
            msg: format!("sidecar: `{key}`: {msg}"),
        },
    };
    let mut t = parse_trace_csv(csv)?;
    t.meta = parse_trace_meta(meta).map_err(kv_err)?;
    let doc = kv::parse(meta).map_err(kv_err)?;
    let s = doc.section("trace").expect("checked by parse_trace_meta");
    let n_bins = s.u64("n_bins").map_err(kv_err)? as usize;
    if n_bins != t.len() {
        return Err(TraceParseError {
            line: s.line_of("n_bins"),
            msg: format!("sidecar lists {n_bins} bins, csv has {}", t.len()),
        });
    }
    if s.has("segment_ids") {
        let ids = s.f64_list("segment_ids", crate::units::Unit::Unitless).map_err(kv_err)?;
        let first = s.f64_list("segment_first_bin", crate::units::Unit::Unitless).map_err(kv_err)?;
        let bad = || TraceParseError {
            line: s.line_of("segment_first_bin"),
            msg: "segment table does not match the bins".into(),
        };
        if ids.len() != first.len() || first.first() != Some(&0.0) {
            return Err(bad());
        }
        for (k, &id) in ids.iter().enumerate() {
            let lo = first[k] as usize;
            let hi = first.get(k + 1).map_or(t.len(), |&f| f as usize);
            if lo >= hi || hi > t.len() {
                return Err(bad());
            }
            t.segment[lo..hi].fill(id as usize);
        }
    }
    Ok(t)
}
