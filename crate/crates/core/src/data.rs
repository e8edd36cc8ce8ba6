//! Observation records, the dataset container and CSV ingestion.
//!
//! The CSV layout is `y1,y2,d1,d2,a,x1,...,xp` with a header row. Times are stored on
//! the natural scale; callers take logs where the model needs them.

use std::fmt;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One of the two event times of a subject.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Outcome {
    First,
    Second,
}

impl Outcome {
    pub const ALL: [Outcome; 2] = [Outcome::First, Outcome::Second];

    /// 1-based outcome number.
    pub fn number(self) -> usize {
        match self {
            Outcome::First => 1,
            Outcome::Second => 2,
        }
    }

    pub fn index(self) -> usize {
        self.number() - 1
    }

    pub fn from_number(j: usize) -> Result<Self> {
        match j {
            1 => Ok(Outcome::First),
            2 => Ok(Outcome::Second),
            _ => Err(Error::Precondition(format!("outcome index must be 1 or 2, got {j}"))),
        }
    }
}

impl fmt::Display for Outcome {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.number())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub y1: f64,
    pub y2: f64,
    pub delta1: bool,
    pub delta2: bool,
    pub x: Vec<f64>,
    pub a: usize,
}

impl Observation {
    #[inline]
    pub fn y(&self, j: Outcome) -> f64 {
        match j {
            Outcome::First => self.y1,
            Outcome::Second => self.y2,
        }
    }

    #[inline]
    pub fn log_y(&self, j: Outcome) -> f64 {
        self.y(j).ln()
    }

    #[inline]
    pub fn delta(&self, j: Outcome) -> bool {
        match j {
            Outcome::First => self.delta1,
            Outcome::Second => self.delta2,
        }
    }

    #[inline]
    pub fn both_observed(&self) -> bool {
        self.delta1 && self.delta2
    }
}

/// Immutable collection of observations sharing covariate dimension `p`, with arms `0..=k`.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    observations: Vec<Observation>,
    p: usize,
    k: usize,
}

impl Dataset {
    /// Builds a dataset, checking every record invariant.
    pub fn new(observations: Vec<Observation>, p: usize, k: usize) -> Result<Self> {
        for (i, o) in observations.iter().enumerate() {
            check_observation(o, p, k).map_err(|msg| Error::Validation(format!("row {}: {msg}", i + 1)))?;
        }
        Ok(Dataset { observations, p, k })
    }

    /// Builds a dataset with `k` inferred as the largest arm index present.
    pub fn from_observations(observations: Vec<Observation>, p: usize) -> Result<Self> {
        let k = observations.iter().map(|o| o.a).max().unwrap_or(0);
        Self::new(observations, p, k)
    }

    pub fn observations(&self) -> &[Observation] {
        &self.observations
    }

    pub fn iter(&self) -> std::slice::Iter<'_, Observation> {
        self.observations.iter()
    }

    pub fn len(&self) -> usize {
        self.observations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.observations.is_empty()
    }

    /// Covariate dimension.
    pub fn p(&self) -> usize {
        self.p
    }

    /// Largest arm index; arms are `0..=k`.
    pub fn k(&self) -> usize {
        self.k
    }

    pub fn n_arms(&self) -> usize {
        self.k + 1
    }

    pub fn arm_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.n_arms()];
        for o in &self.observations {
            sizes[o.a] += 1;
        }
        sizes
    }

    /// Replaces the arm count, failing if the data disagree with it.
    pub fn with_k(self, k: usize) -> Result<Self> {
        let inferred = self.observations.iter().map(|o| o.a).max().unwrap_or(0);
        if inferred != k {
            return Err(Error::Validation(format!(
                "configured K = {k} but data contain arms up to {inferred}"
            )));
        }
        Ok(Dataset { k, ..self })
    }

    pub fn covariates(&self) -> Vec<Vec<f64>> {
        self.observations.iter().map(|o| o.x.clone()).collect()
    }
}

fn check_observation(o: &Observation, p: usize, k: usize) -> std::result::Result<(), String> {
    if !(o.y1.is_finite() && o.y1 > 0.0) {
        return Err(format!("y1 must be positive and finite, got {}", o.y1));
    }
    if !(o.y2.is_finite() && o.y2 > 0.0) {
        return Err(format!("y2 must be positive and finite, got {}", o.y2));
    }
    if o.x.len() != p {
        return Err(format!("expected {p} covariates, got {}", o.x.len()));
    }
    if o.x.iter().any(|v| !v.is_finite()) {
        return Err("non-finite covariate".into());
    }
    if o.a > k {
        return Err(format!("arm {} exceeds K = {k}", o.a));
    }
    Ok(())
}

/// Subset of `d` with arm `a`, preserving order. The subset keeps the parent's `k`.
pub fn split_by_arm(d: &Dataset, a: usize) -> Result<Dataset> {
    if a > d.k {
        return Err(Error::Precondition(format!("arm {a} outside 0..={}", d.k)));
    }
    let observations: Vec<Observation> = d.observations.iter().filter(|o| o.a == a).cloned().collect();
    if observations.is_empty() {
        return Err(Error::EmptyArm(a));
    }
    Ok(Dataset {
        observations,
        p: d.p,
        k: d.k,
    })
}

fn required_columns(p: usize) -> Vec<String> {
    let mut cols: Vec<String> = ["y1", "y2", "d1", "d2", "a"].iter().map(|s| s.to_string()).collect();
    cols.extend((1..=p).map(|i| format!("x{i}")));
    cols
}

fn covariate_count(headers: &csv::StringRecord) -> usize {
    (1..).take_while(|i| headers.iter().any(|h| h.trim() == format!("x{i}"))).count()
}

fn column_index(headers: &csv::StringRecord, name: &str) -> Result<usize> {
    headers
        .iter()
        .position(|h| h.trim() == name)
        .ok_or_else(|| Error::MissingColumn(name.to_string()))
}

fn parse_field<T: std::str::FromStr>(rec: &csv::StringRecord, idx: usize, name: &str, line: usize) -> Result<T> {
    let raw = rec.get(idx).ok_or_else(|| Error::Parse {
        line,
        msg: format!("missing field `{name}`"),
    })?;
    raw.trim().parse::<T>().map_err(|_| Error::Parse {
        line,
        msg: format!("cannot parse `{name}` from {raw:?}"),
    })
}

fn parse_indicator(rec: &csv::StringRecord, idx: usize, name: &str, line: usize) -> Result<bool> {
    match parse_field::<u8>(rec, idx, name, line)? {
        0 => Ok(false),
        1 => Ok(true),
        v => Err(Error::Parse {
            line,
            msg: format!("`{name}` must be 0 or 1, got {v}"),
        }),
    }
}

/// Reads a dataset from any CSV source.
pub fn read_dataset<R: Read>(reader: R) -> Result<Dataset> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let headers = rdr
        .headers()
        .map_err(|e| Error::Parse { line: 1, msg: e.to_string() })?
        .clone();
    let p = covariate_count(&headers);
    if p == 0 {
        return Err(Error::MissingColumn("x1".into()));
    }
    let cols = required_columns(p);
    let idx: Vec<usize> = cols.iter().map(|c| column_index(&headers, c)).collect::<Result<_>>()?;
    if let Some(extra) = headers.iter().find(|h| !cols.iter().any(|c| c == h.trim())) {
        return Err(Error::Parse {
            line: 1,
            msg: format!("unknown column `{extra}`"),
        });
    }

    let mut observations = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| Error::Parse {
            line: e.position().map(|p| p.line() as usize).unwrap_or(0),
            msg: e.to_string(),
        })?;
        let line = rec.position().map(|p| p.line() as usize).unwrap_or(0);
        let x = (0..p)
            .map(|i| parse_field::<f64>(&rec, idx[5 + i], &cols[5 + i], line))
            .collect::<Result<Vec<_>>>()?;
        let o = Observation {
            y1: parse_field(&rec, idx[0], "y1", line)?,
            y2: parse_field(&rec, idx[1], "y2", line)?,
            delta1: parse_indicator(&rec, idx[2], "d1", line)?,
            delta2: parse_indicator(&rec, idx[3], "d2", line)?,
            a: parse_field(&rec, idx[4], "a", line)?,
            x,
        };
        check_observation(&o, p, usize::MAX).map_err(|msg| Error::Validation(format!("line {line}: {msg}")))?;
        observations.push(o);
    }
    Dataset::from_observations(observations, p)
}

pub fn load_dataset(path: impl AsRef<Path>) -> Result<Dataset> {
    let file = std::fs::File::open(path.as_ref())?;
    read_dataset(std::io::BufReader::new(file))
}

/// Writes `d` as CSV. Floats use the shortest representation that round-trips exactly.
pub fn write_dataset<W: Write>(d: &Dataset, writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(required_columns(d.p)).map_err(csv_io)?;
    for o in &d.observations {
        let mut row = vec![
            o.y1.to_string(),
            o.y2.to_string(),
            u8::from(o.delta1).to_string(),
            u8::from(o.delta2).to_string(),
            o.a.to_string(),
        ];
        row.extend(o.x.iter().map(|v| v.to_string()));
        w.write_record(&row).map_err(csv_io)?;
    }
    w.flush()?;
    Ok(())
}

pub fn save_dataset(d: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    let file = std::fs::File::create(path.as_ref())?;
    write_dataset(d, std::io::BufWriter::new(file))
}

/// Reads a covariate-only CSV with header `x1,...,xp`.
pub fn read_covariates<R: Read>(reader: R) -> Result<Vec<Vec<f64>>> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let headers = rdr
        .headers()
        .map_err(|e| Error::Parse { line: 1, msg: e.to_string() })?
        .clone();
    let p = covariate_count(&headers);
    if p == 0 {
        return Err(Error::MissingColumn("x1".into()));
    }
    let idx: Vec<usize> = (1..=p).map(|i| column_index(&headers, &format!("x{i}"))).collect::<Result<_>>()?;
    let mut rows = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| Error::Parse {
            line: e.position().map(|p| p.line() as usize).unwrap_or(0),
            msg: e.to_string(),
        })?;
        let line = rec.position().map(|p| p.line() as usize).unwrap_or(0);
        let x = idx
            .iter()
            .enumerate()
            .map(|(i, &c)| parse_field::<f64>(&rec, c, &format!("x{}", i + 1), line))
            .collect::<Result<Vec<_>>>()?;
        rows.push(x);
    }
    Ok(rows)
}

pub fn load_covariates(path: impl AsRef<Path>) -> Result<Vec<Vec<f64>>> {
    let file = std::fs::File::open(path.as_ref())?;
    read_covariates(std::io::BufReader::new(file))
}

fn csv_io(e: csv::Error) -> Error {
    Error::Io(std::io::Error::other(e))
}

/// User-specified weights on the two prediction terms of the estimating equation.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct WeightConfig {
    pub c1: f64,
    pub c2: f64,
}

impl WeightConfig {
    pub const BASELINE: WeightConfig = WeightConfig { c1: 0.0, c2: 0.0 };
    pub const PREDICTION_BASED: WeightConfig = WeightConfig { c1: 1.0, c2: 1.0 };
    pub const PREDICTION_POWERED: WeightConfig = WeightConfig { c1: -1.0, c2: 1.0 };

    pub fn new(c1: f64, c2: f64) -> Result<Self> {
        if !(c1.is_finite() && c2.is_finite()) {
            return Err(Error::Validation(format!("weights must be finite, got ({c1}, {c2})")));
        }
        Ok(WeightConfig { c1, c2 })
    }
}

impl fmt::Display for WeightConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {})", self.c1, self.c2)
    }
}

/// Summary produced by [`validate`].
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ValidationReport {
    pub n: usize,
    pub p: usize,
    pub k: usize,
    pub arm_sizes: Vec<usize>,
    /// `censoring_rates[a][j]`: fraction of arm `a` rows with outcome `j + 1` censored.
    pub censoring_rates: Vec<[f64; 2]>,
    /// Per-outcome censoring rate over the whole dataset.
    pub overall_censoring: [f64; 2],
    pub covariate_ranges: Vec<(f64, f64)>,
    pub flags: Vec<String>,
}

pub fn validate(d: &Dataset) -> ValidationReport {
    let n = d.len();
    let arm_sizes = d.arm_sizes();
    let mut censored = vec![[0usize; 2]; d.n_arms()];
    let mut ranges = vec![(f64::INFINITY, f64::NEG_INFINITY); d.p];
    for o in d.iter() {
        for j in Outcome::ALL {
            if !o.delta(j) {
                censored[o.a][j.index()] += 1;
            }
        }
        for (r, &v) in ranges.iter_mut().zip(&o.x) {
            r.0 = r.0.min(v);
            r.1 = r.1.max(v);
        }
    }
    let rate = |c: usize, m: usize| if m == 0 { 0.0 } else { c as f64 / m as f64 };
    let censoring_rates = censored
        .iter()
        .zip(&arm_sizes)
        .map(|(c, &m)| [rate(c[0], m), rate(c[1], m)])
        .collect();
    let overall_censoring = [0, 1].map(|j| rate(censored.iter().map(|c| c[j]).sum(), n));

    let mut flags = Vec::new();
    if n == 0 {
        flags.push("n=0: dataset is empty".to_string());
    }
    for (a, &m) in arm_sizes.iter().enumerate() {
        if m == 0 {
            flags.push(format!("arm {a} is empty"));
        } else if m < d.p + 2 {
            flags.push(format!("arm {a} has {m} rows, fewer than p + 2 = {}", d.p + 2));
        }
    }
    if n > 0 && d.k == 0 {
        flags.push("single arm: no treatment decision to learn".to_string());
    }
    ValidationReport {
        n,
        p: d.p,
        k: d.k,
        arm_sizes,
        censoring_rates,
        overall_censoring,
        covariate_ranges: if n == 0 { Vec::new() } else { ranges },
        flags,
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "n = {}, p = {}, K = {}", self.n, self.p, self.k)?;
        for (a, (m, r)) in self.arm_sizes.iter().zip(&self.censoring_rates).enumerate() {
            writeln!(f, "arm {a}: n_a = {m}, censoring (T1, T2) = ({:.4}, {:.4})", r[0], r[1])?;
        }
        writeln!(
            f,
            "overall censoring (T1, T2) = ({:.4}, {:.4})",
            self.overall_censoring[0], self.overall_censoring[1]
        )?;
        for (i, (lo, hi)) in self.covariate_ranges.iter().enumerate() {
            writeln!(f, "x{}: [{lo}, {hi}]", i + 1)?;
        }
        for flag in &self.flags {
            writeln!(f, "warning: {flag}")?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn obs(a: usize, d1: bool, d2: bool) -> Observation {
        Observation {
            y1: 1.0,
            y2: 2.0,
            delta1: d1,
            delta2: d2,
            x: vec![0.5, -0.5],
            a,
        }
    }

    #[test]
    fn parses_small_csv() {
        let csv = "y1,y2,d1,d2,a,x1,x2\n1.5,2.0,1,0,0,0.1,0.2\n0.7,3.1,0,1,1,-1.0,2.0\n2.2,0.4,1,1,0,0.0,0.0\n";
        let d = read_dataset(csv.as_bytes()).unwrap();
        assert_eq!((d.len(), d.p(), d.k()), (3, 2, 1));
        assert_eq!(d.observations()[1].x, vec![-1.0, 2.0]);
        assert!(!d.observations()[1].delta1);
    }

    #[test]
    fn negative_time_is_validation_error() {
        let csv = "y1,y2,d1,d2,a,x1\n-1,2.0,1,0,0,0.1\n";
        assert!(matches!(read_dataset(csv.as_bytes()), Err(Error::Validation(_))));
    }

    #[test]
    fn malformed_row_names_line() {
        let csv = "y1,y2,d1,d2,a,x1\n1,2.0,1,0,0,0.1\n1,abc,1,0,0,0.1\n";
        match read_dataset(csv.as_bytes()) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn missing_column_is_named() {
        let csv = "y1,y2,d1,a,x1\n1,2,1,0,0.1\n";
        match read_dataset(csv.as_bytes()) {
            Err(Error::MissingColumn(c)) => assert_eq!(c, "d2"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn split_preserves_order() {
        let mut rows = vec![obs(0, true, true), obs(1, true, true), obs(0, false, true)];
        rows[2].y1 = 9.0;
        let d = Dataset::from_observations(rows, 2).unwrap();
        let s = split_by_arm(&d, 0).unwrap();
        assert_eq!(s.len(), 2);
        assert_eq!(s.observations()[1].y1, 9.0);
        assert!(matches!(split_by_arm(&d, 2), Err(Error::Precondition(_))));
    }

    #[test]
    fn split_of_absent_arm_is_empty_arm_error() {
        let d = Dataset::new(vec![obs(0, true, true)], 2, 1).unwrap();
        assert!(matches!(split_by_arm(&d, 1), Err(Error::EmptyArm(1))));
    }

    #[test]
    fn k_override_mismatch_is_error() {
        let d = Dataset::from_observations(vec![obs(0, true, true), obs(1, true, true)], 2).unwrap();
        assert!(d.clone().with_k(2).is_err());
        assert_eq!(d.with_k(1).unwrap().k(), 1);
    }

    #[test]
    fn validation_report_rates() {
        let d = Dataset::from_observations(vec![obs(0, true, true), obs(1, true, true)], 2).unwrap();
        let r = validate(&d);
        assert_eq!(r.censoring_rates, vec![[0.0, 0.0], [0.0, 0.0]]);

        let d = Dataset::from_observations(vec![obs(0, false, true), obs(0, true, true)], 2).unwrap();
        assert_eq!(validate(&d).censoring_rates[0], [0.5, 0.0]);

        let empty = Dataset::new(vec![], 2, 0).unwrap();
        let r = validate(&empty);
        assert_eq!(r.n, 0);
        assert!(r.flags.iter().any(|f| f.contains("n=0")));
    }
}
