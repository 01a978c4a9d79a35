//! Dice scores and the instance → case → class → dataset aggregation.

use std::collections::BTreeMap;
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::BinaryMask;

/// `2|P ∩ G| / (|P| + |G|)`. An empty prediction scores 0; an empty ground
/// truth is an error, since instances are defined from it.
pub fn dsc(pred: &BinaryMask, gt: &BinaryMask) -> Result<f64> {
    if pred.dims() != gt.dims() {
        return Err(Error::DimMismatch(pred.dims(), gt.dims()));
    }
    if gt.is_empty() {
        return Err(Error::EmptyGroundTruth);
    }
    let overlap = pred.intersection_count(gt)?;
    Ok(2.0 * overlap as f64 / (pred.voxel_count() + gt.voxel_count()) as f64)
}

/// Score of one instance at one iteration of one scheme. `dsc` is `None`
/// when the session failed; `cause` then says why.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationRecord {
    pub dataset: String,
    pub case: String,
    pub class: String,
    pub instance: String,
    pub iteration: u32,
    pub scheme: String,
    pub interactions: u32,
    pub dsc: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cause: Option<String>,
}

impl EvaluationRecord {
    pub fn sort_key(&self) -> (&str, &str, &str, &str, &str, u32) {
        (&self.scheme, &self.dataset, &self.case, &self.class, &self.instance, self.iteration)
    }
}

pub const RECORD_CSV_HEADER: [&str; 8] =
    ["dataset", "case", "class", "instance", "iteration", "scheme", "interactions", "dsc"];

fn fmt_dsc(d: Option<f64>) -> String {
    d.map_or_else(|| "NaN".to_string(), |v| v.to_string())
}

/// Records as CSV, missing scores written as `NaN`.
pub fn write_records_csv<W: Write>(records: &[EvaluationRecord], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let io = |e: csv::Error| Error::InvalidParameter(format!("csv: {e}"));
    w.write_record(RECORD_CSV_HEADER).map_err(io)?;
    for r in records {
        w.write_record([
            r.dataset.as_str(),
            &r.case,
            &r.class,
            &r.instance,
            &r.iteration.to_string(),
            &r.scheme,
            &r.interactions.to_string(),
            &fmt_dsc(r.dsc),
        ])
        .map_err(io)?;
    }
    w.flush().map_err(|e| Error::io("csv", e))?;
    Ok(())
}

pub fn read_records_csv<R: Read>(input: R) -> Result<Vec<EvaluationRecord>> {
    let mut rd = csv::Reader::from_reader(input);
    let bad = |m: String| Error::InvalidParameter(format!("records csv: {m}"));
    let headers = rd.headers().map_err(|e| bad(e.to_string()))?.clone();
    if headers.iter().collect::<Vec<_>>() != RECORD_CSV_HEADER {
        return Err(bad(format!("unexpected header {headers:?}")));
    }
    let mut out = Vec::new();
    for row in rd.records() {
        let row = row.map_err(|e| bad(e.to_string()))?;
        let num = |i: usize| row[i].parse::<u32>().map_err(|e| bad(format!("{e} in `{}`", &row[i])));
        let dsc = match &row[7] {
            "NaN" | "" => None,
            s => Some(s.parse::<f64>().map_err(|e| bad(format!("{e} in `{s}`")))?),
        };
        out.push(EvaluationRecord {
            dataset: row[0].to_string(),
            case: row[1].to_string(),
            class: row[2].to_string(),
            instance: row[3].to_string(),
            iteration: num(4)?,
            scheme: row[5].to_string(),
            interactions: num(6)?,
            dsc,
            cause: None,
        });
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AggregateLevel {
    Instance,
    Case,
    Class,
    Dataset,
    Overall,
}

/// Which mean is taken first when a case holds several classes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AggregationOrder {
    /// Instances → case within each class, cases → class, classes → dataset.
    #[default]
    ClassFirst,
    /// Instances → case over all classes, cases → dataset.
    CaseFirst,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateRow {
    pub level: AggregateLevel,
    pub scheme: String,
    pub iteration: u32,
    pub dataset: Option<String>,
    pub class: Option<String>,
    pub case: Option<String>,
    pub instance: Option<String>,
    /// `None` when every contributing score is missing.
    pub mean_dsc: Option<f64>,
    pub mean_interactions: f64,
    /// Number of contributing units one level down that have a score.
    pub n: usize,
    /// Instances without a score anywhere below this row.
    pub n_missing: usize,
}

#[derive(Default)]
struct Acc {
    sum: f64,
    n: usize,
    missing: usize,
    interactions: f64,
    units: usize,
}

impl Acc {
    fn push(&mut self, v: Option<f64>, missing: usize, interactions: f64) {
        if let Some(v) = v {
            self.sum += v;
            self.n += 1;
        }
        self.missing += missing;
        self.interactions += interactions;
        self.units += 1;
    }

    fn mean(&self) -> Option<f64> {
        (self.n > 0).then(|| self.sum / self.n as f64)
    }

    fn mean_interactions(&self) -> f64 {
        if self.units == 0 {
            0.0
        } else {
            self.interactions / self.units as f64
        }
    }
}

type Key = Vec<String>;

/// Fold `children` (already sorted by key) into parents keyed by a prefix.
fn roll_up(children: &BTreeMap<Key, Acc>, parent_of: impl Fn(&Key) -> Key) -> BTreeMap<Key, Acc> {
    let mut out: BTreeMap<Key, Acc> = BTreeMap::new();
    for (k, acc) in children {
        out.entry(parent_of(k))
            .or_default()
            .push(acc.mean(), acc.missing, acc.mean_interactions());
    }
    out
}

/// Nested means per (scheme, iteration). Every level averages the level
/// below with equal weight, so a case with many instances counts as much as
/// a case with one. Record order does not matter.
pub fn aggregate(records: &[EvaluationRecord], order: AggregationOrder) -> Vec<AggregateRow> {
    // key: scheme, iteration (zero-padded for ordering), dataset, class, case, instance
    let mut inst: BTreeMap<Key, Acc> = BTreeMap::new();
    for r in records {
        let class = match order {
            AggregationOrder::ClassFirst => r.class.clone(),
            AggregationOrder::CaseFirst => String::new(),
        };
        let key = vec![
            r.scheme.clone(),
            format!("{:010}", r.iteration),
            r.dataset.clone(),
            class,
            r.case.clone(),
            format!("{}\u{0}{}", r.class, r.instance),
        ];
        inst.entry(key)
            .or_default()
            .push(r.dsc, usize::from(r.dsc.is_none()), r.interactions as f64);
    }
    let case = roll_up(&inst, |k| k[..5].to_vec());
    let class = roll_up(&case, |k| k[..4].to_vec());
    let dataset = roll_up(&class, |k| k[..3].to_vec());
    let overall = roll_up(&dataset, |k| k[..2].to_vec());

    let mut rows = Vec::new();
    let opt = |s: &String| (!s.is_empty()).then(|| s.clone());
    let mut emit = |level: AggregateLevel, map: &BTreeMap<Key, Acc>| {
        for (k, acc) in map {
            let class = k.get(3).and_then(opt);
            let (class, instance) = match (level, k.get(5)) {
                (AggregateLevel::Instance, Some(ci)) => {
                    let (c, i) = ci.split_once('\u{0}').unwrap_or(("", ci));
                    (Some(c.to_string()).filter(|c| !c.is_empty()), Some(i.to_string()))
                }
                _ => (class, None),
            };
            rows.push(AggregateRow {
                level,
                scheme: k[0].clone(),
                iteration: k[1].parse().unwrap_or(0),
                dataset: k.get(2).cloned(),
                class,
                case: k.get(4).cloned(),
                instance,
                mean_dsc: acc.mean(),
                mean_interactions: acc.mean_interactions(),
                n: acc.n,
                n_missing: acc.missing,
            });
        }
    };
    emit(AggregateLevel::Instance, &inst);
    emit(AggregateLevel::Case, &case);
    if order == AggregationOrder::ClassFirst {
        emit(AggregateLevel::Class, &class);
    }
    emit(AggregateLevel::Dataset, &dataset);
    emit(AggregateLevel::Overall, &overall);
    rows
}

pub const AGGREGATE_CSV_HEADER: [&str; 11] = [
    "level",
    "scheme",
    "iteration",
    "dataset",
    "class",
    "case",
    "instance",
    "mean_dsc",
    "mean_interactions",
    "n",
    "n_missing",
];

pub fn write_aggregate_csv<W: Write>(rows: &[AggregateRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let io = |e: csv::Error| Error::InvalidParameter(format!("csv: {e}"));
    w.write_record(AGGREGATE_CSV_HEADER).map_err(io)?;
    for r in rows {
        let level = serde_json::to_value(r.level)?;
        w.write_record([
            level.as_str().unwrap_or_default(),
            &r.scheme,
            &r.iteration.to_string(),
            r.dataset.as_deref().unwrap_or(""),
            r.class.as_deref().unwrap_or(""),
            r.case.as_deref().unwrap_or(""),
            r.instance.as_deref().unwrap_or(""),
            &fmt_dsc(r.mean_dsc),
            &r.mean_interactions.to_string(),
            &r.n.to_string(),
            &r.n_missing.to_string(),
        ])
        .map_err(io)?;
    }
    w.flush().map_err(|e| Error::io("csv", e))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::Dims;

    fn rec(case: &str, instance: &str, dsc: Option<f64>) -> EvaluationRecord {
        EvaluationRecord {
            dataset: "d".into(),
            case: case.into(),
            class: "lesion".into(),
            instance: instance.into(),
            iteration: 0,
            scheme: "s".into(),
            interactions: 2,
            dsc,
            cause: None,
        }
    }

    fn level(rows: &[AggregateRow], l: AggregateLevel) -> Vec<&AggregateRow> {
        rows.iter().filter(|r| r.level == l).collect()
    }

    #[test]
    fn dsc_examples() {
        let d = Dims::new(4, 1, 1);
        let a = BinaryMask::from_voxels(d, [[0, 0, 0], [1, 0, 0]]);
        let b = BinaryMask::from_voxels(d, [[1, 0, 0], [2, 0, 0]]);
        let c = BinaryMask::from_voxels(d, [[3, 0, 0]]);
        assert_eq!(dsc(&a, &a).unwrap(), 1.0);
        assert_eq!(dsc(&a, &c).unwrap(), 0.0);
        assert_eq!(dsc(&a, &b).unwrap(), 0.5);
        assert_eq!(dsc(&BinaryMask::empty(d), &a).unwrap(), 0.0);
        assert!(matches!(dsc(&a, &BinaryMask::empty(d)), Err(Error::EmptyGroundTruth)));
    }

    #[test]
    fn case_weighted_not_instance_weighted() {
        let rows = aggregate(
            &[rec("a", "1", Some(0.4)), rec("a", "2", Some(0.6)), rec("b", "1", Some(1.0))],
            AggregationOrder::ClassFirst,
        );
        let cases = level(&rows, AggregateLevel::Case);
        assert_eq!(cases[0].mean_dsc, Some(0.5));
        let ds = level(&rows, AggregateLevel::Dataset);
        assert_eq!(ds[0].mean_dsc, Some(0.75));
        // instance-weighted would be 2.0 / 3
        assert_ne!(ds[0].mean_dsc, Some(2.0 / 3.0));
    }

    #[test]
    fn missing_scores_are_counted() {
        let rows = aggregate(&[rec("a", "1", None), rec("a", "2", Some(1.0))], AggregationOrder::ClassFirst);
        let ds = level(&rows, AggregateLevel::Dataset);
        assert_eq!(ds[0].mean_dsc, Some(1.0));
        assert_eq!(ds[0].n_missing, 1);
    }

    #[test]
    fn csv_round_trip() {
        let records = vec![rec("a,b", "1", Some(0.125)), rec("c", "2", None)];
        let mut buf = Vec::new();
        write_records_csv(&records, &mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("dataset,case,class,instance,iteration,scheme,interactions,dsc\n"));
        assert_eq!(read_records_csv(&buf[..]).unwrap(), records);
    }
}
