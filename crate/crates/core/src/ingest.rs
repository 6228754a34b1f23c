//! CSV loading, preprocessing into records, and partitioning by location.
//!
//! A JSON schema names the feature, sensitive, target and location
//! columns. Ordinal features are min-max scaled, categorical features are
//! one-hot encoded, and continuous sensitive columns are binarized at the
//! column mean. Rows with missing or unparsable required values are
//! dropped and counted.

use std::collections::{BTreeMap, BTreeSet};
use std::io::Read;
use std::path::Path;

use rand::seq::index::sample as sample_indices;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::demographics::{Record, SensitiveVector};
use crate::error::{arg, Error, Result};
use crate::population::Site;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureKind {
    Ordinal,
    Categorical,
    Binary,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureColumn {
    pub column: String,
    pub kind: FeatureKind,
    /// Value mapped to 1 for binary columns; numeric 0/1 otherwise.
    #[serde(default)]
    pub positive: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "snake_case")]
pub enum SensitiveRule {
    /// 1 iff the numeric value is at least the column mean.
    MeanThreshold,
    /// 1 iff the value equals `positive` (or is numeric 1 when absent).
    Binary {
        #[serde(default)]
        positive: Option<String>,
    },
    /// 1 iff the value equals `value`.
    Category { value: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensitiveColumn {
    pub column: String,
    #[serde(flatten)]
    pub rule: SensitiveRule,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TargetColumn {
    pub column: String,
    #[serde(default)]
    pub positive: Option<String>,
}

fn default_min_site_size() -> usize {
    1000
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSchema {
    #[serde(default)]
    pub features: Vec<FeatureColumn>,
    pub sensitive: Vec<SensitiveColumn>,
    pub target: TargetColumn,
    #[serde(default)]
    pub location: Option<String>,
    #[serde(default = "default_min_site_size")]
    pub min_site_size: usize,
}

impl DatasetSchema {
    pub fn from_json(text: &str) -> Result<Self> {
        let schema: Self = serde_json::from_str(text)?;
        if schema.sensitive.is_empty() {
            return Err(Error::Schema("at least one sensitive column is required".into()));
        }
        Ok(schema)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

/// Header plus string cells.
#[derive(Debug, Clone, PartialEq)]
pub struct RawTable {
    pub headers: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl RawTable {
    pub fn from_reader<R: Read>(reader: R) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().has_headers(true).flexible(false).from_reader(reader);
        let headers = rdr.headers()?.iter().map(|h| h.trim().to_string()).collect();
        let mut rows = vec![];
        for rec in rdr.records() {
            rows.push(rec?.iter().map(str::to_string).collect());
        }
        Ok(Self { headers, rows })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_reader(std::fs::File::open(path)?)
    }

    pub fn column(&self, name: &str) -> Result<usize> {
        self.headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::Schema(format!("column `{name}` not found")))
    }
}

fn is_missing(cell: &str) -> bool {
    matches!(cell.trim(), "" | "NA" | "N/A" | "NaN" | "nan" | "?" | "null")
}

fn parse_number(cell: &str) -> Option<f64> {
    cell.trim().parse::<f64>().ok().filter(|v| v.is_finite())
}

fn parse_flag(cell: &str, positive: Option<&str>) -> Option<f64> {
    let cell = cell.trim();
    match positive {
        Some(p) => Some(if cell == p { 1.0 } else { 0.0 }),
        None => match cell.to_ascii_lowercase().as_str() {
            "1" | "1.0" | "true" | "yes" => Some(1.0),
            "0" | "0.0" | "false" | "no" => Some(0.0),
            _ => None,
        },
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
enum FittedFeature {
    Ordinal { col: usize, min: f64, max: f64 },
    Categorical { col: usize, levels: Vec<String> },
    Binary { col: usize, positive: Option<String> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
enum FittedSensitive {
    Threshold { col: usize, mean: f64 },
    Binary { col: usize, positive: Option<String> },
    Category { col: usize, value: String },
}

/// Column statistics learned from one table and applied to others.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Preprocessor {
    features: Vec<FittedFeature>,
    sensitive: Vec<FittedSensitive>,
    target: (usize, Option<String>),
    location: Option<usize>,
    pub feature_names: Vec<String>,
    pub sensitive_names: Vec<String>,
}

/// Rows that survived preprocessing, aligned with their locations.
#[derive(Debug, Clone, PartialEq)]
pub struct Preprocessed {
    pub records: Vec<Record>,
    pub locations: Vec<Option<String>>,
    pub input_rows: usize,
    pub dropped_missing: usize,
    pub dropped_parse: usize,
}

impl Preprocessor {
    /// Learns scaling ranges, category levels and sensitive means from the
    /// rows of `table` that have every required value.
    pub fn fit(table: &RawTable, schema: &DatasetSchema) -> Result<Self> {
        let mut required = vec![];
        let mut features = vec![];
        let mut feature_names = vec![];
        for f in &schema.features {
            let col = table.column(&f.column)?;
            required.push(col);
            features.push((f, col));
        }
        let mut sensitive = vec![];
        for s in &schema.sensitive {
            let col = table.column(&s.column)?;
            required.push(col);
            sensitive.push((s, col));
        }
        let target_col = table.column(&schema.target.column)?;
        required.push(target_col);
        let location = schema.location.as_deref().map(|l| table.column(l)).transpose()?;
        if let Some(l) = location {
            required.push(l);
        }
        let complete: Vec<&Vec<String>> = table.rows.iter().filter(|r| required.iter().all(|&c| !is_missing(&r[c]))).collect();

        let fitted_features = features
            .into_iter()
            .map(|(f, col)| match f.kind {
                FeatureKind::Ordinal => {
                    let vals: Vec<f64> = complete.iter().filter_map(|r| parse_number(&r[col])).collect();
                    let min = vals.iter().copied().fold(f64::INFINITY, f64::min);
                    let max = vals.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                    feature_names.push(f.column.clone());
                    FittedFeature::Ordinal { col, min, max }
                }
                FeatureKind::Categorical => {
                    let levels: Vec<String> =
                        complete.iter().map(|r| r[col].trim().to_string()).collect::<BTreeSet<_>>().into_iter().collect();
                    feature_names.extend(levels.iter().map(|l| format!("{}={l}", f.column)));
                    FittedFeature::Categorical { col, levels }
                }
                FeatureKind::Binary => {
                    feature_names.push(f.column.clone());
                    FittedFeature::Binary { col, positive: f.positive.clone() }
                }
            })
            .collect();

        let fitted_sensitive = sensitive
            .into_iter()
            .map(|(s, col)| match &s.rule {
                SensitiveRule::MeanThreshold => {
                    let vals: Vec<f64> = complete.iter().filter_map(|r| parse_number(&r[col])).collect();
                    if vals.is_empty() {
                        return Err(Error::Ingest(format!("no numeric values in `{}`", s.column)));
                    }
                    Ok(FittedSensitive::Threshold { col, mean: vals.iter().sum::<f64>() / vals.len() as f64 })
                }
                SensitiveRule::Binary { positive } => Ok(FittedSensitive::Binary { col, positive: positive.clone() }),
                SensitiveRule::Category { value } => Ok(FittedSensitive::Category { col, value: value.clone() }),
            })
            .collect::<Result<Vec<_>>>()?;

        Ok(Self {
            features: fitted_features,
            sensitive: fitted_sensitive,
            target: (target_col, schema.target.positive.clone()),
            location,
            feature_names,
            sensitive_names: schema.sensitive.iter().map(|s| s.column.clone()).collect(),
        })
    }

    fn required_columns(&self) -> Vec<usize> {
        let mut cols: Vec<usize> = self
            .features
            .iter()
            .map(|f| match f {
                FittedFeature::Ordinal { col, .. } | FittedFeature::Categorical { col, .. } | FittedFeature::Binary { col, .. } => *col,
            })
            .collect();
        cols.extend(self.sensitive.iter().map(|s| match s {
            FittedSensitive::Threshold { col, .. } | FittedSensitive::Binary { col, .. } | FittedSensitive::Category { col, .. } => *col,
        }));
        cols.push(self.target.0);
        cols.extend(self.location);
        cols
    }

    fn transform_row(&self, row: &[String]) -> Option<(Record, Option<String>)> {
        let mut x = vec![];
        for f in &self.features {
            match f {
                FittedFeature::Ordinal { col, min, max } => {
                    let v = parse_number(&row[*col])?;
                    x.push(if max > min { (v - min) / (max - min) } else { 0.0 });
                }
                FittedFeature::Categorical { col, levels } => {
                    let cell = row[*col].trim();
                    x.extend(levels.iter().map(|l| if l == cell { 1.0 } else { 0.0 }));
                }
                FittedFeature::Binary { col, positive } => x.push(parse_flag(&row[*col], positive.as_deref())?),
            }
        }
        let mut a = vec![];
        for s in &self.sensitive {
            a.push(match s {
                FittedSensitive::Threshold { col, mean } => {
                    if parse_number(&row[*col])? >= *mean {
                        1.0
                    } else {
                        0.0
                    }
                }
                FittedSensitive::Binary { col, positive } => parse_flag(&row[*col], positive.as_deref())?,
                FittedSensitive::Category { col, value } => {
                    if row[*col].trim() == value {
                        1.0
                    } else {
                        0.0
                    }
                }
            });
        }
        let y = parse_flag(&row[self.target.0], self.target.1.as_deref())? as u8;
        let loc = self.location.map(|c| row[c].trim().to_string());
        Some((Record::new(x, SensitiveVector::binary(a).ok()?, y).ok()?, loc))
    }

    pub fn transform(&self, table: &RawTable) -> Preprocessed {
        let required = self.required_columns();
        let mut out = Preprocessed {
            records: vec![],
            locations: vec![],
            input_rows: table.rows.len(),
            dropped_missing: 0,
            dropped_parse: 0,
        };
        for row in &table.rows {
            if required.iter().any(|&c| is_missing(&row[c])) {
                out.dropped_missing += 1;
                continue;
            }
            match self.transform_row(row) {
                Some((r, loc)) => {
                    out.records.push(r);
                    out.locations.push(loc);
                }
                None => out.dropped_parse += 1,
            }
        }
        out
    }
}

/// Fits on `table` and transforms it.
pub fn preprocess(table: &RawTable, schema: &DatasetSchema) -> Result<(Preprocessor, Preprocessed)> {
    let p = Preprocessor::fit(table, schema)?;
    let out = p.transform(table);
    Ok((p, out))
}

/// Sites built from location groups, with what was left out.
#[derive(Debug, Clone)]
pub struct Partition {
    pub sites: Vec<Site>,
    pub excluded_locations: Vec<(String, usize)>,
    pub excluded_records: usize,
}

/// One site per location with at least `min_site_size` records, in
/// location-key order.
pub fn partition_sites(records: &[Record], locations: &[Option<String>], min_site_size: usize) -> Result<Partition> {
    if records.len() != locations.len() {
        return arg("records and locations differ in length");
    }
    let mut groups: BTreeMap<&str, Vec<Record>> = BTreeMap::new();
    for (r, loc) in records.iter().zip(locations) {
        let Some(loc) = loc else {
            return Err(Error::Schema("records carry no location".into()));
        };
        groups.entry(loc.as_str()).or_default().push(r.clone());
    }
    let mut sites = vec![];
    let mut excluded_locations = vec![];
    let mut excluded_records = 0;
    for (loc, recs) in groups {
        if recs.len() >= min_site_size.max(1) {
            let id = sites.len();
            sites.push(Site::empirical(id, recs)?.with_label(loc));
        } else {
            excluded_records += recs.len();
            excluded_locations.push((loc.to_string(), recs.len()));
        }
    }
    if sites.is_empty() {
        return Err(Error::Ingest(format!("no location has at least {min_site_size} records")));
    }
    Ok(Partition { sites, excluded_locations, excluded_records })
}

/// Subsamples (without replacement) or pads with random duplicates to
/// exactly `m_target` sites. Sites are renumbered `0..m_target`.
pub fn resize_arm_pool<R: Rng + ?Sized>(sites: &[Site], m_target: usize, rng: &mut R) -> Result<Vec<Site>> {
    if sites.is_empty() {
        return arg("no sites to resize");
    }
    if m_target == 0 {
        return arg("target pool size must be positive");
    }
    let mut chosen: Vec<usize> = if sites.len() >= m_target {
        let mut idx = sample_indices(rng, sites.len(), m_target).into_vec();
        idx.sort_unstable();
        idx
    } else {
        let mut idx: Vec<usize> = (0..sites.len()).collect();
        while idx.len() < m_target {
            idx.push(rng.random_range(0..sites.len()));
        }
        idx
    };
    if sites.len() == m_target {
        chosen = (0..m_target).collect();
    }
    Ok(chosen
        .into_iter()
        .enumerate()
        .map(|(id, j)| {
            let mut s = sites[j].clone();
            s.id = id;
            s
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SiteSummary {
    pub id: usize,
    pub location: Option<String>,
    pub records: usize,
    pub sensitive_mean: Vec<f64>,
    pub positive_rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IngestSummary {
    pub input_rows: usize,
    pub kept_rows: usize,
    pub dropped_missing: usize,
    pub dropped_parse: usize,
    pub excluded_locations: Vec<(String, usize)>,
    pub excluded_records: usize,
    pub feature_names: Vec<String>,
    pub sensitive_names: Vec<String>,
    pub sites: Vec<SiteSummary>,
}

impl IngestSummary {
    pub fn new(p: &Preprocessor, data: &Preprocessed, partition: Option<&Partition>) -> Self {
        let sites = partition
            .map(|part| {
                part.sites
                    .iter()
                    .map(|s| {
                        let recs = s.records().unwrap_or(&[]);
                        let n = recs.len().max(1) as f64;
                        let d = recs.first().map_or(0, |r| r.a.dim());
                        SiteSummary {
                            id: s.id,
                            location: s.label.clone(),
                            records: recs.len(),
                            sensitive_mean: (0..d).map(|l| recs.iter().map(|r| r.a[l]).sum::<f64>() / n).collect(),
                            positive_rate: recs.iter().map(|r| r.y as f64).sum::<f64>() / n,
                        }
                    })
                    .collect()
            })
            .unwrap_or_default();
        Self {
            input_rows: data.input_rows,
            kept_rows: data.records.len(),
            dropped_missing: data.dropped_missing,
            dropped_parse: data.dropped_parse,
            excluded_locations: partition.map(|p| p.excluded_locations.clone()).unwrap_or_default(),
            excluded_records: partition.map_or(0, |p| p.excluded_records),
            feature_names: p.feature_names.clone(),
            sensitive_names: p.sensitive_names.clone(),
            sites,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::substream;

    fn table(csv: &str) -> RawTable {
        RawTable::from_reader(csv.as_bytes()).unwrap()
    }

    fn schema(json: &str) -> DatasetSchema {
        DatasetSchema::from_json(json).unwrap()
    }

    const BASIC: &str = r#"{
        "features": [{"column": "income", "kind": "ordinal"}, {"column": "cat", "kind": "categorical"}],
        "sensitive": [{"column": "age", "rule": "mean_threshold"}, {"column": "sex", "rule": "binary", "positive": "F"}],
        "target": {"column": "y"},
        "location": "loc",
        "min_site_size": 1
    }"#;

    #[test]
    fn scaling_encoding_and_binarization() {
        let t = table("income,cat,age,sex,y,loc\n10,A,30,F,1,x\n20,B,50,M,0,y\n30,A,40,F,1,x\n");
        let (p, out) = preprocess(&t, &schema(BASIC)).unwrap();
        assert_eq!(p.feature_names, vec!["income", "cat=A", "cat=B"]);
        let xs: Vec<&[f64]> = out.records.iter().map(|r| r.x.as_slice()).collect();
        assert_eq!(xs, vec![&[0.0, 1.0, 0.0][..], &[0.5, 0.0, 1.0], &[1.0, 1.0, 0.0]]);
        let ages: Vec<f64> = out.records.iter().map(|r| r.a[0]).collect();
        assert_eq!(ages, vec![0.0, 1.0, 1.0]);
        let sex: Vec<f64> = out.records.iter().map(|r| r.a[1]).collect();
        assert_eq!(sex, vec![1.0, 0.0, 1.0]);
        assert_eq!(out.records.iter().map(|r| r.y).collect::<Vec<_>>(), vec![1, 0, 1]);
    }

    #[test]
    fn mean_threshold_example() {
        let s = r#"{"sensitive": [{"column": "age", "rule": "mean_threshold"}], "target": {"column": "y"}}"#;
        let (_, out) = preprocess(&table("age,y\n30,0\n50,1\n"), &schema(s)).unwrap();
        assert_eq!(out.records.iter().map(|r| r.a[0]).collect::<Vec<_>>(), vec![0.0, 1.0]);
    }

    #[test]
    fn bad_rows_are_dropped_and_counted() {
        let t = table("income,cat,age,sex,y,loc\n10,A,30,F,1,x\n,B,50,M,0,y\nabc,A,40,F,1,x\n20,A,NA,F,1,x\n30,B,45,M,1,x\n");
        let (_, out) = preprocess(&t, &schema(BASIC)).unwrap();
        assert_eq!((out.records.len(), out.dropped_missing, out.dropped_parse), (2, 2, 1));
        assert_eq!(out.input_rows, out.records.len() + out.dropped_missing + out.dropped_parse);
    }

    #[test]
    fn missing_column_is_schema_error() {
        let t = table("income,age,y\n1,2,1\n");
        assert!(matches!(preprocess(&t, &schema(BASIC)), Err(Error::Schema(_))));
    }

    #[test]
    fn unit_interval_data_is_unchanged() {
        let s = r#"{"features": [{"column": "f", "kind": "ordinal"}], "sensitive": [{"column": "g", "rule": "binary"}], "target": {"column": "y"}}"#;
        let t = table("f,g,y\n0,1,1\n0.25,0,0\n1,1,0\n0.7,0,1\n");
        let (_, out) = preprocess(&t, &schema(s)).unwrap();
        assert_eq!(out.records.iter().map(|r| r.x[0]).collect::<Vec<_>>(), vec![0.0, 0.25, 1.0, 0.7]);
    }

    fn located(counts: &[(&str, usize)]) -> (Vec<Record>, Vec<Option<String>>) {
        let mut recs = vec![];
        let mut locs = vec![];
        for (loc, n) in counts {
            for i in 0..*n {
                recs.push(Record::new(vec![i as f64], SensitiveVector::binary(vec![(i % 2) as f64]).unwrap(), 0).unwrap());
                locs.push(Some(loc.to_string()));
            }
        }
        (recs, locs)
    }

    #[test]
    fn small_locations_are_excluded() {
        let (r, l) = located(&[("L2", 800), ("L1", 1200)]);
        let p = partition_sites(&r, &l, 1000).unwrap();
        assert_eq!(p.sites.len(), 1);
        assert_eq!(p.sites[0].label.as_deref(), Some("L1"));
        assert_eq!(p.excluded_records, 800);
        assert_eq!(p.sites[0].len().unwrap() + p.excluded_records, r.len());
        assert!(matches!(partition_sites(&r, &l, 5000), Err(Error::Ingest(_))));
    }

    #[test]
    fn every_location_with_min_one() {
        let (r, l) = located(&[("c", 3), ("a", 1), ("b", 2)]);
        let p = partition_sites(&r, &l, 1).unwrap();
        let labels: Vec<_> = p.sites.iter().map(|s| s.label.clone().unwrap()).collect();
        assert_eq!(labels, vec!["a", "b", "c"]);
    }

    #[test]
    fn shuffled_input_gives_same_partition() {
        let (r, l) = located(&[("a", 5), ("b", 7)]);
        let mut pairs: Vec<_> = r.into_iter().zip(l).collect();
        let p1 = partition_sites(
            &pairs.iter().map(|p| p.0.clone()).collect::<Vec<_>>(),
            &pairs.iter().map(|p| p.1.clone()).collect::<Vec<_>>(),
            1,
        )
        .unwrap();
        pairs.reverse();
        let p2 = partition_sites(
            &pairs.iter().map(|p| p.0.clone()).collect::<Vec<_>>(),
            &pairs.iter().map(|p| p.1.clone()).collect::<Vec<_>>(),
            1,
        )
        .unwrap();
        for (a, b) in p1.sites.iter().zip(&p2.sites) {
            let mut xa: Vec<f64> = a.records().unwrap().iter().map(|r| r.x[0]).collect();
            let mut xb: Vec<f64> = b.records().unwrap().iter().map(|r| r.x[0]).collect();
            xa.sort_by(f64::total_cmp);
            xb.sort_by(f64::total_cmp);
            assert_eq!(xa, xb);
        }
    }

    #[test]
    fn resizing_pools() {
        let (r, l) = located(&[("a", 2), ("b", 2), ("c", 2), ("d", 2), ("e", 2)]);
        let sites = partition_sites(&r, &l, 1).unwrap().sites;
        let same = resize_arm_pool(&sites, 5, &mut substream(1, &[])).unwrap();
        assert_eq!(same.iter().map(|s| s.label.clone()).collect::<Vec<_>>(), sites.iter().map(|s| s.label.clone()).collect::<Vec<_>>());

        let grown = resize_arm_pool(&sites, 10, &mut substream(1, &[])).unwrap();
        assert_eq!(grown.len(), 10);
        for s in &sites {
            assert!(grown.iter().any(|g| g.label == s.label));
        }
        assert_eq!(grown.iter().map(|s| s.id).collect::<Vec<_>>(), (0..10).collect::<Vec<_>>());

        let a = resize_arm_pool(&sites, 3, &mut substream(4, &[])).unwrap();
        let b = resize_arm_pool(&sites, 3, &mut substream(4, &[])).unwrap();
        assert_eq!(a.iter().map(|s| s.label.clone()).collect::<Vec<_>>(), b.iter().map(|s| s.label.clone()).collect::<Vec<_>>());
        let distinct: BTreeSet<_> = a.iter().map(|s| s.label.clone()).collect();
        assert_eq!(distinct.len(), 3);
    }

    #[test]
    fn summary_counts() {
        let t = table("income,cat,age,sex,y,loc\n10,A,30,F,1,x\n20,B,50,M,0,y\n30,A,40,F,1,x\n");
        let (p, out) = preprocess(&t, &schema(BASIC)).unwrap();
        let part = partition_sites(&out.records, &out.locations, 2).unwrap();
        let s = IngestSummary::new(&p, &out, Some(&part));
        assert_eq!((s.kept_rows, s.excluded_records, s.sites.len()), (3, 1, 1));
        assert_eq!(s.sites[0].sensitive_mean, vec![0.5, 1.0]);
        let json = serde_json::to_string(&s).unwrap();
        assert_eq!(serde_json::from_str::<IngestSummary>(&json).unwrap(), s);
    }
}
