//! Meta-analytic datasets: observed effects, known sampling variances,
//! optional covariates and cluster labels.

use std::collections::HashMap;
use std::io::Read;
use std::path::Path;

use crate::error::{Error, Result};

/// One observed effect size.
#[derive(Debug, Clone, PartialEq)]
pub struct EffectRecord {
    pub y: f64,
    /// Within-study sampling variance, strictly positive.
    pub v: f64,
    pub x: Vec<f64>,
    pub cluster: Option<String>,
}

/// Validated, ordered collection of [`EffectRecord`]s.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    records: Vec<EffectRecord>,
    covariate_names: Vec<String>,
    p: usize,
    m: usize,
}

/// Column names used to pull a [`Dataset`] out of a CSV file.
#[derive(Debug, Clone, Default)]
pub struct ColumnMapping {
    pub y: String,
    pub v: String,
    pub covariates: Vec<String>,
    pub cluster: Option<String>,
}

impl ColumnMapping {
    pub fn new(y: impl Into<String>, v: impl Into<String>) -> Self {
        Self { y: y.into(), v: v.into(), ..Default::default() }
    }

    pub fn with_covariates<I, S>(mut self, names: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        self.covariates = names.into_iter().map(Into::into).collect();
        self
    }

    pub fn with_cluster(mut self, name: impl Into<String>) -> Self {
        self.cluster = Some(name.into());
        self
    }
}

impl Dataset {
    /// Builds a dataset from records, checking every record invariant.
    pub fn new(records: Vec<EffectRecord>) -> Result<Self> {
        let p = records.first().map_or(0, |r| r.x.len());
        let names = (1..=p).map(|j| format!("x{j}")).collect();
        Self::with_names(records, names)
    }

    pub fn with_names(records: Vec<EffectRecord>, covariate_names: Vec<String>) -> Result<Self> {
        let p = covariate_names.len();
        for (i, r) in records.iter().enumerate() {
            let row = i + 1;
            if !r.y.is_finite() {
                return Err(Error::validation(row, format!("effect size y = {} is not finite", r.y)));
            }
            if !r.v.is_finite() || r.v <= 0.0 {
                return Err(Error::validation(
                    row,
                    format!("sampling variance v = {} must be finite and > 0", r.v),
                ));
            }
            if r.x.len() != p {
                return Err(Error::validation(
                    row,
                    format!("expected {p} covariates, found {}", r.x.len()),
                ));
            }
            if let Some(j) = r.x.iter().position(|x| !x.is_finite()) {
                return Err(Error::validation(row, format!("covariate {} is not finite", j + 1)));
            }
        }
        let has_clusters = records.iter().any(|r| r.cluster.is_some());
        if has_clusters && records.iter().any(|r| r.cluster.is_none()) {
            return Err(Error::InvalidData(
                "cluster labels must be given for every record or for none".into(),
            ));
        }
        let m = if has_clusters {
            let mut seen = std::collections::HashSet::new();
            records.iter().filter(|r| seen.insert(r.cluster.as_deref())).count()
        } else {
            records.len()
        };
        Ok(Self { records, covariate_names, p, m })
    }

    /// Convenience constructor for intercept-only data without clusters.
    pub fn from_effects(y: &[f64], v: &[f64]) -> Result<Self> {
        if y.len() != v.len() {
            return Err(Error::Dimension(format!("y has {} entries, v has {}", y.len(), v.len())));
        }
        let records = y
            .iter()
            .zip(v)
            .map(|(&y, &v)| EffectRecord { y, v, x: Vec::new(), cluster: None })
            .collect();
        Self::new(records)
    }

    pub fn records(&self) -> &[EffectRecord] {
        &self.records
    }

    pub fn n(&self) -> usize {
        self.records.len()
    }

    /// Covariate dimension.
    pub fn p(&self) -> usize {
        self.p
    }

    /// Number of distinct clusters (n when unclustered).
    pub fn m(&self) -> usize {
        self.m
    }

    pub fn has_clusters(&self) -> bool {
        self.records.first().is_some_and(|r| r.cluster.is_some())
    }

    pub fn covariate_names(&self) -> &[String] {
        &self.covariate_names
    }

    pub fn y(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.y).collect()
    }

    pub fn v(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.v).collect()
    }

    /// Values of covariate `j` across records.
    pub fn covariate(&self, j: usize) -> Vec<f64> {
        self.records.iter().map(|r| r.x[j]).collect()
    }

    /// Index of a covariate by column name.
    pub fn covariate_index(&self, name: &str) -> Option<usize> {
        self.covariate_names.iter().position(|c| c == name)
    }

    /// Row-major n×p design matrix built from the covariates.
    pub fn design(&self) -> nalgebra::DMatrix<f64> {
        nalgebra::DMatrix::from_fn(self.n(), self.p, |i, j| self.records[i].x[j])
    }

    /// Fails unless the dataset can support a model fit.
    pub fn require_fittable(&self) -> Result<()> {
        if self.n() < 3 {
            return Err(Error::InvalidData(format!(
                "at least 3 effect sizes are required, found {}",
                self.n()
            )));
        }
        Ok(())
    }

    /// Partition of record indices (0-based) into clusters, ordered by first
    /// appearance. Without cluster labels every record is its own cluster.
    pub fn cluster_index(&self) -> Vec<Vec<usize>> {
        if !self.has_clusters() {
            return (0..self.n()).map(|i| vec![i]).collect();
        }
        let mut slot: HashMap<&str, usize> = HashMap::new();
        let mut groups: Vec<Vec<usize>> = Vec::new();
        for (i, r) in self.records.iter().enumerate() {
            let key = r.cluster.as_deref().unwrap_or_default();
            let g = *slot.entry(key).or_insert_with(|| {
                groups.push(Vec::new());
                groups.len() - 1
            });
            groups[g].push(i);
        }
        groups
    }

    /// Reads a CSV file with a header row.
    pub fn load_csv(path: impl AsRef<Path>, mapping: &ColumnMapping) -> Result<Self> {
        let file = std::fs::File::open(path.as_ref())?;
        Self::read_csv(file, mapping)
    }

    pub fn read_csv<R: Read>(reader: R, mapping: &ColumnMapping) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().has_headers(true).trim(csv::Trim::All).from_reader(reader);
        let headers = rdr.headers()?.clone();
        let col = |name: &str| -> Result<usize> {
            headers
                .iter()
                .position(|h| h == name)
                .ok_or_else(|| Error::Config(format!("column '{name}' not found in CSV header")))
        };
        let iy = col(&mapping.y)?;
        let iv = col(&mapping.v)?;
        let ix = mapping.covariates.iter().map(|c| col(c)).collect::<Result<Vec<_>>>()?;
        let ic = mapping.cluster.as_deref().map(col).transpose()?;

        let mut records = Vec::new();
        for (i, row) in rdr.records().enumerate() {
            let row_no = i + 1;
            let row = row?;
            let num = |j: usize, what: &str| -> Result<f64> {
                let cell = row.get(j).unwrap_or("");
                if cell.is_empty() {
                    return Err(Error::validation(row_no, format!("missing value in column '{what}'")));
                }
                cell.parse::<f64>().map_err(|_| {
                    Error::validation(row_no, format!("cannot parse '{cell}' in column '{what}' as a number"))
                })
            };
            let y = num(iy, &mapping.y)?;
            let v = num(iv, &mapping.v)?;
            let x = ix
                .iter()
                .zip(&mapping.covariates)
                .map(|(&j, name)| num(j, name))
                .collect::<Result<Vec<_>>>()?;
            let cluster = match ic {
                Some(j) => {
                    let c = row.get(j).unwrap_or("");
                    if c.is_empty() {
                        return Err(Error::validation(row_no, "missing cluster label"));
                    }
                    Some(c.to_string())
                }
                None => None,
            };
            records.push(EffectRecord { y, v, x, cluster });
        }
        Self::with_names(records, mapping.covariates.clone())
    }

    /// Writes the dataset back out as CSV using the given column names.
    pub fn write_csv<W: std::io::Write>(&self, writer: W, mapping: &ColumnMapping) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(writer);
        let mut header = vec![mapping.y.clone(), mapping.v.clone()];
        header.extend(mapping.covariates.iter().cloned());
        if let Some(c) = &mapping.cluster {
            header.push(c.clone());
        }
        wtr.write_record(&header)?;
        for r in &self.records {
            let mut row = vec![fmt_f64(r.y), fmt_f64(r.v)];
            row.extend(r.x.iter().map(|&x| fmt_f64(x)));
            if mapping.cluster.is_some() {
                row.push(r.cluster.clone().unwrap_or_default());
            }
            wtr.write_record(&row)?;
        }
        wtr.flush()?;
        Ok(())
    }
}

fn fmt_f64(x: f64) -> String {
    // `{:?}` prints the shortest string that round-trips.
    format!("{x:?}")
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn parse(text: &str, mapping: &ColumnMapping) -> Result<Dataset> {
        Dataset::read_csv(text.as_bytes(), mapping)
    }

    #[test]
    fn parses_plain_effects() {
        let ds = parse("y,v\n0.5,0.04\n1.2,0.09\n0.9,0.01\n", &ColumnMapping::new("y", "v")).unwrap();
        assert_eq!((ds.n(), ds.p(), ds.m()), (3, 0, 3));
        assert_eq!(ds.y(), vec![0.5, 1.2, 0.9]);
    }

    #[test]
    fn counts_distinct_clusters() {
        let map = ColumnMapping::new("y", "v").with_cluster("study");
        let ds = parse("y,v,study\n0.5,0.04,A\n1.2,0.09,A\n0.9,0.01,B\n", &map).unwrap();
        assert_eq!(ds.m(), 2);
        assert_eq!(ds.cluster_index(), vec![vec![0, 1], vec![2]]);
    }

    #[test]
    fn cluster_order_is_first_appearance() {
        let map = ColumnMapping::new("y", "v").with_cluster("c");
        let ds = parse("y,v,c\n0,1,B\n0,1,A\n0,1,B\n", &map).unwrap();
        assert_eq!(ds.cluster_index(), vec![vec![0, 2], vec![1]]);
    }

    #[test]
    fn singleton_clusters_without_labels() {
        let ds = Dataset::from_effects(&[0.0, 1.0, 2.0], &[1.0; 3]).unwrap();
        assert_eq!(ds.cluster_index(), vec![vec![0], vec![1], vec![2]]);
    }

    #[test]
    fn cluster_labels_are_exact_strings() {
        let map = ColumnMapping::new("y", "v").with_cluster("c");
        let ds = parse("y,v,c\n0,1,1\n0,1,1.0\n0,1,01\n", &map).unwrap();
        assert_eq!(ds.m(), 3);
    }

    #[test]
    fn negative_variance_names_the_row() {
        let err = parse("y,v\n0.5,0.04\n1.2,-0.1\n", &ColumnMapping::new("y", "v")).unwrap_err();
        match err {
            Error::Validation { row, .. } => assert_eq!(row, 2),
            other => panic!("unexpected error {other}"),
        }
    }

    #[test]
    fn non_finite_variance_rejected() {
        let err = parse("y,v\n0.5,inf\n", &ColumnMapping::new("y", "v")).unwrap_err();
        assert!(matches!(err, Error::Validation { row: 1, .. }));
    }

    #[test]
    fn missing_column_is_config_error() {
        let err = parse("y,var\n0.5,0.04\n", &ColumnMapping::new("y", "v")).unwrap_err();
        assert!(matches!(err, Error::Config(_)), "{err}");
    }

    #[test]
    fn missing_covariate_cell_is_error() {
        let map = ColumnMapping::new("y", "v").with_covariates(["x"]);
        let err = parse("y,v,x\n0.5,0.04,1\n0.1,0.2,\n", &map).unwrap_err();
        assert!(matches!(err, Error::Validation { row: 2, .. }), "{err}");
    }

    #[test]
    fn ragged_covariates_rejected() {
        let recs = vec![
            EffectRecord { y: 0.0, v: 1.0, x: vec![1.0], cluster: None },
            EffectRecord { y: 0.0, v: 1.0, x: vec![], cluster: None },
        ];
        assert!(matches!(Dataset::new(recs), Err(Error::Validation { row: 2, .. })));
    }

    #[test]
    fn too_few_records_cannot_be_fit() {
        let ds = Dataset::from_effects(&[0.0, 1.0], &[1.0, 1.0]).unwrap();
        assert!(ds.require_fittable().is_err());
    }

    fn arb_dataset() -> impl Strategy<Value = Dataset> {
        (1usize..30, 0usize..3, any::<bool>()).prop_flat_map(|(n, p, clustered)| {
            let rec = (
                -1e3f64..1e3,
                1e-6f64..1e2,
                prop::collection::vec(-1e3f64..1e3, p),
                prop::option::of("[a-c]{1,2}"),
            );
            prop::collection::vec(rec, n).prop_map(move |rows| {
                let records = rows
                    .into_iter()
                    .map(|(y, v, x, c)| EffectRecord {
                        y,
                        v,
                        x,
                        cluster: clustered.then(|| c.unwrap_or_else(|| "z".into())),
                    })
                    .collect();
                let names = (0..p).map(|j| format!("x{j}")).collect();
                Dataset::with_names(records, names).unwrap()
            })
        })
    }

    proptest! {
        #[test]
        fn csv_round_trip(ds in arb_dataset()) {
            let mut map = ColumnMapping::new("y", "v").with_covariates(ds.covariate_names().to_vec());
            if ds.has_clusters() {
                map = map.with_cluster("cluster");
            }
            let mut buf = Vec::new();
            ds.write_csv(&mut buf, &map).unwrap();
            let back = Dataset::read_csv(buf.as_slice(), &map).unwrap();
            prop_assert_eq!(back, ds);
        }

        #[test]
        fn cluster_partition_covers_all(ds in arb_dataset()) {
            let parts = ds.cluster_index();
            prop_assert_eq!(parts.len(), ds.m());
            let mut all: Vec<usize> = parts.concat();
            prop_assert_eq!(all.len(), ds.n());
            all.sort_unstable();
            all.dedup();
            prop_assert_eq!(all.len(), ds.n());
        }
    }
}
