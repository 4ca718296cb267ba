//! Datasets: schemas, preprocessing, feature-group partitions and the two
//! synthetic benchmarks (heterogeneous tabular data and 16×16 sprites).

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::math;
use crate::rng::SeededRng;
use crate::tensor::Matrix;

/// Feature-group partition of the input features.
///
/// Every feature index belongs to exactly one non-empty group.
#[derive(Debug, Clone, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Partition {
    pub names: Vec<String>,
    pub groups: Vec<Vec<usize>>,
}

impl Partition {
    pub fn new(names: Vec<String>, groups: Vec<Vec<usize>>) -> Result<Self> {
        let p = Self { names, groups };
        p.validate()?;
        Ok(p)
    }

    /// One group per feature.
    pub fn singletons(n_features: usize) -> Self {
        Self {
            names: (0..n_features).map(|i| format!("f{i}")).collect(),
            groups: (0..n_features).map(|i| vec![i]).collect(),
        }
    }

    pub fn group_count(&self) -> usize {
        self.groups.len()
    }

    pub fn feature_count(&self) -> usize {
        self.groups.iter().map(Vec::len).sum()
    }

    pub fn sizes(&self) -> Vec<usize> {
        self.groups.iter().map(Vec::len).collect()
    }

    /// Disjoint, covering `0..feature_count`, no empty group.
    pub fn validate(&self) -> Result<()> {
        if self.names.len() != self.groups.len() {
            return Err(Error::Config("partition names and groups differ in length".into()));
        }
        if self.groups.is_empty() {
            return Err(Error::Config("partition has no groups".into()));
        }
        let n = self.feature_count();
        let mut seen = vec![false; n];
        for (g, members) in self.groups.iter().enumerate() {
            if members.is_empty() {
                return Err(Error::Config(format!("group {} is empty", self.names[g])));
            }
            for &f in members {
                if f >= n || seen[f] {
                    return Err(Error::Config(format!(
                        "feature {f} is out of range or assigned twice"
                    )));
                }
                seen[f] = true;
            }
        }
        Ok(())
    }

    /// Group index of every feature.
    pub fn assignment(&self) -> Vec<usize> {
        let mut out = vec![0; self.feature_count()];
        for (g, members) in self.groups.iter().enumerate() {
            for &f in members {
                out[f] = g;
            }
        }
        out
    }
}

/// Reassigns features to groups uniformly at random, keeping group sizes.
pub fn random_partition(partition: &Partition, rng: &mut SeededRng) -> Partition {
    let mut features: Vec<usize> = partition.groups.iter().flatten().copied().collect();
    features.sort_unstable();
    rng.shuffle(&mut features);
    let mut groups = Vec::with_capacity(partition.groups.len());
    let mut offset = 0;
    for members in &partition.groups {
        let mut g = features[offset..offset + members.len()].to_vec();
        g.sort_unstable();
        groups.push(g);
        offset += members.len();
    }
    Partition {
        names: partition.names.clone(),
        groups,
    }
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum ColumnKind {
    Continuous,
    Categorical,
    Label,
    Protected,
}

/// How a label or protected column is turned into a binary value.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum BinaryRule {
    /// Positive when the text equals this value (after trimming).
    Equals(String),
    /// Positive when the numeric value is at least this threshold.
    AtLeast(f64),
}

impl BinaryRule {
    fn apply(&self, cell: &Cell) -> Option<bool> {
        match (self, cell) {
            (_, Cell::Missing) => None,
            (BinaryRule::Equals(v), Cell::Text(t)) => Some(t.trim() == v.trim()),
            (BinaryRule::Equals(v), Cell::Num(x)) => {
                v.trim().parse::<f64>().ok().map(|p| p == *x)
            }
            (BinaryRule::AtLeast(th), Cell::Num(x)) => Some(*x >= *th),
            (BinaryRule::AtLeast(th), Cell::Text(t)) => {
                t.trim().parse::<f64>().ok().map(|x| x >= *th)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ColumnSpec {
    pub name: String,
    pub kind: ColumnKind,
    /// Required for continuous and categorical columns.
    pub group: Option<String>,
    /// Required for label and protected columns.
    pub positive: Option<BinaryRule>,
}

/// Column descriptors of a tabular dataset. Columns not listed are ignored.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct DatasetSchema {
    pub columns: Vec<ColumnSpec>,
}

impl DatasetSchema {
    pub fn validate(&self) -> Result<()> {
        let mut labels = 0;
        let mut protected = 0;
        let mut features = 0;
        for c in &self.columns {
            match c.kind {
                ColumnKind::Continuous | ColumnKind::Categorical => {
                    features += 1;
                    if c.group.as_deref().map_or(true, str::is_empty) {
                        return Err(Error::Config(format!("feature column {} has no group", c.name)));
                    }
                }
                ColumnKind::Label | ColumnKind::Protected => {
                    if c.kind == ColumnKind::Label {
                        labels += 1;
                    } else {
                        protected += 1;
                    }
                    if c.positive.is_none() {
                        return Err(Error::Config(format!(
                            "column {} needs a positive-class rule",
                            c.name
                        )));
                    }
                }
            }
        }
        if features == 0 {
            return Err(Error::Config("schema declares no feature columns".into()));
        }
        if labels > 1 || protected > 1 {
            return Err(Error::Config("at most one label and one protected column".into()));
        }
        Ok(())
    }
}

/// One parsed table cell.
#[derive(Debug, Clone, PartialEq)]
pub enum Cell {
    Num(f64),
    Text(String),
    Missing,
}

impl Cell {
    /// Interprets raw CSV text; empty, `?`, `NA` and `NaN` are missing.
    pub fn parse(raw: &str, numeric: bool) -> Cell {
        let t = raw.trim();
        if t.is_empty() || t == "?" || t.eq_ignore_ascii_case("na") || t.eq_ignore_ascii_case("nan") {
            return Cell::Missing;
        }
        if numeric {
            match t.parse::<f64>() {
                Ok(v) if v.is_finite() => Cell::Num(v),
                _ => Cell::Missing,
            }
        } else {
            Cell::Text(t.to_string())
        }
    }

    fn category_key(&self) -> Option<String> {
        match self {
            Cell::Text(t) => Some(t.clone()),
            Cell::Num(v) => Some(format!("{v}")),
            Cell::Missing => None,
        }
    }
}

/// Rows of cells, one entry per schema column (in schema order).
#[derive(Debug, Clone, PartialEq, Default)]
pub struct RawTable {
    pub rows: Vec<Vec<Cell>>,
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
enum ColumnTransform {
    Standardize { mean: f64, std: f64 },
    OneHot { levels: Vec<String> },
    Dropped,
    Skip,
}

/// Fitted column transforms: z-scoring for continuous columns, one-hot blocks
/// for categorical ones.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Preprocessor {
    schema: DatasetSchema,
    transforms: Vec<ColumnTransform>,
}

/// Output of [`Preprocessor::apply`].
#[derive(Debug, Clone, PartialEq)]
pub struct Encoded {
    pub x: Matrix,
    pub unknown_categories: usize,
}

impl Preprocessor {
    /// Fits on complete rows of the training table.
    pub fn fit(schema: &DatasetSchema, table: &RawTable) -> Result<(Self, Vec<String>)> {
        schema.validate()?;
        if table.rows.is_empty() {
            return Err(Error::Config("cannot fit preprocessing on an empty table".into()));
        }
        let mut warnings = Vec::new();
        let mut transforms = Vec::with_capacity(schema.columns.len());
        for (c, spec) in schema.columns.iter().enumerate() {
            let t = match spec.kind {
                ColumnKind::Continuous => {
                    let values: Vec<f64> = table
                        .rows
                        .iter()
                        .filter_map(|r| match r[c] {
                            Cell::Num(v) => Some(v),
                            _ => None,
                        })
                        .collect();
                    if values.len() != table.rows.len() {
                        return Err(Error::Config(format!(
                            "continuous column {} has non-numeric cells",
                            spec.name
                        )));
                    }
                    let mean = math::mean(&values);
                    let std = math::population_std(&values);
                    if std > 0.0 {
                        ColumnTransform::Standardize { mean, std }
                    } else {
                        warnings.push(format!("dropped zero-variance column {}", spec.name));
                        ColumnTransform::Dropped
                    }
                }
                ColumnKind::Categorical => {
                    let mut levels: Vec<String> =
                        table.rows.iter().filter_map(|r| r[c].category_key()).collect();
                    levels.sort();
                    levels.dedup();
                    if levels.len() < 2 {
                        warnings.push(format!("dropped single-level column {}", spec.name));
                        ColumnTransform::Dropped
                    } else {
                        ColumnTransform::OneHot { levels }
                    }
                }
                ColumnKind::Label | ColumnKind::Protected => ColumnTransform::Skip,
            };
            transforms.push(t);
        }
        if transforms
            .iter()
            .all(|t| matches!(t, ColumnTransform::Dropped | ColumnTransform::Skip))
        {
            return Err(Error::Config("every feature column was dropped".into()));
        }
        Ok((
            Self {
                schema: schema.clone(),
                transforms,
            },
            warnings,
        ))
    }

    pub fn schema(&self) -> &DatasetSchema {
        &self.schema
    }

    /// Post-encoding feature names.
    pub fn feature_names(&self) -> Vec<String> {
        let mut names = Vec::new();
        for (spec, t) in self.schema.columns.iter().zip(&self.transforms) {
            match t {
                ColumnTransform::Standardize { .. } => names.push(spec.name.clone()),
                ColumnTransform::OneHot { levels } => {
                    names.extend(levels.iter().map(|l| format!("{}={}", spec.name, l)))
                }
                _ => {}
            }
        }
        names
    }

    /// Post-encoding feature index ranges grouped by schema group, in order of
    /// first appearance. A one-hot block inherits its column's group.
    pub fn partition(&self) -> Partition {
        let mut names: Vec<String> = Vec::new();
        let mut groups: Vec<Vec<usize>> = Vec::new();
        let mut next = 0usize;
        for (spec, t) in self.schema.columns.iter().zip(&self.transforms) {
            let width = match t {
                ColumnTransform::Standardize { .. } => 1,
                ColumnTransform::OneHot { levels } => levels.len(),
                _ => continue,
            };
            let group = spec.group.clone().unwrap_or_default();
            let g = match names.iter().position(|n| *n == group) {
                Some(g) => g,
                None => {
                    names.push(group);
                    groups.push(Vec::new());
                    names.len() - 1
                }
            };
            groups[g].extend(next..next + width);
            next += width;
        }
        Partition { names, groups }
    }

    /// Perturbation scale per encoded feature: the standardised column's
    /// standard deviation for continuous features, 1 for one-hot indicators.
    fn sigma(&self, x: &Matrix) -> Vec<f64> {
        let stds = x.col_stds();
        let mut out = Vec::with_capacity(x.cols());
        let mut j = 0;
        for t in &self.transforms {
            match t {
                ColumnTransform::Standardize { .. } => {
                    out.push(stds[j]);
                    j += 1;
                }
                ColumnTransform::OneHot { levels } => {
                    out.extend(core::iter::repeat(1.0).take(levels.len()));
                    j += levels.len();
                }
                _ => {}
            }
        }
        out
    }

    pub fn output_width(&self) -> usize {
        self.transforms
            .iter()
            .map(|t| match t {
                ColumnTransform::Standardize { .. } => 1,
                ColumnTransform::OneHot { levels } => levels.len(),
                _ => 0,
            })
            .sum()
    }

    /// Encodes complete rows. Unseen categories become an all-zero block.
    pub fn apply(&self, table: &RawTable) -> Result<Encoded> {
        let width = self.output_width();
        let mut x = Matrix::zeros(table.rows.len(), width);
        let mut unknown = 0usize;
        for (r, row) in table.rows.iter().enumerate() {
            if row.len() != self.transforms.len() {
                return Err(Error::Dimension {
                    context: "raw row width",
                    expected: self.transforms.len(),
                    actual: row.len(),
                });
            }
            let out = x.row_mut(r);
            let mut j = 0;
            for (cell, t) in row.iter().zip(&self.transforms) {
                match t {
                    ColumnTransform::Standardize { mean, std } => {
                        let v = match cell {
                            Cell::Num(v) => *v,
                            _ => return Err(Error::Config("missing continuous value".into())),
                        };
                        out[j] = (v - mean) / std;
                        j += 1;
                    }
                    ColumnTransform::OneHot { levels } => {
                        match cell.category_key().and_then(|k| levels.binary_search(&k).ok()) {
                            Some(pos) => out[j + pos] = 1.0,
                            None => unknown += 1,
                        }
                        j += levels.len();
                    }
                    _ => {}
                }
            }
        }
        Ok(Encoded {
            x,
            unknown_categories: unknown,
        })
    }
}

/// Broad data modality, used when pooling results.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum Domain {
    Tabular,
    Image,
}

impl Domain {
    pub fn name(self) -> &'static str {
        match self {
            Domain::Tabular => "tabular",
            Domain::Image => "image",
        }
    }
}

/// A preprocessed dataset with its feature-group partition.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetBundle {
    pub name: String,
    pub domain: Domain,
    pub x: Matrix,
    pub feature_names: Vec<String>,
    pub labels: Option<Vec<bool>>,
    pub protected: Option<Vec<bool>>,
    /// Perturbation scale per feature.
    pub sigma: Vec<f64>,
    pub partition: Partition,
    /// Ground-truth generative factors, when known.
    pub factors: Option<Matrix>,
    pub factor_names: Vec<String>,
    pub preprocessor: Option<Preprocessor>,
    pub warnings: Vec<String>,
    /// Free-form description of source and preprocessing.
    pub provenance: String,
}

impl DatasetBundle {
    pub fn n_rows(&self) -> usize {
        self.x.rows()
    }

    pub fn n_features(&self) -> usize {
        self.x.cols()
    }

    pub fn group_count(&self) -> usize {
        self.partition.group_count()
    }

    pub fn validate(&self) -> Result<()> {
        self.partition.validate()?;
        let n = self.x.cols();
        if self.partition.feature_count() != n {
            return Err(Error::Dimension {
                context: "partition coverage",
                expected: n,
                actual: self.partition.feature_count(),
            });
        }
        if self.sigma.len() != n {
            return Err(Error::Dimension {
                context: "sigma length",
                expected: n,
                actual: self.sigma.len(),
            });
        }
        if self.sigma.iter().any(|s| !(*s > 0.0)) {
            return Err(Error::Config("sigma must be positive for every feature".into()));
        }
        for (name, v) in [("labels", &self.labels), ("protected", &self.protected)] {
            if let Some(v) = v {
                if v.len() != self.x.rows() {
                    return Err(Error::Config(format!("{name} length differs from row count")));
                }
            }
        }
        if let Some(f) = &self.factors {
            if f.rows() != self.x.rows() {
                return Err(Error::Config("factor rows differ from row count".into()));
            }
        }
        if !self.x.is_finite() {
            return Err(Error::NonFinite("feature matrix".into()));
        }
        Ok(())
    }

    /// Same data under another partition.
    pub fn with_partition(&self, partition: Partition) -> Result<Self> {
        let mut b = self.clone();
        b.partition = partition;
        b.validate()?;
        Ok(b)
    }

    /// Factors for MIG: ground truth when known, otherwise each group's mean
    /// standardised feature.
    pub fn factor_proxies(&self) -> Matrix {
        if let Some(f) = &self.factors {
            return f.clone();
        }
        let stds = self.x.col_stds();
        let means = self.x.col_means();
        let g = self.group_count();
        let mut out = Matrix::zeros(self.x.rows(), g);
        for r in 0..self.x.rows() {
            let row = self.x.row(r);
            for (k, members) in self.partition.groups.iter().enumerate() {
                let s: f64 = members
                    .iter()
                    .map(|&j| if stds[j] > 0.0 { (row[j] - means[j]) / stds[j] } else { 0.0 })
                    .sum();
                out.set(r, k, s / members.len() as f64);
            }
        }
        out
    }

    pub fn subset_rows(&self, rows: &[usize]) -> Self {
        let mut b = self.clone();
        b.x = self.x.select_rows(rows);
        b.labels = self.labels.as_ref().map(|l| rows.iter().map(|&i| l[i]).collect());
        b.protected = self.protected.as_ref().map(|l| rows.iter().map(|&i| l[i]).collect());
        b.factors = self.factors.as_ref().map(|f| f.select_rows(rows));
        b
    }
}

/// Builds a bundle from a raw table: rows with missing values are dropped,
/// then transforms are fitted on the remaining rows.
pub fn bundle_from_table(
    name: &str,
    schema: &DatasetSchema,
    table: &RawTable,
    provenance: &str,
) -> Result<DatasetBundle> {
    schema.validate()?;
    let mut complete = RawTable::default();
    let mut dropped = 0usize;
    for row in &table.rows {
        if row.len() != schema.columns.len() {
            return Err(Error::Dimension {
                context: "raw row width",
                expected: schema.columns.len(),
                actual: row.len(),
            });
        }
        let missing = row.iter().zip(&schema.columns).any(|(c, spec)| match c {
            Cell::Missing => true,
            Cell::Text(_) => spec.kind == ColumnKind::Continuous,
            Cell::Num(_) => false,
        });
        if missing {
            dropped += 1;
        } else {
            complete.rows.push(row.clone());
        }
    }
    let (pre, mut warnings) = Preprocessor::fit(schema, &complete)?;
    if dropped > 0 {
        let msg = format!("dropped {dropped} rows with missing values");
        log::warn!("{name}: {msg}");
        warnings.push(msg);
    }
    let encoded = pre.apply(&complete)?;
    let binary = |kind: ColumnKind| -> Result<Option<Vec<bool>>> {
        let Some(c) = schema.columns.iter().position(|s| s.kind == kind) else {
            return Ok(None);
        };
        let rule = schema.columns[c].positive.as_ref().expect("validated");
        let mut out = Vec::with_capacity(complete.rows.len());
        for row in &complete.rows {
            out.push(rule.apply(&row[c]).ok_or_else(|| {
                Error::Config(format!("cannot binarise column {}", schema.columns[c].name))
            })?);
        }
        Ok(Some(out))
    };
    let labels = binary(ColumnKind::Label)?;
    let protected = binary(ColumnKind::Protected)?;
    for w in &warnings {
        log::warn!("{name}: {w}");
    }
    let bundle = DatasetBundle {
        name: name.to_string(),
        domain: Domain::Tabular,
        sigma: pre.sigma(&encoded.x),
        x: encoded.x,
        feature_names: pre.feature_names(),
        labels,
        protected,
        partition: pre.partition(),
        factors: None,
        factor_names: Vec::new(),
        preprocessor: Some(pre),
        warnings,
        provenance: provenance.to_string(),
    };
    bundle.validate()?;
    Ok(bundle)
}

/// One planted factor of the synthetic tabular generator and its features.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct SynthGroup {
    pub name: String,
    pub n_continuous: usize,
    pub n_categorical: usize,
    /// Correlation of each feature's signal with the group factor, in (0, 1].
    pub loading: f64,
}

/// Heterogeneous tabular data with planted feature groups.
///
/// Each group has one standard-normal factor; its features are noisy,
/// mildly nonlinear functions of that factor. With `heterogeneous` set,
/// continuous features get raw scales spanning two orders of magnitude and
/// `n_categorical` columns are three-level discretisations.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default))]
pub struct TabularSynthSpec {
    pub n_rows: usize,
    pub groups: Vec<SynthGroup>,
    pub heterogeneous: bool,
    /// Multiplier on the idiosyncratic noise; 0 gives noiseless features.
    pub noise: f64,
    /// Label logit is `sharpness * sum_k w_k f_k` over these (factor, weight) pairs.
    pub label_factors: Vec<(usize, f64)>,
    pub label_sharpness: f64,
    /// Protected attribute is `1[f_k + 0.5 e > 0]` for this factor.
    pub protected_factor: usize,
}

impl Default for TabularSynthSpec {
    fn default() -> Self {
        Self {
            n_rows: 2000,
            groups: vec![
                SynthGroup {
                    name: "financial".into(),
                    n_continuous: 5,
                    n_categorical: 0,
                    loading: 0.9,
                },
                SynthGroup {
                    name: "demographics".into(),
                    n_continuous: 3,
                    n_categorical: 2,
                    loading: 0.55,
                },
                SynthGroup {
                    name: "employment".into(),
                    n_continuous: 4,
                    n_categorical: 0,
                    loading: 0.55,
                },
            ],
            heterogeneous: true,
            noise: 1.0,
            label_factors: vec![(0, 1.0), (1, 0.5)],
            label_sharpness: 4.0,
            protected_factor: 2,
        }
    }
}

/// Raw synthetic table plus its schema and ground truth.
#[derive(Debug, Clone)]
pub struct SynthTable {
    pub schema: DatasetSchema,
    pub table: RawTable,
    pub factors: Matrix,
    /// Raw (pre-standardisation) variance of every continuous column.
    pub raw_variances: Vec<f64>,
}

/// Generates the raw synthetic table without preprocessing.
pub fn synth_tabular_raw(spec: &TabularSynthSpec, rng: &mut SeededRng) -> Result<SynthTable> {
    if spec.groups.is_empty() || spec.n_rows < 2 {
        return Err(Error::Config("synthetic spec needs groups and at least 2 rows".into()));
    }
    let n_groups = spec.groups.len();
    for &(k, _) in &spec.label_factors {
        if k >= n_groups {
            return Err(Error::Config(format!("label factor {k} out of range")));
        }
    }
    if spec.protected_factor >= n_groups {
        return Err(Error::Config("protected factor out of range".into()));
    }
    let mut columns = Vec::new();
    // (group, is_categorical, scale, offset, curvature)
    let mut plan: Vec<(usize, bool, f64, f64, f64)> = Vec::new();
    let n_cont_total: usize = spec.groups.iter().map(|g| g.n_continuous).sum();
    let mut cont_idx = 0usize;
    for (g, group) in spec.groups.iter().enumerate() {
        if !(group.loading > 0.0 && group.loading <= 1.0) {
            return Err(Error::Config(format!("loading of group {} must be in (0, 1]", group.name)));
        }
        for j in 0..group.n_continuous {
            // Geometric spread of raw scales from 0.3 to 30 across all continuous columns.
            let (scale, offset) = if spec.heterogeneous {
                let t = if n_cont_total > 1 {
                    cont_idx as f64 / (n_cont_total - 1) as f64
                } else {
                    0.0
                };
                (0.3 * math::powf(100.0, t), 10.0 * rng.uniform())
            } else {
                (1.0, 0.0)
            };
            let curvature = if spec.heterogeneous { 0.25 * rng.uniform() } else { 0.0 };
            cont_idx += 1;
            columns.push(ColumnSpec {
                name: format!("{}_x{j}", group.name),
                kind: ColumnKind::Continuous,
                group: Some(group.name.clone()),
                positive: None,
            });
            plan.push((g, false, scale, offset, curvature));
        }
        for j in 0..group.n_categorical {
            columns.push(ColumnSpec {
                name: format!("{}_c{j}", group.name),
                kind: ColumnKind::Categorical,
                group: Some(group.name.clone()),
                positive: None,
            });
            plan.push((g, true, 1.0, 0.0, 0.0));
        }
    }
    columns.push(ColumnSpec {
        name: "label".into(),
        kind: ColumnKind::Label,
        group: None,
        positive: Some(BinaryRule::Equals("1".into())),
    });
    columns.push(ColumnSpec {
        name: "protected".into(),
        kind: ColumnKind::Protected,
        group: None,
        positive: Some(BinaryRule::Equals("1".into())),
    });

    let mut factors = Matrix::zeros(spec.n_rows, n_groups);
    let mut table = RawTable::default();
    // Three roughly equiprobable levels of a standard normal.
    let cut = 0.430_727_3;
    for r in 0..spec.n_rows {
        for g in 0..n_groups {
            factors.set(r, g, rng.standard_normal());
        }
        let f = factors.row(r).to_vec();
        let mut row = Vec::with_capacity(columns.len());
        for &(g, categorical, scale, offset, curvature) in &plan {
            let a = spec.groups[g].loading;
            let noise_sd = math::sqrt((1.0 - a * a).max(0.0)) * spec.noise;
            let signal = a * (f[g] + curvature * (f[g] * f[g] - 1.0));
            let v = signal + noise_sd * rng.standard_normal();
            if categorical {
                let level = if v < -cut { "low" } else if v < cut { "mid" } else { "high" };
                row.push(Cell::Text(level.into()));
            } else {
                row.push(Cell::Num(offset + scale * v));
            }
        }
        let logit: f64 = spec.label_sharpness
            * spec.label_factors.iter().map(|&(k, w)| w * f[k]).sum::<f64>();
        let y = rng.uniform() < math::sigmoid(logit);
        let a = f[spec.protected_factor] + 0.5 * rng.standard_normal() > 0.0;
        row.push(Cell::Text(if y { "1".into() } else { "0".into() }));
        row.push(Cell::Text(if a { "1".into() } else { "0".into() }));
        table.rows.push(row);
    }
    let raw_variances = (0..columns.len())
        .filter(|&c| columns[c].kind == ColumnKind::Continuous)
        .map(|c| {
            let v: Vec<f64> = table
                .rows
                .iter()
                .map(|row| match row[c] {
                    Cell::Num(x) => x,
                    _ => 0.0,
                })
                .collect();
            let s = math::population_std(&v);
            s * s
        })
        .collect();
    Ok(SynthTable {
        schema: DatasetSchema { columns },
        table,
        factors,
        raw_variances,
    })
}

/// Synthetic heterogeneous tabular bundle with ground-truth factors retained.
pub fn synth_tabular(name: &str, spec: &TabularSynthSpec, rng: &mut SeededRng) -> Result<DatasetBundle> {
    let raw = synth_tabular_raw(spec, rng)?;
    let mut bundle = bundle_from_table(name, &raw.schema, &raw.table, "synthetic tabular")?;
    bundle.factors = Some(raw.factors);
    bundle.factor_names = spec.groups.iter().map(|g| g.name.clone()).collect();
    bundle.validate()?;
    Ok(bundle)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum SpriteShape {
    Square,
    Ellipse,
    Heart,
}

impl SpriteShape {
    pub const ALL: [SpriteShape; 3] = [SpriteShape::Square, SpriteShape::Ellipse, SpriteShape::Heart];

    /// Whether normalised coordinates `(u, v)` (v pointing up) fall inside.
    fn contains(self, u: f64, v: f64) -> bool {
        match self {
            SpriteShape::Square => u.abs() <= 1.0 && v.abs() <= 1.0,
            SpriteShape::Ellipse => u * u + (v / 0.6) * (v / 0.6) <= 1.0,
            SpriteShape::Heart => {
                // Implicit heart curve, scaled to the unit box.
                let (x, y) = (1.2 * u, 1.2 * v + 0.15);
                let a = x * x + y * y - 1.0;
                a * a * a - x * x * y * y * y <= 0.0
            }
        }
    }
}

/// Miniature sprite benchmark with four independent factors.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default))]
pub struct MiniSpritesSpec {
    pub side: usize,
    pub scale_levels: usize,
    pub pos_levels: usize,
    pub min_half_size: f64,
    pub max_half_size: f64,
    /// `None` enumerates every factor combination once.
    pub samples: Option<usize>,
    pub scaling: PixelScaling,
}

/// How sprite pixels are scaled after constant pixels are dropped.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum PixelScaling {
    /// Binary pixels as rendered.
    Raw,
    /// Z-score every pixel, as continuous tabular columns are.
    PerPixel,
    /// One mean and standard deviation pooled over all pixels.
    #[default]
    Global,
}

impl Default for MiniSpritesSpec {
    fn default() -> Self {
        Self {
            side: 16,
            scale_levels: 4,
            pos_levels: 8,
            min_half_size: 2.0,
            max_half_size: 4.0,
            samples: None,
            scaling: PixelScaling::Global,
        }
    }
}

impl MiniSpritesSpec {
    pub fn factor_cardinalities(&self) -> [usize; 4] {
        [SpriteShape::ALL.len(), self.scale_levels, self.pos_levels, self.pos_levels]
    }

    fn validate(&self) -> Result<()> {
        if self.side < 4 || self.scale_levels == 0 || self.pos_levels == 0 {
            return Err(Error::Config("sprite side >= 4 and positive level counts required".into()));
        }
        if !(self.min_half_size > 0.0 && self.max_half_size >= self.min_half_size) {
            return Err(Error::Config("sprite half sizes must be positive and ordered".into()));
        }
        if 2.0 * self.max_half_size >= self.side as f64 {
            return Err(Error::Config("largest sprite does not fit the image".into()));
        }
        Ok(())
    }

    fn half_size(&self, level: usize) -> f64 {
        if self.scale_levels == 1 {
            return self.max_half_size;
        }
        self.min_half_size
            + (self.max_half_size - self.min_half_size) * level as f64 / (self.scale_levels - 1) as f64
    }

    fn center(&self, level: usize) -> f64 {
        let lo = self.max_half_size - 0.5;
        let hi = self.side as f64 - 0.5 - self.max_half_size;
        if self.pos_levels == 1 {
            return (lo + hi) / 2.0;
        }
        lo + (hi - lo) * level as f64 / (self.pos_levels - 1) as f64
    }

    /// Binary image (row-major, row 0 at the top) for one factor combination.
    pub fn render(&self, shape: SpriteShape, scale: usize, pos_x: usize, pos_y: usize) -> Vec<f64> {
        let r = self.half_size(scale);
        let (cx, cy) = (self.center(pos_x), self.center(pos_y));
        let mut img = vec![0.0; self.side * self.side];
        for i in 0..self.side {
            for j in 0..self.side {
                let u = (j as f64 - cx) / r;
                let v = (cy - i as f64) / r;
                if shape.contains(u, v) {
                    img[i * self.side + j] = 1.0;
                }
            }
        }
        img
    }
}

pub const SPRITE_FACTORS: [&str; 4] = ["shape", "scale", "pos_x", "pos_y"];

/// Raw sprite pixels and their factor values, before constant pixels are dropped.
pub fn minisprite_pixels(spec: &MiniSpritesSpec, rng: &mut SeededRng) -> Result<(Matrix, Matrix)> {
    spec.validate()?;
    let [ns, nc, np, _] = spec.factor_cardinalities();
    let combos: Vec<[usize; 4]> = match spec.samples {
        None => {
            let mut v = Vec::with_capacity(ns * nc * np * np);
            for s in 0..ns {
                for c in 0..nc {
                    for x in 0..np {
                        for y in 0..np {
                            v.push([s, c, x, y]);
                        }
                    }
                }
            }
            v
        }
        Some(n) => (0..n)
            .map(|_| [rng.below(ns), rng.below(nc), rng.below(np), rng.below(np)])
            .collect(),
    };
    let npix = spec.side * spec.side;
    let mut pixels = Matrix::zeros(combos.len(), npix);
    let mut factors = Matrix::zeros(combos.len(), 4);
    for (r, c) in combos.iter().enumerate() {
        let img = spec.render(SpriteShape::ALL[c[0]], c[1], c[2], c[3]);
        pixels.row_mut(r).copy_from_slice(&img);
        for k in 0..4 {
            factors.set(r, k, c[k] as f64);
        }
    }
    Ok((pixels, factors))
}

/// Sprite bundle: constant pixels dropped, the rest scaled per
/// [`PixelScaling`], groups from factor-pixel sensitivity on the binary
/// pixels. Label: large sprite (upper half of scale
/// levels); protected attribute: sprite in the left half.
pub fn gen_minisprites(name: &str, spec: &MiniSpritesSpec, rng: &mut SeededRng) -> Result<DatasetBundle> {
    let (pixels, factors) = minisprite_pixels(spec, rng)?;
    let stds = pixels.col_stds();
    let keep: Vec<usize> = (0..pixels.cols()).filter(|&j| stds[j] > 0.0).collect();
    let mut warnings = Vec::new();
    let dropped = pixels.cols() - keep.len();
    if dropped > 0 {
        warnings.push(format!("dropped {dropped} constant pixels"));
    }
    let binary = pixels.select_cols(&keep);
    let names: Vec<String> = SPRITE_FACTORS.iter().map(|s| s.to_string()).collect();
    let partition = factor_pixel_grouping(&binary, &factors, &names)?;
    let (x, sigma) = match spec.scaling {
        PixelScaling::Raw => {
            let sigma = keep.iter().map(|&j| stds[j]).collect();
            (binary, sigma)
        }
        PixelScaling::PerPixel => {
            let means = binary.col_means();
            let mut x = binary;
            for r in 0..x.rows() {
                for (j, v) in x.row_mut(r).iter_mut().enumerate() {
                    *v = (*v - means[j]) / stds[keep[j]];
                }
            }
            let sigma = x.col_stds();
            (x, sigma)
        }
        PixelScaling::Global => {
            let mean = math::mean(binary.data());
            let std = math::population_std(binary.data());
            let mut x = binary;
            for v in x.data_mut() {
                *v = (*v - mean) / std;
            }
            let sigma = x.col_stds();
            (x, sigma)
        }
    };
    let labels = (0..x.rows())
        .map(|r| factors.get(r, 1) >= (spec.scale_levels as f64) / 2.0)
        .collect();
    let protected = (0..x.rows())
        .map(|r| factors.get(r, 2) < (spec.pos_levels as f64) / 2.0)
        .collect();
    let feature_names = keep
        .iter()
        .map(|&j| format!("px_{}_{}", j / spec.side, j % spec.side))
        .collect();
    let bundle = DatasetBundle {
        name: name.to_string(),
        domain: Domain::Image,
        sigma,
        x,
        feature_names,
        labels: Some(labels),
        protected: Some(protected),
        partition,
        factors: Some(factors),
        factor_names: names,
        preprocessor: None,
        warnings,
        provenance: format!(
            "minisprites side={} scales={} positions={} half_size={}..{} samples={:?} scaling={:?}",
            spec.side,
            spec.scale_levels,
            spec.pos_levels,
            spec.min_half_size,
            spec.max_half_size,
            spec.samples,
            spec.scaling
        ),
    };
    bundle.validate()?;
    Ok(bundle)
}

/// Name of the group collecting pixels no factor moves.
pub const BACKGROUND_GROUP: &str = "background";

/// Per-factor sensitivity of every pixel: the variance, across the factor's
/// levels, of the pixel's mean value at that level (other factors marginalised).
pub fn factor_pixel_sensitivity(pixels: &Matrix, factors: &Matrix) -> Result<Matrix> {
    if pixels.rows() != factors.rows() {
        return Err(Error::Dimension {
            context: "factor rows",
            expected: pixels.rows(),
            actual: factors.rows(),
        });
    }
    let mut sens = Matrix::zeros(factors.cols(), pixels.cols());
    for k in 0..factors.cols() {
        // level value bits -> (count, per-pixel sums)
        let mut levels: BTreeMap<u64, (usize, Vec<f64>)> = BTreeMap::new();
        for r in 0..pixels.rows() {
            let entry = levels
                .entry(factors.get(r, k).to_bits())
                .or_insert_with(|| (0, vec![0.0; pixels.cols()]));
            entry.0 += 1;
            for (s, v) in entry.1.iter_mut().zip(pixels.row(r)) {
                *s += v;
            }
        }
        let n_levels = levels.len() as f64;
        for j in 0..pixels.cols() {
            let means: Vec<f64> = levels.values().map(|(c, s)| s[j] / *c as f64).collect();
            let m = means.iter().sum::<f64>() / n_levels;
            let var = means.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / n_levels;
            sens.set(k, j, var);
        }
    }
    Ok(sens)
}

/// Assigns each pixel to its most sensitive factor (ties to the lowest index).
/// Pixels with zero sensitivity to every factor form a background group.
/// Factors that win no pixel are left out.
pub fn factor_pixel_grouping(pixels: &Matrix, factors: &Matrix, factor_names: &[String]) -> Result<Partition> {
    if factor_names.len() != factors.cols() {
        return Err(Error::Dimension {
            context: "factor names",
            expected: factors.cols(),
            actual: factor_names.len(),
        });
    }
    let sens = factor_pixel_sensitivity(pixels, factors)?;
    let mut groups: Vec<Vec<usize>> = vec![Vec::new(); factors.cols() + 1];
    for j in 0..pixels.cols() {
        let mut best = None;
        let mut best_val = 1e-15;
        for k in 0..factors.cols() {
            if sens.get(k, j) > best_val {
                best_val = sens.get(k, j);
                best = Some(k);
            }
        }
        groups[best.unwrap_or(factors.cols())].push(j);
    }
    let mut names: Vec<String> = factor_names.to_vec();
    names.push(BACKGROUND_GROUP.to_string());
    let (names, groups): (Vec<String>, Vec<Vec<usize>>) = names
        .into_iter()
        .zip(groups)
        .filter(|(_, g)| !g.is_empty())
        .unzip();
    Partition::new(names, groups)
}
