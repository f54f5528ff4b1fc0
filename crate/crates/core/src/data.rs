//! Datasets with partially observed confounders, missing-indicator encoding
//! and construction of the three model design matrices.

use std::collections::BTreeSet;
use std::fmt;
use std::io::{Read, Write};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::check_full_rank;

/// Default constant substituted for missing numeric confounder values.
pub const DEFAULT_FILL: f64 = 0.0;

/// Label of the extra level given to missing categorical values.
pub const MISSING_LEVEL: &str = "missing";

#[derive(Debug, Clone, PartialEq)]
pub enum ColumnKind {
    Numeric,
    /// Values are level codes `0..levels.len()`; level 0 is the reference.
    Categorical { levels: Vec<String> },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Covariate {
    pub name: String,
    pub kind: ColumnKind,
    pub values: Vec<f64>,
}

impl Covariate {
    pub fn numeric(name: impl Into<String>, values: Vec<f64>) -> Self {
        Self {
            name: name.into(),
            kind: ColumnKind::Numeric,
            values,
        }
    }

    pub fn categorical(name: impl Into<String>, levels: Vec<String>, codes: Vec<f64>) -> Self {
        Self {
            name: name.into(),
            kind: ColumnKind::Categorical { levels },
            values: codes,
        }
    }
}

/// A confounder with a per-row observed flag. Values at unobserved rows are
/// never read.
#[derive(Debug, Clone, PartialEq)]
pub struct PartialCovariate {
    pub covariate: Covariate,
    pub observed: Vec<bool>,
}

impl PartialCovariate {
    pub fn new(covariate: Covariate, observed: Vec<bool>) -> Self {
        Self {
            covariate,
            observed,
        }
    }

    pub fn name(&self) -> &str {
        &self.covariate.name
    }

    pub fn missing_fraction(&self) -> f64 {
        let missing = self.observed.iter().filter(|&&o| !o).count();
        missing as f64 / self.observed.len().max(1) as f64
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub outcome_name: String,
    pub treatment_name: String,
    pub y: Vec<f64>,
    pub z: Vec<f64>,
    pub observed: Vec<Covariate>,
    pub partial: Vec<PartialCovariate>,
}

impl Dataset {
    /// Builds a dataset after checking row counts, binary treatment and the
    /// absence of missing outcome, treatment or fully observed values.
    pub fn new(
        y: Vec<f64>,
        z: Vec<f64>,
        observed: Vec<Covariate>,
        partial: Vec<PartialCovariate>,
    ) -> Result<Self> {
        let ds = Self {
            outcome_name: "y".into(),
            treatment_name: "z".into(),
            y,
            z,
            observed,
            partial,
        };
        ds.validate()?;
        Ok(ds)
    }

    pub fn with_names(mut self, outcome: impl Into<String>, treatment: impl Into<String>) -> Self {
        self.outcome_name = outcome.into();
        self.treatment_name = treatment.into();
        self
    }

    pub fn n(&self) -> usize {
        self.y.len()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.y.len();
        if n == 0 {
            return Err(Error::InvalidData("dataset has no rows".into()));
        }
        if self.z.len() != n {
            return Err(Error::InvalidData(format!(
                "treatment has {} rows, outcome has {n}",
                self.z.len()
            )));
        }
        if let Some(i) = self.y.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidData(format!("outcome missing or non-finite at row {i}")));
        }
        if let Some(i) = self.z.iter().position(|&v| v != 0.0 && v != 1.0) {
            return Err(Error::InvalidData(format!("treatment not in {{0,1}} at row {i}")));
        }
        let mut names = BTreeSet::new();
        for c in &self.observed {
            check_column(c, n)?;
            if let Some(i) = c.values.iter().position(|v| !v.is_finite()) {
                return Err(Error::InvalidData(format!(
                    "fully observed confounder `{}` missing at row {i}",
                    c.name
                )));
            }
            if !names.insert(c.name.clone()) {
                return Err(Error::InvalidData(format!("duplicate column `{}`", c.name)));
            }
        }
        for p in &self.partial {
            check_column(&p.covariate, n)?;
            if p.observed.len() != n {
                return Err(Error::InvalidData(format!(
                    "mask of `{}` has {} rows, expected {n}",
                    p.name(),
                    p.observed.len()
                )));
            }
            for (i, (&v, &o)) in p.covariate.values.iter().zip(&p.observed).enumerate() {
                if o && !v.is_finite() {
                    return Err(Error::InvalidData(format!(
                        "`{}` flagged observed but non-finite at row {i}",
                        p.name()
                    )));
                }
            }
            if !names.insert(p.name().to_string()) {
                return Err(Error::InvalidData(format!("duplicate column `{}`", p.name())));
            }
        }
        Ok(())
    }

    pub fn treated_fraction(&self) -> f64 {
        self.z.iter().sum::<f64>() / self.n() as f64
    }

    /// Copy with the outcome shifted by `k`.
    pub fn shift_outcome(&self, k: f64) -> Self {
        let mut out = self.clone();
        out.y.iter_mut().for_each(|v| *v += k);
        out
    }

    /// Copy keeping the given rows (repeats allowed), in order.
    pub fn select_rows(&self, rows: &[usize]) -> Self {
        let pick = |v: &[f64]| rows.iter().map(|&i| v[i]).collect::<Vec<_>>();
        Self {
            outcome_name: self.outcome_name.clone(),
            treatment_name: self.treatment_name.clone(),
            y: pick(&self.y),
            z: pick(&self.z),
            observed: self
                .observed
                .iter()
                .map(|c| Covariate {
                    values: pick(&c.values),
                    ..c.clone()
                })
                .collect(),
            partial: self
                .partial
                .iter()
                .map(|p| PartialCovariate {
                    covariate: Covariate {
                        values: pick(&p.covariate.values),
                        ..p.covariate.clone()
                    },
                    observed: rows.iter().map(|&i| p.observed[i]).collect(),
                })
                .collect(),
        }
    }
}

fn check_column(c: &Covariate, n: usize) -> Result<()> {
    if c.values.len() != n {
        return Err(Error::InvalidData(format!(
            "column `{}` has {} rows, expected {n}",
            c.name,
            c.values.len()
        )));
    }
    if let ColumnKind::Categorical { levels } = &c.kind {
        if levels.is_empty() {
            return Err(Error::InvalidData(format!("categorical `{}` has no levels", c.name)));
        }
        let bad = c
            .values
            .iter()
            .find(|v| v.is_finite() && (v.fract() != 0.0 || **v < 0.0 || **v >= levels.len() as f64));
        if let Some(v) = bad {
            return Err(Error::InvalidData(format!("categorical `{}` has invalid code {v}", c.name)));
        }
    }
    Ok(())
}

/// Name of the observed-indicator column generated for a numeric partially
/// observed confounder.
pub fn indicator_name(column: &str) -> String {
    format!("R_{column}")
}

/// Name of the dummy column for one level of a categorical confounder.
pub fn level_name(column: &str, level: &str) -> String {
    format!("{column}[{level}]")
}

/// Missing-indicator encoded covariates `H = (V, R)` as named columns.
#[derive(Debug, Clone, PartialEq)]
pub struct EncodedCovariates {
    pub n: usize,
    pub fill: f64,
    pub names: Vec<String>,
    pub columns: Vec<Vec<f64>>,
}

impl EncodedCovariates {
    pub fn column(&self, name: &str) -> Option<&[f64]> {
        self.names
            .iter()
            .position(|n| n == name)
            .map(|i| self.columns[i].as_slice())
    }

    fn push(&mut self, name: String, values: Vec<f64>) {
        self.names.push(name);
        self.columns.push(values);
    }
}

fn push_dummies(enc: &mut EncodedCovariates, name: &str, levels: &[String], codes: &[f64], mask: Option<&[bool]>) {
    for (l, level) in levels.iter().enumerate().skip(1) {
        let col = codes
            .iter()
            .enumerate()
            .map(|(i, &c)| {
                let obs = mask.is_none_or(|m| m[i]);
                if obs && c as usize == l {
                    1.0
                } else {
                    0.0
                }
            })
            .collect();
        enc.push(level_name(name, level), col);
    }
}

/// Replaces missing numeric values by `fill` and adds an indicator column
/// `R_<name>` (1 = observed). Categorical partially observed confounders get
/// an explicit `missing` level instead, and no separate indicator.
pub fn encode_missing_indicator(data: &Dataset, fill: f64) -> Result<EncodedCovariates> {
    data.validate()?;
    let n = data.n();
    let mut enc = EncodedCovariates {
        n,
        fill,
        names: Vec::new(),
        columns: Vec::new(),
    };
    for c in &data.observed {
        match &c.kind {
            ColumnKind::Numeric => enc.push(c.name.clone(), c.values.clone()),
            ColumnKind::Categorical { levels } => push_dummies(&mut enc, &c.name, levels, &c.values, None),
        }
    }
    for p in &data.partial {
        if !p.observed.iter().any(|&o| o) {
            return Err(Error::DegenerateColumn(p.name().to_string()));
        }
        let c = &p.covariate;
        match &c.kind {
            ColumnKind::Numeric => {
                let filled = c
                    .values
                    .iter()
                    .zip(&p.observed)
                    .map(|(&v, &o)| if o { v } else { fill })
                    .collect();
                let r = p.observed.iter().map(|&o| if o { 1.0 } else { 0.0 }).collect();
                enc.push(c.name.clone(), filled);
                enc.push(indicator_name(&c.name), r);
            }
            ColumnKind::Categorical { levels } => {
                push_dummies(&mut enc, &c.name, levels, &c.values, Some(&p.observed));
                let miss = p.observed.iter().map(|&o| if o { 0.0 } else { 1.0 }).collect();
                enc.push(level_name(&c.name, MISSING_LEVEL), miss);
            }
        }
    }
    Ok(enc)
}

/// One regressor: the intercept or an elementwise product of encoded columns.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Term {
    Intercept,
    Product(Vec<String>),
}

impl Term {
    pub fn column(name: impl Into<String>) -> Self {
        Term::Product(vec![name.into()])
    }

    pub fn interaction(a: impl Into<String>, b: impl Into<String>) -> Self {
        Term::Product(vec![a.into(), b.into()])
    }

    /// Parses `intercept`/`1`, a column name, or a product written with
    /// `*`, `·` or `:`.
    pub fn parse(s: &str) -> Result<Self> {
        let s = s.trim();
        if s.eq_ignore_ascii_case("intercept") || s == "1" {
            return Ok(Term::Intercept);
        }
        let factors: Vec<String> = s
            .split(['*', '·', ':'])
            .map(|f| f.trim().to_string())
            .collect();
        if factors.iter().any(|f| f.is_empty()) {
            return Err(Error::Config(format!("malformed term `{s}`")));
        }
        Ok(Term::Product(factors))
    }

    fn evaluate(&self, enc: &EncodedCovariates) -> Result<Vec<f64>> {
        match self {
            Term::Intercept => Ok(vec![1.0; enc.n]),
            Term::Product(factors) => {
                let mut out = vec![1.0; enc.n];
                for f in factors {
                    let col = enc.column(f).ok_or_else(|| Error::UnknownColumn(f.clone()))?;
                    out.iter_mut().zip(col).for_each(|(o, v)| *o *= v);
                }
                Ok(out)
            }
        }
    }
}

impl fmt::Display for Term {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Term::Intercept => write!(f, "intercept"),
            Term::Product(factors) => write!(f, "{}", factors.join("*")),
        }
    }
}

impl Serialize for Term {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Term {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        Term::parse(&s).map_err(serde::de::Error::custom)
    }
}

/// Terms of the treatment model, the treatment-free outcome part and the
/// blip. Every list starts with the intercept.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub treatment: Vec<Term>,
    pub treatment_free: Vec<Term>,
    pub blip: Vec<Term>,
}

fn with_leading_intercept(mut terms: Vec<Term>) -> Vec<Term> {
    terms.retain(|t| *t != Term::Intercept);
    terms.insert(0, Term::Intercept);
    terms
}

impl ModelSpec {
    pub fn new(treatment: Vec<Term>, treatment_free: Vec<Term>, blip: Vec<Term>) -> Self {
        Self {
            treatment: with_leading_intercept(treatment),
            treatment_free: with_leading_intercept(treatment_free),
            blip: with_leading_intercept(blip),
        }
    }

    pub fn parse(treatment: &[&str], treatment_free: &[&str], blip: &[&str]) -> Result<Self> {
        let p = |v: &[&str]| v.iter().map(|s| Term::parse(s)).collect::<Result<Vec<_>>>();
        Ok(Self::new(p(treatment)?, p(treatment_free)?, p(blip)?))
    }

    /// Re-establishes the leading-intercept invariant after deserialization.
    pub fn normalized(self) -> Self {
        Self::new(self.treatment, self.treatment_free, self.blip)
    }
}

/// A named design matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct DesignMatrix {
    pub names: Vec<String>,
    pub matrix: DMatrix<f64>,
}

impl DesignMatrix {
    pub fn ncols(&self) -> usize {
        self.matrix.ncols()
    }

    pub fn nrows(&self) -> usize {
        self.matrix.nrows()
    }

    fn build(enc: &EncodedCovariates, terms: &[Term]) -> Result<Self> {
        let mut matrix = DMatrix::zeros(enc.n, terms.len());
        for (j, t) in terms.iter().enumerate() {
            let col = t.evaluate(enc)?;
            matrix.column_mut(j).copy_from_slice(&col);
        }
        Ok(Self {
            names: terms.iter().map(|t| t.to_string()).collect(),
            matrix,
        })
    }
}

/// Encoded covariates plus the treatment (`h_alpha`), treatment-free
/// (`h_beta`) and blip (`h_psi`) design matrices.
#[derive(Debug, Clone, PartialEq)]
pub struct AugmentedDesign {
    pub h: EncodedCovariates,
    pub spec: ModelSpec,
    pub h_alpha: DesignMatrix,
    pub h_beta: DesignMatrix,
    pub h_psi: DesignMatrix,
}

pub fn build_design(encoded: EncodedCovariates, spec: &ModelSpec) -> Result<AugmentedDesign> {
    let spec = spec.clone().normalized();
    let h_alpha = DesignMatrix::build(&encoded, &spec.treatment)?;
    let h_beta = DesignMatrix::build(&encoded, &spec.treatment_free)?;
    let h_psi = DesignMatrix::build(&encoded, &spec.blip)?;
    check_full_rank(&h_alpha.matrix, &h_alpha.names, "treatment")?;
    check_full_rank(&h_beta.matrix, &h_beta.names, "treatment-free")?;
    check_full_rank(&h_psi.matrix, &h_psi.names, "blip")?;
    Ok(AugmentedDesign {
        h: encoded,
        spec,
        h_alpha,
        h_beta,
        h_psi,
    })
}

impl AugmentedDesign {
    /// Encodes with the default fill and builds all three designs.
    pub fn from_dataset(data: &Dataset, spec: &ModelSpec) -> Result<Self> {
        build_design(encode_missing_indicator(data, DEFAULT_FILL)?, spec)
    }

    pub fn n(&self) -> usize {
        self.h.n
    }
}

// ---------------------------------------------------------------------------
// CSV

/// How one confounder column of a CSV file is to be read.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColumnDecl {
    pub name: String,
    #[serde(default)]
    pub categorical: bool,
    /// Level order for categoricals; first level is the reference. Defaults
    /// to the sorted distinct values.
    #[serde(default)]
    pub levels: Option<Vec<String>>,
}

impl ColumnDecl {
    pub fn numeric(name: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            categorical: false,
            levels: None,
        }
    }

    pub fn categorical(name: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            categorical: true,
            levels: None,
        }
    }
}

/// Column roles for CSV ingestion.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColumnRoles {
    pub outcome: String,
    pub treatment: String,
    #[serde(default)]
    pub observed: Vec<ColumnDecl>,
    #[serde(default)]
    pub partial: Vec<ColumnDecl>,
}

fn is_missing(cell: &str) -> bool {
    let t = cell.trim();
    t.is_empty() || t == "NA"
}

fn parse_number(cell: &str, column: &str, row: usize) -> Result<f64> {
    cell.trim().parse::<f64>().map_err(|_| {
        Error::InvalidData(format!("unparsable value `{cell}` in column `{column}` at row {row}"))
    })
}

fn read_column(
    rows: &[csv::StringRecord],
    idx: usize,
    decl: &ColumnDecl,
    allow_missing: bool,
) -> Result<(Covariate, Vec<bool>)> {
    let observed: Vec<bool> = rows.iter().map(|r| !is_missing(&r[idx])).collect();
    if !allow_missing {
        if let Some(i) = observed.iter().position(|&o| !o) {
            return Err(Error::InvalidData(format!(
                "column `{}` is missing at row {} but is declared fully observed",
                decl.name,
                i + 1
            )));
        }
    }
    if decl.categorical {
        let levels = match &decl.levels {
            Some(l) => l.clone(),
            None => rows
                .iter()
                .zip(&observed)
                .filter(|(_, &o)| o)
                .map(|(r, _)| r[idx].trim().to_string())
                .collect::<BTreeSet<_>>()
                .into_iter()
                .collect(),
        };
        let mut codes = Vec::with_capacity(rows.len());
        for (i, (r, &o)) in rows.iter().zip(&observed).enumerate() {
            if !o {
                codes.push(f64::NAN);
                continue;
            }
            let v = r[idx].trim();
            let code = levels.iter().position(|l| l == v).ok_or_else(|| {
                Error::InvalidData(format!("undeclared level `{v}` in `{}` at row {}", decl.name, i + 1))
            })?;
            codes.push(code as f64);
        }
        Ok((Covariate::categorical(&decl.name, levels, codes), observed))
    } else {
        let mut values = Vec::with_capacity(rows.len());
        for (i, (r, &o)) in rows.iter().zip(&observed).enumerate() {
            values.push(if o { parse_number(&r[idx], &decl.name, i + 1)? } else { f64::NAN });
        }
        Ok((Covariate::numeric(&decl.name, values), observed))
    }
}

/// Reads a CSV with a header row. Empty cells and `NA` are missing; any other
/// unparsable cell is an error.
pub fn read_csv<R: Read>(reader: R, roles: &ColumnRoles) -> Result<Dataset> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).trim(csv::Trim::Fields).from_reader(reader);
    let header: Vec<String> = rdr.headers()?.iter().map(|s| s.to_string()).collect();
    let find = |name: &str| {
        header
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::UnknownColumn(name.to_string()))
    };
    let y_idx = find(&roles.outcome)?;
    let z_idx = find(&roles.treatment)?;
    let obs_idx = roles.observed.iter().map(|d| find(&d.name)).collect::<Result<Vec<_>>>()?;
    let par_idx = roles.partial.iter().map(|d| find(&d.name)).collect::<Result<Vec<_>>>()?;

    let rows = rdr.records().collect::<std::result::Result<Vec<_>, _>>()?;
    let mut y = Vec::with_capacity(rows.len());
    let mut z = Vec::with_capacity(rows.len());
    for (i, r) in rows.iter().enumerate() {
        if is_missing(&r[y_idx]) || is_missing(&r[z_idx]) {
            return Err(Error::InvalidData(format!(
                "missing outcome or treatment at row {}",
                i + 1
            )));
        }
        y.push(parse_number(&r[y_idx], &roles.outcome, i + 1)?);
        z.push(parse_number(&r[z_idx], &roles.treatment, i + 1)?);
    }
    let observed = roles
        .observed
        .iter()
        .zip(&obs_idx)
        .map(|(d, &i)| read_column(&rows, i, d, false).map(|(c, _)| c))
        .collect::<Result<Vec<_>>>()?;
    let partial = roles
        .partial
        .iter()
        .zip(&par_idx)
        .map(|(d, &i)| read_column(&rows, i, d, true).map(|(c, m)| PartialCovariate::new(c, m)))
        .collect::<Result<Vec<_>>>()?;
    Ok(Dataset::new(y, z, observed, partial)?.with_names(&roles.outcome, &roles.treatment))
}

fn format_cell(c: &Covariate, i: usize) -> String {
    match &c.kind {
        ColumnKind::Numeric => format!("{}", c.values[i]),
        ColumnKind::Categorical { levels } => levels[c.values[i] as usize].clone(),
    }
}

/// Writes the dataset in the layout [`read_csv`] accepts; missing cells are
/// written as `NA`.
pub fn write_csv<W: Write>(data: &Dataset, writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let mut header = vec![data.outcome_name.clone(), data.treatment_name.clone()];
    header.extend(data.observed.iter().map(|c| c.name.clone()));
    header.extend(data.partial.iter().map(|p| p.name().to_string()));
    w.write_record(&header)?;
    for i in 0..data.n() {
        let mut rec = vec![format!("{}", data.y[i]), format!("{}", data.z[i])];
        rec.extend(data.observed.iter().map(|c| format_cell(c, i)));
        rec.extend(data.partial.iter().map(|p| {
            if p.observed[i] {
                format_cell(&p.covariate, i)
            } else {
                "NA".to_string()
            }
        }));
        w.write_record(&rec)?;
    }
    w.flush().map_err(|e| Error::Csv(e.to_string()))?;
    Ok(())
}

/// Column roles matching what [`write_csv`] produces for `data`.
pub fn roles_of(data: &Dataset) -> ColumnRoles {
    let decl = |c: &Covariate| match &c.kind {
        ColumnKind::Numeric => ColumnDecl::numeric(&c.name),
        ColumnKind::Categorical { levels } => ColumnDecl {
            name: c.name.clone(),
            categorical: true,
            levels: Some(levels.clone()),
        },
    };
    ColumnRoles {
        outcome: data.outcome_name.clone(),
        treatment: data.treatment_name.clone(),
        observed: data.observed.iter().map(decl).collect(),
        partial: data.partial.iter().map(|p| decl(&p.covariate)).collect(),
    }
}
