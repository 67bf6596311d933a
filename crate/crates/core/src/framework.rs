//! Databases, data functions, secret graphs, distribution families and the
//! structured Pufferfish framework that ties them together.
//!
//! A database is an `n × k` real matrix (rows are individuals). Its
//! vectorisation `vec(x)` is row-major: entry `(i, j)` sits at `i * k + j`.
//! Linear data functions act on `vec(x)`.

use std::collections::HashSet;
use std::io::{Read, Write};
use std::path::Path;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::Stream;

#[derive(Clone, Debug, PartialEq)]
pub struct Database {
    n: usize,
    k: usize,
    values: Vec<f64>,
}

impl Database {
    pub fn new(n: usize, k: usize, values: Vec<f64>) -> Result<Self> {
        if n == 0 || k == 0 {
            return Err(Error::invalid("database needs n >= 1 and k >= 1"));
        }
        if values.len() != n * k {
            return Err(Error::dim(format!(
                "expected {} entries for a {n}x{k} database, got {}",
                n * k,
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("database entries must be finite"));
        }
        Ok(Database { n, k, values })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let n = rows.len();
        let k = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != k) {
            return Err(Error::dim("ragged rows"));
        }
        Database::new(n, k, rows.concat())
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.k + j]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.k..(i + 1) * self.k]
    }

    /// Row-major vectorisation.
    pub fn vec(&self) -> &[f64] {
        &self.values
    }

    pub fn add(&self, other: &Database) -> Result<Database> {
        if (self.n, self.k) != (other.n, other.k) {
            return Err(Error::dim("shape mismatch in database addition"));
        }
        let values = self
            .values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| a + b)
            .collect();
        Database::new(self.n, self.k, values)
    }

    /// Read a CSV with header `c0,...,c{k-1}` and one row per individual.
    pub fn read_csv<R: Read>(reader: R) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new()
            .has_headers(true)
            .from_reader(reader);
        let headers = rdr.headers()?.clone();
        for (j, h) in headers.iter().enumerate() {
            if h.trim() != format!("c{j}") {
                return Err(Error::Parse(format!("expected header c{j}, found '{h}'")));
            }
        }
        let mut rows = Vec::new();
        for rec in rdr.records() {
            let rec = rec?;
            let row = rec
                .iter()
                .map(|s| {
                    s.trim()
                        .parse::<f64>()
                        .map_err(|e| Error::Parse(format!("'{s}': {e}")))
                })
                .collect::<Result<Vec<_>>>()?;
            rows.push(row);
        }
        Database::from_rows(&rows)
    }

    pub fn read_csv_path(path: impl AsRef<Path>) -> Result<Self> {
        Database::read_csv(std::fs::File::open(path)?)
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record((0..self.k).map(|j| format!("c{j}")))?;
        for i in 0..self.n {
            w.write_record(self.row(i).iter().map(|v| format!("{v:?}")))?;
        }
        w.flush()?;
        Ok(())
    }
}

/// What a data function computes.
#[derive(Clone, Debug, PartialEq)]
pub enum FunctionKind {
    /// Row `i`: `x(i, ·)`.
    RowSelector(usize),
    /// All rows except `i`, in order.
    ComplementRows(usize),
    /// Column `j`: `x(·, j)`.
    ColumnSelector(usize),
    /// All columns except `j`, row-major over the remaining entries.
    ComplementColumns(usize),
    /// `weights · vec(x)`, weights stored row-major as `out_dim × (n·k)`.
    Linear { out_dim: usize, weights: Vec<f64> },
    /// Lookup table for finite domains, keyed by `vec(x)`.
    Table(Vec<(Vec<f64>, Vec<f64>)>),
    /// The constant function (zero-dimensional output).
    Constant,
}

/// A function of the database, optionally with a declared finite image.
#[derive(Clone, Debug, PartialEq)]
pub struct DataFunction {
    pub kind: FunctionKind,
    pub image: Option<Vec<Vec<f64>>>,
}

impl From<FunctionKind> for DataFunction {
    fn from(kind: FunctionKind) -> Self {
        DataFunction { kind, image: None }
    }
}

impl DataFunction {
    pub fn row(i: usize) -> Self {
        FunctionKind::RowSelector(i).into()
    }

    pub fn complement_rows(i: usize) -> Self {
        FunctionKind::ComplementRows(i).into()
    }

    pub fn column(j: usize) -> Self {
        FunctionKind::ColumnSelector(j).into()
    }

    pub fn complement_columns(j: usize) -> Self {
        FunctionKind::ComplementColumns(j).into()
    }

    pub fn constant() -> Self {
        FunctionKind::Constant.into()
    }

    pub fn linear(out_dim: usize, weights: Vec<f64>) -> Result<Self> {
        if out_dim == 0 || weights.is_empty() || !weights.len().is_multiple_of(out_dim) {
            return Err(Error::dim(
                "linear weights must form a non-empty d x (n*k) matrix",
            ));
        }
        Ok(FunctionKind::Linear { out_dim, weights }.into())
    }

    /// Mean of all `n·k` entries.
    pub fn average(n: usize, k: usize) -> Self {
        let w = 1.0 / (n * k) as f64;
        FunctionKind::Linear {
            out_dim: 1,
            weights: vec![w; n * k],
        }
        .into()
    }

    /// Sum of all `n·k` entries.
    pub fn sum(n: usize, k: usize) -> Self {
        FunctionKind::Linear {
            out_dim: 1,
            weights: vec![1.0; n * k],
        }
        .into()
    }

    /// Sum of column `j`.
    pub fn column_sum(n: usize, k: usize, j: usize) -> Self {
        let mut w = vec![0.0; n * k];
        for i in 0..n {
            w[i * k + j] = 1.0;
        }
        FunctionKind::Linear {
            out_dim: 1,
            weights: w,
        }
        .into()
    }

    /// Mean of column `j`.
    pub fn column_average(n: usize, k: usize, j: usize) -> Self {
        let mut w = vec![0.0; n * k];
        for i in 0..n {
            w[i * k + j] = 1.0 / n as f64;
        }
        FunctionKind::Linear {
            out_dim: 1,
            weights: w,
        }
        .into()
    }

    pub fn table(entries: Vec<(Vec<f64>, Vec<f64>)>) -> Result<Self> {
        let d = entries.first().map(|e| e.1.len()).unwrap_or(0);
        if entries.is_empty() || entries.iter().any(|e| e.1.len() != d) {
            return Err(Error::invalid(
                "table needs at least one entry and a fixed output length",
            ));
        }
        Ok(FunctionKind::Table(entries).into())
    }

    pub fn with_image(mut self, image: Vec<Vec<f64>>) -> Self {
        self.image = Some(image);
        self
    }

    pub fn output_dim(&self, n: usize, k: usize) -> usize {
        match &self.kind {
            FunctionKind::RowSelector(_) => k,
            FunctionKind::ComplementRows(_) => (n - 1) * k,
            FunctionKind::ColumnSelector(_) => n,
            FunctionKind::ComplementColumns(_) => n * (k - 1),
            FunctionKind::Linear { out_dim, .. } => *out_dim,
            FunctionKind::Table(t) => t[0].1.len(),
            FunctionKind::Constant => 0,
        }
    }

    pub fn is_constant(&self) -> bool {
        matches!(self.kind, FunctionKind::Constant)
    }

    /// Check that the function can be evaluated on `n × k` databases.
    pub fn validate(&self, n: usize, k: usize) -> Result<()> {
        match &self.kind {
            FunctionKind::RowSelector(i) | FunctionKind::ComplementRows(i) if *i >= n => Err(
                Error::invalid(format!("row index {i} out of range for n = {n}")),
            ),
            FunctionKind::ColumnSelector(j) | FunctionKind::ComplementColumns(j) if *j >= k => Err(
                Error::invalid(format!("column index {j} out of range for k = {k}")),
            ),
            FunctionKind::Linear { out_dim, weights } if weights.len() != out_dim * n * k => {
                Err(Error::dim(format!(
                    "linear map has {} weights, expected {}",
                    weights.len(),
                    out_dim * n * k
                )))
            }
            FunctionKind::Table(t) if t.iter().any(|(x, _)| x.len() != n * k) => {
                Err(Error::dim("table inputs must have n*k entries"))
            }
            _ => Ok(()),
        }
    }

    pub fn evaluate(&self, x: &Database) -> Result<Vec<f64>> {
        let (n, k) = (x.n(), x.k());
        self.validate(n, k)?;
        Ok(match &self.kind {
            FunctionKind::RowSelector(i) => x.row(*i).to_vec(),
            FunctionKind::ComplementRows(i) => (0..n)
                .filter(|r| r != i)
                .flat_map(|r| x.row(r).to_vec())
                .collect(),
            FunctionKind::ColumnSelector(j) => (0..n).map(|r| x.get(r, *j)).collect(),
            FunctionKind::ComplementColumns(j) => (0..n)
                .flat_map(|r| (0..k).filter(|c| c != j).map(move |c| (r, c)))
                .map(|(r, c)| x.get(r, c))
                .collect(),
            FunctionKind::Linear { out_dim, weights } => {
                let nk = n * k;
                (0..*out_dim)
                    .map(|o| {
                        weights[o * nk..(o + 1) * nk]
                            .iter()
                            .zip(x.vec())
                            .map(|(w, v)| w * v)
                            .sum()
                    })
                    .collect()
            }
            FunctionKind::Table(t) => t
                .iter()
                .find(|(input, _)| input.as_slice() == x.vec())
                .map(|(_, out)| out.clone())
                .ok_or_else(|| Error::invalid("database not in the function's table"))?,
            FunctionKind::Constant => Vec::new(),
        })
    }

    /// The matrix `W` with `f(x) = W vec(x)`, when the function is linear.
    pub fn as_matrix(&self, n: usize, k: usize) -> Option<DMatrix<f64>> {
        let nk = n * k;
        let select = |entries: Vec<usize>| {
            let mut m = DMatrix::zeros(entries.len(), nk);
            for (r, e) in entries.into_iter().enumerate() {
                m[(r, e)] = 1.0;
            }
            m
        };
        match &self.kind {
            FunctionKind::RowSelector(i) => Some(select((0..k).map(|j| i * k + j).collect())),
            FunctionKind::ComplementRows(i) => Some(select(
                (0..n)
                    .filter(|r| r != i)
                    .flat_map(|r| (0..k).map(move |j| r * k + j))
                    .collect(),
            )),
            FunctionKind::ColumnSelector(j) => Some(select((0..n).map(|r| r * k + j).collect())),
            FunctionKind::ComplementColumns(j) => Some(select(
                (0..n)
                    .flat_map(|r| (0..k).filter(|c| c != j).map(move |c| r * k + c))
                    .collect(),
            )),
            FunctionKind::Linear { out_dim, weights } => {
                Some(DMatrix::from_row_slice(*out_dim, nk, weights))
            }
            FunctionKind::Constant => Some(DMatrix::zeros(0, nk)),
            FunctionKind::Table(_) => None,
        }
    }

    pub fn label(&self) -> String {
        match &self.kind {
            FunctionKind::RowSelector(i) => format!("row({i})"),
            FunctionKind::ComplementRows(i) => format!("rows-except({i})"),
            FunctionKind::ColumnSelector(j) => format!("column({j})"),
            FunctionKind::ComplementColumns(j) => format!("columns-except({j})"),
            FunctionKind::Linear { out_dim, .. } => format!("linear(d={out_dim})"),
            FunctionKind::Table(t) => format!("table({} entries)", t.len()),
            FunctionKind::Constant => "constant".to_string(),
        }
    }
}

static CONSTANT_FN: DataFunction = DataFunction {
    kind: FunctionKind::Constant,
    image: None,
};

/// One edge `g ∼ w` of the secret graph. `public == None` stands for the
/// constant public function used when there is no public information.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct SecretPair {
    pub private: usize,
    pub public: Option<usize>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SecretGraph {
    privates: Vec<DataFunction>,
    publics: Vec<DataFunction>,
    edges: Vec<(usize, usize)>,
    allow_empty_public: bool,
}

impl SecretGraph {
    pub fn new(
        privates: Vec<DataFunction>,
        publics: Vec<DataFunction>,
        edges: Vec<(usize, usize)>,
        allow_empty_public: bool,
    ) -> Result<Self> {
        if privates.is_empty() {
            return Err(Error::invalid(
                "secret graph needs at least one private function",
            ));
        }
        let mut seen = HashSet::new();
        for &(g, w) in &edges {
            if g >= privates.len() {
                return Err(Error::invalid(format!(
                    "edge ({g},{w}) refers to private {g}, but only {} privates exist",
                    privates.len()
                )));
            }
            if w >= publics.len() {
                return Err(Error::invalid(format!(
                    "edge ({g},{w}) refers to public {w}, but only {} publics exist",
                    publics.len()
                )));
            }
            if !seen.insert((g, w)) {
                return Err(Error::invalid(format!("duplicate edge ({g},{w})")));
            }
        }
        if edges.is_empty() && !allow_empty_public {
            return Err(Error::invalid(
                "no edges; set allow_empty_public for frameworks without public information",
            ));
        }
        Ok(SecretGraph {
            privates,
            publics,
            edges,
            allow_empty_public,
        })
    }

    /// `g_i = row i`, `w_i = all other rows`, edges `(i, i)`.
    pub fn dp(n: usize) -> Self {
        SecretGraph {
            privates: (0..n).map(DataFunction::row).collect(),
            publics: (0..n).map(DataFunction::complement_rows).collect(),
            edges: (0..n).map(|i| (i, i)).collect(),
            allow_empty_public: false,
        }
    }

    /// One column selector per attribute and no public information.
    pub fn ap(k: usize) -> Self {
        SecretGraph {
            privates: (0..k).map(DataFunction::column).collect(),
            publics: Vec::new(),
            edges: Vec::new(),
            allow_empty_public: true,
        }
    }

    pub fn privates(&self) -> &[DataFunction] {
        &self.privates
    }

    pub fn publics(&self) -> &[DataFunction] {
        &self.publics
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn allow_empty_public(&self) -> bool {
        self.allow_empty_public
    }

    /// Every secret pair the privacy definition ranges over.
    pub fn pairs(&self) -> Vec<SecretPair> {
        if self.edges.is_empty() {
            (0..self.privates.len())
                .map(|g| SecretPair {
                    private: g,
                    public: None,
                })
                .collect()
        } else {
            self.edges
                .iter()
                .map(|&(g, w)| SecretPair {
                    private: g,
                    public: Some(w),
                })
                .collect()
        }
    }

    /// Public functions with at least one edge (the constant function when there are none).
    pub fn active_publics(&self) -> Vec<Option<usize>> {
        let mut out: Vec<Option<usize>> = Vec::new();
        for p in self.pairs() {
            if !out.contains(&p.public) {
                out.push(p.public);
            }
        }
        out
    }

    pub fn private_fn(&self, g: usize) -> &DataFunction {
        &self.privates[g]
    }

    pub fn public_fn(&self, w: Option<usize>) -> &DataFunction {
        match w {
            Some(i) => &self.publics[i],
            None => &CONSTANT_FN,
        }
    }

    pub fn validate(&self, n: usize, k: usize) -> Result<()> {
        for f in self.privates.iter().chain(&self.publics) {
            f.validate(n, k)?;
        }
        Ok(())
    }
}

/// Law of a single database row, used by sample-only families.
pub trait RowSampler: Send + Sync + std::fmt::Debug {
    fn sample_row(&self, rng: &mut Stream) -> Vec<f64>;
    fn dim(&self) -> usize;
}

/// Independent Gaussian coordinates.
#[derive(Clone, Debug, PartialEq)]
pub struct GaussianRows {
    pub mean: Vec<f64>,
    pub sd: Vec<f64>,
}

impl RowSampler for GaussianRows {
    fn sample_row(&self, rng: &mut Stream) -> Vec<f64> {
        self.mean
            .iter()
            .zip(&self.sd)
            .map(|(m, s)| m + s * rng.normal())
            .collect()
    }

    fn dim(&self) -> usize {
        self.mean.len()
    }
}

/// Independent uniform coordinates on `[lo, hi]`.
#[derive(Clone, Debug, PartialEq)]
pub struct UniformRows {
    pub lo: f64,
    pub hi: f64,
    pub k: usize,
}

impl RowSampler for UniformRows {
    fn sample_row(&self, rng: &mut Stream) -> Vec<f64> {
        (0..self.k)
            .map(|_| self.lo + (self.hi - self.lo) * rng.uniform())
            .collect()
    }

    fn dim(&self) -> usize {
        self.k
    }
}

/// Finite family of joint PMFs over the grid `alphabet^(n·k)`.
///
/// Databases are enumerated in lexicographic order of `vec(x)` with the first
/// entry most significant, so index `t` has entry `e` equal to
/// `alphabet[(t / |A|^(nk-1-e)) % |A|]`.
#[derive(Clone, Debug, PartialEq)]
pub struct DiscreteFamily {
    pub alphabet: Vec<f64>,
    pub n: usize,
    pub k: usize,
    pub members: Vec<Vec<f64>>,
}

impl DiscreteFamily {
    pub fn new(alphabet: Vec<f64>, n: usize, k: usize, members: Vec<Vec<f64>>) -> Result<Self> {
        let fam = DiscreteFamily {
            alphabet,
            n,
            k,
            members,
        };
        fam.validate()?;
        Ok(fam)
    }

    pub fn grid_size(&self) -> usize {
        self.alphabet.len().pow((self.n * self.k) as u32)
    }

    pub fn database(&self, index: usize) -> Database {
        let a = self.alphabet.len();
        let nk = self.n * self.k;
        let mut values = vec![0.0; nk];
        let mut t = index;
        for e in (0..nk).rev() {
            values[e] = self.alphabet[t % a];
            t /= a;
        }
        Database {
            n: self.n,
            k: self.k,
            values,
        }
    }

    pub fn databases(&self) -> Vec<Database> {
        (0..self.grid_size()).map(|t| self.database(t)).collect()
    }

    pub fn uniform_pmf(&self) -> Vec<f64> {
        let g = self.grid_size();
        vec![1.0 / g as f64; g]
    }

    fn validate(&self) -> Result<()> {
        if self.alphabet.is_empty() {
            return Err(Error::invalid("empty alphabet"));
        }
        let nk = (self.n * self.k) as u32;
        if self
            .alphabet
            .len()
            .checked_pow(nk)
            .is_none_or(|g| g > 1 << 22)
        {
            return Err(Error::capability("database grid too large to enumerate"));
        }
        if self.members.is_empty() {
            return Err(Error::invalid("discrete family has no members"));
        }
        let g = self.grid_size();
        for (m, p) in self.members.iter().enumerate() {
            if p.len() != g {
                return Err(Error::dim(format!(
                    "member {m} has {} probabilities, grid has {g}",
                    p.len()
                )));
            }
            if p.iter().any(|&v| !(v >= 0.0)) {
                return Err(Error::invalid(format!(
                    "member {m} has negative or NaN probabilities"
                )));
            }
            let s: f64 = p.iter().sum();
            if (s - 1.0).abs() > 1e-12 {
                return Err(Error::invalid(format!("member {m} sums to {s}, not 1")));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub enum DistributionFamily {
    DiscreteFinite(DiscreteFamily),
    /// Independent entries `N(μ_e, σ_e²)` with `|μ_e| ≤ mean_bound`, `σ_e² ≤ var_bound`.
    ProductGaussian {
        mean_bound: f64,
        var_bound: f64,
    },
    /// Rows i.i.d. `N(mean, cov)` with `mean ∈ R^k`.
    MultivariateGaussian {
        mean: Vec<f64>,
        cov: Vec<Vec<f64>>,
    },
    /// Rows i.i.d. from a sampler, with an optional bound `c ≥ E‖row − μ‖²`.
    SampleAccess {
        sampler: Arc<dyn RowSampler>,
        second_moment_bound: Option<f64>,
    },
}

impl DistributionFamily {
    pub fn validate(&self, n: usize, k: usize) -> Result<()> {
        match self {
            DistributionFamily::DiscreteFinite(f) => {
                if (f.n, f.k) != (n, k) {
                    return Err(Error::dim(
                        "discrete family shape differs from framework shape",
                    ));
                }
                f.validate()
            }
            DistributionFamily::ProductGaussian {
                mean_bound,
                var_bound,
            } => {
                if !(mean_bound.is_finite()
                    && *mean_bound >= 0.0
                    && var_bound.is_finite()
                    && *var_bound >= 0.0)
                {
                    return Err(Error::invalid(
                        "product Gaussian bounds must be finite and non-negative",
                    ));
                }
                Ok(())
            }
            DistributionFamily::MultivariateGaussian { mean, cov } => {
                if mean.len() != k || cov.len() != k || cov.iter().any(|r| r.len() != k) {
                    return Err(Error::dim(
                        "Gaussian row law must have mean in R^k and a k x k covariance",
                    ));
                }
                let c = DMatrix::from_fn(k, k, |i, j| cov[i][j]);
                if (&c - c.transpose()).abs().max() > 1e-12 {
                    return Err(Error::invalid("covariance is not symmetric"));
                }
                let eig = c.symmetric_eigenvalues();
                if eig.iter().any(|&l| l < -1e-10) {
                    return Err(Error::invalid("covariance is not positive semidefinite"));
                }
                Ok(())
            }
            DistributionFamily::SampleAccess {
                sampler,
                second_moment_bound,
            } => {
                if sampler.dim() != k {
                    return Err(Error::dim("row sampler dimension differs from k"));
                }
                if second_moment_bound.is_some_and(|c| !c.is_finite()) {
                    return Err(Error::invalid("second-moment bound must be finite"));
                }
                Ok(())
            }
        }
    }

    pub fn label(&self) -> &'static str {
        match self {
            DistributionFamily::DiscreteFinite(_) => "discrete",
            DistributionFamily::ProductGaussian { .. } => "product-gaussian",
            DistributionFamily::MultivariateGaussian { .. } => "gaussian",
            DistributionFamily::SampleAccess { .. } => "sample-access",
        }
    }
}

/// A concrete member of a family, as seen by the statistics routines.
#[derive(Clone, Debug)]
pub enum Member<'a> {
    /// Joint PMF `pmf` over the family grid.
    Discrete {
        index: usize,
        family: &'a DiscreteFamily,
        pmf: &'a [f64],
    },
    /// `vec(X) ~ N(mean, cov)` on `n × k` databases.
    Gaussian {
        label: String,
        mean: DVector<f64>,
        cov: DMatrix<f64>,
        n: usize,
        k: usize,
    },
    /// Rows drawn independently from `sampler`.
    Sampled {
        sampler: &'a Arc<dyn RowSampler>,
        n: usize,
        k: usize,
    },
}

impl Member<'_> {
    pub fn label(&self) -> String {
        match self {
            Member::Discrete { index, .. } => format!("member {index}"),
            Member::Gaussian { label, .. } => label.clone(),
            Member::Sampled { sampler, .. } => format!("sampler {sampler:?}"),
        }
    }
}

/// The tuple `(G, W, E, Θ)` on `n × k` databases.
#[derive(Clone, Debug)]
pub struct PPFramework {
    pub graph: SecretGraph,
    pub theta: DistributionFamily,
    pub n: usize,
    pub k: usize,
}

impl PPFramework {
    pub fn new(graph: SecretGraph, theta: DistributionFamily, n: usize, k: usize) -> Result<Self> {
        if n == 0 || k == 0 {
            return Err(Error::invalid("framework needs n >= 1 and k >= 1"));
        }
        graph.validate(n, k)?;
        theta.validate(n, k)?;
        Ok(PPFramework { graph, theta, n, k })
    }

    pub fn dp(theta: DistributionFamily, n: usize, k: usize) -> Result<Self> {
        PPFramework::new(SecretGraph::dp(n), theta, n, k)
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: FrameworkConfig = toml::from_str(text)?;
        cfg.build()
    }

    pub fn from_toml_path(path: impl AsRef<Path>) -> Result<Self> {
        PPFramework::from_toml_str(&std::fs::read_to_string(path)?)
    }

    pub fn discrete_family(&self) -> Result<&DiscreteFamily> {
        match &self.theta {
            DistributionFamily::DiscreteFinite(f) => Ok(f),
            other => Err(Error::capability(format!(
                "operation needs a finite discrete family, framework has {}",
                other.label()
            ))),
        }
    }

    /// Members over which suprema are taken.
    ///
    /// For the product Gaussian family only the variance-extremal member
    /// `N(0, s I)` is returned: conditional variances of every function are
    /// non-decreasing in each entry variance and do not depend on the means.
    pub fn members(&self) -> Vec<Member<'_>> {
        let nk = self.n * self.k;
        match &self.theta {
            DistributionFamily::DiscreteFinite(f) => f
                .members
                .iter()
                .enumerate()
                .map(|(index, pmf)| Member::Discrete {
                    index,
                    family: f,
                    pmf,
                })
                .collect(),
            DistributionFamily::ProductGaussian { var_bound, .. } => vec![Member::Gaussian {
                label: format!("N(0, {var_bound} I) (variance-extremal)"),
                mean: DVector::zeros(nk),
                cov: DMatrix::identity(nk, nk) * *var_bound,
                n: self.n,
                k: self.k,
            }],
            DistributionFamily::MultivariateGaussian { mean, cov } => {
                let k = self.k;
                let row_cov = DMatrix::from_fn(k, k, |i, j| cov[i][j]);
                let mut full = DMatrix::zeros(nk, nk);
                for r in 0..self.n {
                    full.view_mut((r * k, r * k), (k, k)).copy_from(&row_cov);
                }
                vec![Member::Gaussian {
                    label: "rows i.i.d. Gaussian".to_string(),
                    mean: DVector::from_fn(nk, |e, _| mean[e % k]),
                    cov: full,
                    n: self.n,
                    k: self.k,
                }]
            }
            DistributionFamily::SampleAccess { sampler, .. } => {
                vec![Member::Sampled {
                    sampler,
                    n: self.n,
                    k: self.k,
                }]
            }
        }
    }

    /// Largest private image size: declared images first, otherwise
    /// enumerated over a discrete family.
    pub fn max_private_image(&self) -> Result<usize> {
        let mut best = 0;
        for g in self.graph.privates() {
            let size = match (&g.image, &self.theta) {
                (Some(img), _) => img.len(),
                (None, DistributionFamily::DiscreteFinite(f)) => {
                    let mut vals: Vec<Vec<f64>> = Vec::new();
                    for x in f.databases() {
                        let v = g.evaluate(&x)?;
                        if !vals.contains(&v) {
                            vals.push(v);
                        }
                    }
                    vals.len()
                }
                _ => {
                    return Err(Error::capability(format!(
                        "private function {} has no declared finite image",
                        g.label()
                    )))
                }
            };
            best = best.max(size);
        }
        Ok(best)
    }
}

// ---------------------------------------------------------------------------
// Config file
// ---------------------------------------------------------------------------

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FunctionSpec {
    Row { index: usize },
    ComplementRows { index: usize },
    Column { index: usize },
    ComplementColumns { index: usize },
    Linear { weights: Vec<Vec<f64>> },
    Average,
    Sum,
    ColumnSum { index: usize },
    ColumnAverage { index: usize },
    Table { entries: Vec<TableEntry> },
    Constant,
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct TableEntry {
    pub input: Vec<f64>,
    pub output: Vec<f64>,
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct FunctionConfig {
    #[serde(flatten)]
    pub spec: FunctionSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub image: Option<Vec<Vec<f64>>>,
}

impl FunctionConfig {
    pub fn build(&self, n: usize, k: usize) -> Result<DataFunction> {
        let f = match &self.spec {
            FunctionSpec::Row { index } => DataFunction::row(*index),
            FunctionSpec::ComplementRows { index } => DataFunction::complement_rows(*index),
            FunctionSpec::Column { index } => DataFunction::column(*index),
            FunctionSpec::ComplementColumns { index } => DataFunction::complement_columns(*index),
            FunctionSpec::Linear { weights } => {
                let d = weights.len();
                if weights.iter().any(|r| r.len() != n * k) {
                    return Err(Error::dim("each linear weight row needs n*k entries"));
                }
                DataFunction::linear(d, weights.concat())?
            }
            FunctionSpec::Average => DataFunction::average(n, k),
            FunctionSpec::Sum => DataFunction::sum(n, k),
            FunctionSpec::ColumnSum { index } => DataFunction::column_sum(n, k, *index),
            FunctionSpec::ColumnAverage { index } => DataFunction::column_average(n, k, *index),
            FunctionSpec::Table { entries } => DataFunction::table(
                entries
                    .iter()
                    .map(|e| (e.input.clone(), e.output.clone()))
                    .collect(),
            )?,
            FunctionSpec::Constant => DataFunction::constant(),
        };
        f.validate(n, k)?;
        Ok(match &self.image {
            Some(img) => f.with_image(img.clone()),
            None => f,
        })
    }
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ThetaConfig {
    Discrete {
        alphabet: Vec<f64>,
        #[serde(default)]
        members: Vec<Vec<f64>>,
        /// Add the uniform PMF over the grid as a member.
        #[serde(default)]
        uniform: bool,
    },
    ProductGaussian {
        m: f64,
        s: f64,
    },
    Gaussian {
        mean: Vec<f64>,
        cov: Vec<Vec<f64>>,
    },
    Sample {
        law: RowLawConfig,
        #[serde(default)]
        c: Option<f64>,
    },
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(tag = "name", rename_all = "snake_case")]
pub enum RowLawConfig {
    Gaussian { mean: Vec<f64>, sd: Vec<f64> },
    Uniform { lo: f64, hi: f64 },
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "snake_case")]
pub enum Preset {
    Dp,
    Ap,
}

/// Framework description as read from a TOML file.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct FrameworkConfig {
    pub n: usize,
    pub k: usize,
    #[serde(default)]
    pub preset: Option<Preset>,
    #[serde(default)]
    pub privates: Vec<FunctionConfig>,
    #[serde(default)]
    pub publics: Vec<FunctionConfig>,
    #[serde(default)]
    pub edges: Vec<(usize, usize)>,
    #[serde(default)]
    pub allow_empty_public: bool,
    pub theta: ThetaConfig,
}

impl FrameworkConfig {
    pub fn build(&self) -> Result<PPFramework> {
        let (n, k) = (self.n, self.k);
        if n == 0 || k == 0 {
            return Err(Error::invalid("n and k must be positive"));
        }
        let graph = match self.preset {
            Some(Preset::Dp) => SecretGraph::dp(n),
            Some(Preset::Ap) => SecretGraph::ap(k),
            None => {
                let privates = self
                    .privates
                    .iter()
                    .map(|f| f.build(n, k))
                    .collect::<Result<Vec<_>>>()?;
                let publics = self
                    .publics
                    .iter()
                    .map(|f| f.build(n, k))
                    .collect::<Result<Vec<_>>>()?;
                SecretGraph::new(
                    privates,
                    publics,
                    self.edges.clone(),
                    self.allow_empty_public,
                )?
            }
        };
        let theta = match &self.theta {
            ThetaConfig::Discrete {
                alphabet,
                members,
                uniform,
            } => {
                let mut fam = DiscreteFamily {
                    alphabet: alphabet.clone(),
                    n,
                    k,
                    members: members.clone(),
                };
                if *uniform {
                    fam.members.push(fam.uniform_pmf());
                }
                DistributionFamily::DiscreteFinite(DiscreteFamily::new(
                    fam.alphabet,
                    n,
                    k,
                    fam.members,
                )?)
            }
            ThetaConfig::ProductGaussian { m, s } => DistributionFamily::ProductGaussian {
                mean_bound: *m,
                var_bound: *s,
            },
            ThetaConfig::Gaussian { mean, cov } => DistributionFamily::MultivariateGaussian {
                mean: mean.clone(),
                cov: cov.clone(),
            },
            ThetaConfig::Sample { law, c } => {
                let sampler: Arc<dyn RowSampler> = match law {
                    RowLawConfig::Gaussian { mean, sd } => Arc::new(GaussianRows {
                        mean: mean.clone(),
                        sd: sd.clone(),
                    }),
                    RowLawConfig::Uniform { lo, hi } => Arc::new(UniformRows {
                        lo: *lo,
                        hi: *hi,
                        k,
                    }),
                };
                DistributionFamily::SampleAccess {
                    sampler,
                    second_moment_bound: *c,
                }
            }
        };
        PPFramework::new(graph, theta, n, k)
    }
}

/// Evaluate a query on a database.
pub fn evaluate_query(f: &DataFunction, x: &Database) -> Result<Vec<f64>> {
    f.evaluate(x)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn db22() -> Database {
        Database::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap()
    }

    #[test]
    fn query_examples() {
        let x = Database::from_rows(&[vec![1.0], vec![2.0], vec![3.0]]).unwrap();
        assert_eq!(DataFunction::average(3, 1).evaluate(&x).unwrap(), vec![2.0]);
        assert_eq!(
            DataFunction::row(1).evaluate(&db22()).unwrap(),
            vec![3.0, 4.0]
        );
        assert_eq!(
            DataFunction::column(0).evaluate(&db22()).unwrap(),
            vec![1.0, 3.0]
        );
        assert_eq!(
            DataFunction::complement_columns(0)
                .evaluate(&db22())
                .unwrap(),
            vec![2.0, 4.0]
        );
        assert_eq!(
            DataFunction::complement_rows(0).evaluate(&db22()).unwrap(),
            vec![3.0, 4.0]
        );
    }

    #[test]
    fn dimension_mismatch_is_an_error() {
        let f = DataFunction::average(3, 1);
        assert!(matches!(f.evaluate(&db22()), Err(Error::Dimension(_))));
        assert!(DataFunction::row(5).evaluate(&db22()).is_err());
    }

    #[test]
    fn matrices_agree_with_evaluation() {
        let x = db22();
        for f in [
            DataFunction::row(1),
            DataFunction::complement_rows(1),
            DataFunction::column(1),
            DataFunction::complement_columns(1),
            DataFunction::sum(2, 2),
        ] {
            let m = f.as_matrix(2, 2).unwrap();
            let via = &m * DVector::from_column_slice(x.vec());
            assert_eq!(
                via.as_slice(),
                f.evaluate(&x).unwrap().as_slice(),
                "{}",
                f.label()
            );
        }
    }

    #[test]
    fn dp_preset_shape() {
        let cfg = r#"
            n = 3
            k = 2
            preset = "dp"
            [theta]
            kind = "product_gaussian"
            m = 1.0
            s = 1.0
        "#;
        let fw = PPFramework::from_toml_str(cfg).unwrap();
        assert_eq!(fw.graph.privates().len(), 3);
        assert_eq!(fw.graph.publics().len(), 3);
        assert_eq!(fw.graph.edges().len(), 3);
    }

    #[test]
    fn ap_preset_shape() {
        let cfg = r#"
            n = 2
            k = 2
            preset = "ap"
            [theta]
            kind = "discrete"
            alphabet = [0.0, 1.0]
            uniform = true
        "#;
        let fw = PPFramework::from_toml_str(cfg).unwrap();
        assert_eq!(fw.graph.privates().len(), 2);
        assert!(fw.graph.publics().is_empty());
        assert!(fw.graph.edges().is_empty());
        assert!(fw
            .graph
            .privates()
            .iter()
            .all(|g| matches!(g.kind, FunctionKind::ColumnSelector(_))));
        assert_eq!(fw.graph.active_publics(), vec![None]);
    }

    #[test]
    fn dangling_edge_is_rejected() {
        let cfg = r#"
            n = 3
            k = 1
            privates = [{ kind = "row", index = 0 }, { kind = "row", index = 1 }, { kind = "row", index = 2 }]
            publics = [{ kind = "complement_rows", index = 0 }]
            edges = [[5, 0]]
            [theta]
            kind = "product_gaussian"
            m = 1.0
            s = 1.0
        "#;
        let err = PPFramework::from_toml_str(cfg).unwrap_err();
        assert!(matches!(err, Error::Invalid(_)), "{err}");
    }

    #[test]
    fn malformed_config_is_a_parse_error() {
        assert!(matches!(
            PPFramework::from_toml_str("n = ["),
            Err(Error::Parse(_))
        ));
        assert!(matches!(
            PPFramework::from_toml_str("n = 1\nk = 1\n"),
            Err(Error::Parse(_))
        ));
    }

    #[test]
    fn discrete_family_enumeration_order() {
        let fam = DiscreteFamily::new(vec![0.0, 1.0], 2, 1, vec![vec![0.25; 4]]).unwrap();
        let dbs: Vec<Vec<f64>> = fam.databases().iter().map(|d| d.vec().to_vec()).collect();
        assert_eq!(
            dbs,
            vec![
                vec![0.0, 0.0],
                vec![0.0, 1.0],
                vec![1.0, 0.0],
                vec![1.0, 1.0]
            ]
        );
    }

    #[test]
    fn pmf_validation() {
        assert!(DiscreteFamily::new(vec![0.0, 1.0], 1, 1, vec![vec![0.5, 0.6]]).is_err());
        assert!(DiscreteFamily::new(vec![0.0, 1.0], 1, 1, vec![vec![1.5, -0.5]]).is_err());
    }

    #[test]
    fn database_csv_roundtrip() {
        let x = db22();
        let mut buf = Vec::new();
        x.write_csv(&mut buf).unwrap();
        assert!(String::from_utf8_lossy(&buf).starts_with("c0,c1\n"));
        assert_eq!(Database::read_csv(buf.as_slice()).unwrap(), x);
        assert!(Database::read_csv("a,b\n1,2\n".as_bytes()).is_err());
    }

    #[test]
    fn declared_image_is_required_outside_discrete_families() {
        let fw = PPFramework::dp(
            DistributionFamily::ProductGaussian {
                mean_bound: 1.0,
                var_bound: 1.0,
            },
            2,
            1,
        )
        .unwrap();
        assert!(fw.max_private_image().unwrap_err().is_capability());
        let graph = SecretGraph::new(
            vec![DataFunction::row(0).with_image(vec![vec![0.0], vec![1.0]])],
            vec![DataFunction::complement_rows(0)],
            vec![(0, 0)],
            false,
        )
        .unwrap();
        let fw = PPFramework::new(graph, fw.theta.clone(), 2, 1).unwrap();
        assert_eq!(fw.max_private_image().unwrap(), 2);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn dp_pairs_partition_the_database(n in 1usize..5, k in 1usize..4, seed in any::<u64>()) {
                let mut rng = Stream::new(seed);
                let x = Database::new(n, k, (0..n * k).map(|_| rng.normal()).collect()).unwrap();
                let g = SecretGraph::dp(n);
                for p in g.pairs() {
                    let mut joined = g.private_fn(p.private).evaluate(&x).unwrap();
                    joined.extend(g.public_fn(p.public).evaluate(&x).unwrap());
                    let mut expect = x.vec().to_vec();
                    joined.sort_by(f64::total_cmp);
                    expect.sort_by(f64::total_cmp);
                    prop_assert_eq!(joined, expect);
                }
            }

            #[test]
            fn linear_functions_are_additive(n in 1usize..4, k in 1usize..4, d in 1usize..3, seed in any::<u64>()) {
                let mut rng = Stream::new(seed);
                let f = DataFunction::linear(d, (0..d * n * k).map(|_| rng.normal()).collect()).unwrap();
                let x = Database::new(n, k, (0..n * k).map(|_| rng.normal()).collect()).unwrap();
                let y = Database::new(n, k, (0..n * k).map(|_| rng.normal()).collect()).unwrap();
                let lhs = f.evaluate(&x.add(&y).unwrap()).unwrap();
                let fx = f.evaluate(&x).unwrap();
                let fy = f.evaluate(&y).unwrap();
                for j in 0..d {
                    prop_assert!((lhs[j] - fx[j] - fy[j]).abs() < 1e-9);
                }
            }

            #[test]
            fn building_is_deterministic(n in 1usize..5, k in 1usize..4) {
                let cfg = FrameworkConfig {
                    n, k, preset: Some(Preset::Dp), privates: vec![], publics: vec![], edges: vec![],
                    allow_empty_public: false,
                    theta: ThetaConfig::ProductGaussian { m: 1.0, s: 2.0 },
                };
                let a = cfg.build().unwrap();
                let b = cfg.build().unwrap();
                prop_assert_eq!(a.graph, b.graph);
            }
        }
    }
}
