//! Gaussian graphical models parameterized by their precision matrix.
//!
//! A model stores the precision matrix `theta`, its inverse `sigma`, the
//! partial regression coefficients `beta[i][j] = -theta[i][j] / theta[i][i]`
//! and the conditional variances `1 / theta[i][i]`. The regression form is
//! what the dynamics consume: a Gibbs update of node `i` draws
//! `sum_j beta[i][j] * x_j + N(0, cond_var[i])`.
//!
//! Bounds (`beta_min`, `beta_max`, `sigma_min`, `sigma_max`) are declared on
//! the model and echoed into the learner configuration. Factories pick them
//! so that the model satisfies them by construction; [`validate_model`]
//! re-derives every witness from `theta`.

use std::collections::BTreeSet;

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::serde_f64;

/// Smallest eigenvalue accepted as strictly positive.
pub const PD_TOLERANCE: f64 = 1e-10;
/// Residual allowed in `sigma * theta = I`.
pub const INVERSE_TOLERANCE: f64 = 1e-8;

/// Unordered vertex pairs stored as `(min, max)`.
pub type EdgeSet = BTreeSet<(usize, usize)>;

pub fn normalize_pair(i: usize, j: usize) -> (usize, usize) {
    if i < j {
        (i, j)
    } else {
        (j, i)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Graph {
    p: usize,
    edges: EdgeSet,
    neighbors: Vec<Vec<usize>>,
    d: usize,
}

impl Graph {
    pub fn new(p: usize, edges: impl IntoIterator<Item = (usize, usize)>) -> Result<Self> {
        let mut set = EdgeSet::new();
        for (i, j) in edges {
            if i == j {
                return Err(Error::Validation(format!("self-loop on vertex {i}")));
            }
            if i >= p || j >= p {
                return Err(Error::Validation(format!("edge ({i}, {j}) out of range for p = {p}")));
            }
            if !set.insert(normalize_pair(i, j)) {
                return Err(Error::Validation(format!("duplicate edge ({i}, {j})")));
            }
        }
        Ok(Self::from_set(p, set))
    }

    fn from_set(p: usize, edges: EdgeSet) -> Self {
        let mut neighbors = vec![Vec::new(); p];
        for &(i, j) in &edges {
            neighbors[i].push(j);
            neighbors[j].push(i);
        }
        for n in &mut neighbors {
            n.sort_unstable();
        }
        let d = neighbors.iter().map(Vec::len).max().unwrap_or(0);
        Self { p, edges, neighbors, d }
    }

    pub fn empty(p: usize) -> Self {
        Self::from_set(p, EdgeSet::new())
    }

    /// Cycle `0 - 1 - ... - (p-1) - 0`. Requires `p >= 3`.
    pub fn cycle(p: usize) -> Result<Self> {
        if p < 3 {
            return Err(Error::Validation(format!("cycle needs p >= 3, got {p}")));
        }
        Self::new(p, (0..p).map(|i| (i, (i + 1) % p)))
    }

    pub fn path(p: usize) -> Result<Self> {
        Self::new(p, (1..p).map(|i| (i - 1, i)))
    }

    /// Star centred on vertex 0.
    pub fn star(p: usize) -> Result<Self> {
        Self::new(p, (1..p).map(|i| (0, i)))
    }

    pub fn p(&self) -> usize {
        self.p
    }

    pub fn edges(&self) -> &EdgeSet {
        &self.edges
    }

    pub fn max_degree(&self) -> usize {
        self.d
    }

    pub fn degree(&self, i: usize) -> usize {
        self.neighbors[i].len()
    }

    pub fn neighbors(&self, i: usize) -> &[usize] {
        &self.neighbors[i]
    }

    pub fn has_edge(&self, i: usize, j: usize) -> bool {
        self.edges.contains(&normalize_pair(i, j))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bounds {
    #[serde(serialize_with = "serde_f64::serialize")]
    pub beta_min: f64,
    #[serde(serialize_with = "serde_f64::serialize")]
    pub beta_max: f64,
    #[serde(serialize_with = "serde_f64::serialize")]
    pub sigma_min: f64,
    #[serde(serialize_with = "serde_f64::serialize")]
    pub sigma_max: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub factory: String,
    pub seed: Option<u64>,
    pub ensemble_index: Option<usize>,
    /// Hash of the harness configuration that produced the model.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub config_hash: Option<String>,
}

#[derive(Debug, Clone)]
pub struct GgmModel {
    graph: Graph,
    theta: DMatrix<f64>,
    sigma: DMatrix<f64>,
    beta: DMatrix<f64>,
    cond_var: Vec<f64>,
    bounds: Bounds,
    provenance: Provenance,
}

impl GgmModel {
    /// Build a model from a precision matrix.
    ///
    /// Checks symmetry, positive definiteness and the inverse residual. The
    /// graph is read off the nonzero off-diagonal pattern. With `bounds =
    /// None` the tightest bounds satisfied by `theta` are recorded.
    pub fn from_theta(theta: DMatrix<f64>, bounds: Option<Bounds>, provenance: Provenance) -> Result<Self> {
        check_symmetric(&theta)?;
        let min_eig = min_eigenvalue(&theta);
        if !(min_eig > PD_TOLERANCE) {
            return Err(Error::NotPositiveDefinite {
                min_eigenvalue: min_eig,
            });
        }
        let sigma = stationary_covariance(&theta)?;
        let p = theta.nrows();
        let mut edges = EdgeSet::new();
        for i in 0..p {
            for j in i + 1..p {
                if theta[(i, j)] != 0.0 {
                    edges.insert((i, j));
                }
            }
        }
        let graph = Graph::from_set(p, edges);
        let mut beta = DMatrix::zeros(p, p);
        let mut cond_var = vec![0.0; p];
        for i in 0..p {
            let (row, v) = coefficients_unchecked(&theta, i);
            for (j, b) in row.into_iter().enumerate() {
                beta[(i, j)] = b;
            }
            cond_var[i] = v;
        }
        let bounds = bounds.unwrap_or_else(|| tight_bounds(&graph, &beta, &cond_var, &sigma));
        Ok(Self {
            graph,
            theta,
            sigma,
            beta,
            cond_var,
            bounds,
            provenance,
        })
    }

    pub fn p(&self) -> usize {
        self.graph.p
    }

    pub fn graph(&self) -> &Graph {
        &self.graph
    }

    pub fn theta(&self) -> &DMatrix<f64> {
        &self.theta
    }

    pub fn sigma(&self) -> &DMatrix<f64> {
        &self.sigma
    }

    pub fn beta(&self, i: usize, j: usize) -> f64 {
        self.beta[(i, j)]
    }

    pub fn beta_matrix(&self) -> &DMatrix<f64> {
        &self.beta
    }

    pub fn cond_var(&self, i: usize) -> f64 {
        self.cond_var[i]
    }

    pub fn cond_vars(&self) -> &[f64] {
        &self.cond_var
    }

    pub fn bounds(&self) -> Bounds {
        self.bounds
    }

    pub fn provenance(&self) -> &Provenance {
        &self.provenance
    }

    pub fn with_bounds(mut self, bounds: Bounds) -> Self {
        self.bounds = bounds;
        self
    }

    pub fn with_provenance(mut self, provenance: Provenance) -> Self {
        self.provenance = provenance;
        self
    }

    /// Largest `|beta_ij|` over ordered pairs.
    pub fn max_abs_beta(&self) -> f64 {
        self.beta.iter().fold(0.0_f64, |m, b| m.max(b.abs()))
    }

    pub fn to_file(&self) -> ModelFile {
        let p = self.p();
        let mut theta = Vec::with_capacity(p * p);
        for i in 0..p {
            for j in 0..p {
                theta.push(self.theta[(i, j)]);
            }
        }
        ModelFile {
            p,
            edges: self.graph.edges.iter().map(|&(i, j)| [i, j]).collect(),
            theta,
            bounds: self.bounds,
            provenance: self.provenance.clone(),
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(&self.to_file()).expect("model serializes")
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let file: ModelFile = serde_json::from_str(s)?;
        file.into_model()
    }

    /// SHA-256 of the canonical JSON serialization, hex encoded.
    pub fn content_hash(&self) -> String {
        hex::encode(Sha256::digest(self.to_json().as_bytes()))
    }
}

/// On-disk model representation.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelFile {
    pub p: usize,
    pub edges: Vec<[usize; 2]>,
    #[serde(serialize_with = "serde_f64::vec::serialize")]
    pub theta: Vec<f64>,
    pub bounds: Bounds,
    pub provenance: Provenance,
}

impl ModelFile {
    pub fn into_model(self) -> Result<GgmModel> {
        if self.theta.len() != self.p * self.p {
            return Err(Error::Validation(format!(
                "theta has {} entries, expected {}",
                self.theta.len(),
                self.p * self.p
            )));
        }
        let theta = DMatrix::from_row_slice(self.p, self.p, &self.theta);
        let model = GgmModel::from_theta(theta, Some(self.bounds), self.provenance)?;
        let declared = Graph::new(self.p, self.edges.iter().map(|e| (e[0], e[1])))?;
        if declared.edges != model.graph.edges {
            return Err(Error::Validation(
                "edge list does not match the sparsity pattern of theta".into(),
            ));
        }
        Ok(model)
    }
}

fn check_symmetric(theta: &DMatrix<f64>) -> Result<()> {
    if !theta.is_square() {
        return Err(Error::Validation(format!(
            "theta is {}x{}, not square",
            theta.nrows(),
            theta.ncols()
        )));
    }
    if theta.iter().any(|x| !x.is_finite()) {
        return Err(Error::Validation("theta has non-finite entries".into()));
    }
    let p = theta.nrows();
    for i in 0..p {
        for j in i + 1..p {
            let (a, b) = (theta[(i, j)], theta[(j, i)]);
            if (a - b).abs() > 1e-12 * a.abs().max(b.abs()).max(1.0) {
                return Err(Error::Validation(format!(
                    "theta is not symmetric at ({i}, {j}): {a} vs {b}"
                )));
            }
        }
    }
    Ok(())
}

fn eigenvalues(m: &DMatrix<f64>) -> Vec<f64> {
    SymmetricEigen::new(m.clone()).eigenvalues.iter().copied().collect()
}

pub fn min_eigenvalue(m: &DMatrix<f64>) -> f64 {
    eigenvalues(m).into_iter().fold(f64::INFINITY, f64::min)
}

fn coefficients_unchecked(theta: &DMatrix<f64>, i: usize) -> (Vec<f64>, f64) {
    let tii = theta[(i, i)];
    let row = (0..theta.ncols())
        .map(|j| if j == i { 0.0 } else { -theta[(i, j)] / tii })
        .collect();
    (row, 1.0 / tii)
}

/// Regression coefficients and conditional variance of node `i` given the
/// rest: `beta_row[j] = -theta_ij / theta_ii`, `cond_var = 1 / theta_ii`.
pub fn conditional_coefficients(theta: &DMatrix<f64>, i: usize) -> Result<(Vec<f64>, f64)> {
    check_symmetric(theta)?;
    if i >= theta.nrows() {
        return Err(crate::error::out_of_range(
            "vertex",
            i as f64,
            format!("[0, {})", theta.nrows()),
        ));
    }
    let min_eig = min_eigenvalue(theta);
    if !(min_eig > PD_TOLERANCE) {
        return Err(Error::NotPositiveDefinite {
            min_eigenvalue: min_eig,
        });
    }
    Ok(coefficients_unchecked(theta, i))
}

/// `Sigma = Theta^{-1}`, with the inverse residual checked.
pub fn stationary_covariance(theta: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    check_symmetric(theta)?;
    let p = theta.nrows();
    let eig = eigenvalues(theta);
    let max = eig.iter().fold(0.0_f64, |m, e| m.max(e.abs()));
    let min = eig.iter().fold(f64::INFINITY, |m, e| m.min(e.abs()));
    let condition = if min > 0.0 { max / min } else { f64::INFINITY };
    let singular = || Error::Singular { condition };
    if !(condition < 1e14) {
        return Err(singular());
    }
    let sigma = match theta.clone().cholesky() {
        Some(ch) => ch.inverse(),
        None => theta.clone().try_inverse().ok_or_else(singular)?,
    };
    let residual = (&sigma * theta - DMatrix::<f64>::identity(p, p)).amax();
    if residual > INVERSE_TOLERANCE {
        return Err(singular());
    }
    // symmetrize away rounding
    Ok((&sigma + sigma.transpose()) * 0.5)
}

fn tight_bounds(graph: &Graph, beta: &DMatrix<f64>, cond_var: &[f64], sigma: &DMatrix<f64>) -> Bounds {
    let (mut bmin, mut bmax) = (f64::INFINITY, 0.0_f64);
    for &(i, j) in graph.edges() {
        for b in [beta[(i, j)].abs(), beta[(j, i)].abs()] {
            bmin = bmin.min(b);
            bmax = bmax.max(b);
        }
    }
    if graph.edges().is_empty() {
        bmin = 0.0;
    }
    let var_min = cond_var.iter().copied().fold(f64::INFINITY, f64::min);
    let marg_max = (0..sigma.nrows()).map(|i| sigma[(i, i)]).fold(0.0_f64, f64::max);
    Bounds {
        beta_min: bmin,
        beta_max: bmax,
        sigma_min: var_min.sqrt(),
        sigma_max: marg_max.sqrt(),
    }
}

/// Test-model factory: `theta_ii = diag`, `theta_ij = -beta_target * diag`
/// on edges, so every edge carries `beta_ij = beta_target`.
pub fn build_bounded_degree_model(graph: &Graph, beta_target: f64, diag: f64) -> Result<GgmModel> {
    if !(diag > 0.0) {
        return Err(Error::Config(format!("diag must be positive, got {diag}")));
    }
    let d = graph.max_degree() as f64;
    if !(d * beta_target.abs() < 1.0) {
        return Err(Error::Validation(format!(
            "d * |beta| = {} violates d * beta_max < 1",
            d * beta_target.abs()
        )));
    }
    let p = graph.p();
    let mut theta = DMatrix::from_diagonal_element(p, p, diag);
    for &(i, j) in graph.edges() {
        theta[(i, j)] = -beta_target * diag;
        theta[(j, i)] = -beta_target * diag;
    }
    let model = GgmModel::from_theta(
        theta,
        None,
        Provenance {
            factory: "bounded_degree".into(),
            ..Default::default()
        },
    )?;
    let mut bounds = model.bounds();
    if graph.edges().is_empty() {
        bounds.beta_min = 0.0;
        bounds.beta_max = 0.0;
    } else {
        bounds.beta_min = beta_target.abs();
        bounds.beta_max = beta_target.abs();
    }
    Ok(model.with_bounds(bounds))
}

/// One member of the clique ensemble: `p` vertices, `floor(p / (d + 1))`
/// disjoint cliques of size `d + 1`, edge strength `lambda`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnsembleSpec {
    pub p: usize,
    pub d: usize,
    pub lambda: f64,
    /// 0 is the base model; `v >= 1` removes the `v`-th clique edge.
    pub index: usize,
}

impl EnsembleSpec {
    pub fn cliques(&self) -> usize {
        self.p / (self.d + 1)
    }

    /// Number of perturbed models.
    pub fn size(&self) -> usize {
        self.cliques() * (self.d + 1) * self.d / 2
    }

    /// Edge removed by model `v` (1-based); cliques ordered by lowest
    /// vertex, edges lexicographic within each clique.
    pub fn edge(&self, v: usize) -> Option<(usize, usize)> {
        if v == 0 || v > self.size() {
            return None;
        }
        let per_clique = (self.d + 1) * self.d / 2;
        let (c, mut r) = ((v - 1) / per_clique, (v - 1) % per_clique);
        let base = c * (self.d + 1);
        for a in 0..=self.d {
            let row = self.d - a;
            if r < row {
                return Some((base + a, base + a + 1 + r));
            }
            r -= row;
        }
        unreachable!("edge index within clique")
    }
}

pub fn build_clique_ensemble(spec: &EnsembleSpec) -> Result<GgmModel> {
    if spec.d == 0 || spec.p < spec.d + 1 {
        return Err(Error::Config(format!(
            "ensemble needs 1 <= d and p >= d + 1 (p = {}, d = {})",
            spec.p, spec.d
        )));
    }
    if !(spec.lambda > 0.0) {
        return Err(Error::Config(format!("lambda must be positive, got {}", spec.lambda)));
    }
    if spec.index > spec.size() {
        return Err(crate::error::out_of_range(
            "ensemble index",
            spec.index as f64,
            format!("[0, {}]", spec.size()),
        ));
    }
    let lam = spec.lambda;
    let beta = lam / (1.0 + lam);
    if !(spec.d as f64 * beta < 1.0) {
        return Err(Error::Validation(format!(
            "d * lambda / (1 + lambda) = {} violates d * beta_max < 1",
            spec.d as f64 * beta
        )));
    }
    let p = spec.p;
    let mut theta = DMatrix::<f64>::identity(p, p);
    for c in 0..spec.cliques() {
        let members = c * (spec.d + 1)..(c + 1) * (spec.d + 1);
        for a in members.clone() {
            for b in members.clone() {
                theta[(a, b)] += lam;
            }
        }
    }
    if let Some((a, b)) = spec.edge(spec.index) {
        theta[(a, b)] = 0.0;
        theta[(b, a)] = 0.0;
    }
    let model = GgmModel::from_theta(
        theta,
        None,
        Provenance {
            factory: "clique_ensemble".into(),
            ensemble_index: Some(spec.index),
            ..Default::default()
        },
    )?;
    let mut bounds = model.bounds();
    bounds.beta_min = beta;
    bounds.beta_max = beta;
    Ok(model.with_bounds(bounds))
}

#[derive(Debug, Clone, Serialize)]
pub struct AssumptionCheck {
    pub name: &'static str,
    pub pass: bool,
    pub witness: f64,
    pub detail: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct AssumptionReport {
    pub checks: Vec<AssumptionCheck>,
    pub empty_edge_set: bool,
}

impl AssumptionReport {
    pub fn all_pass(&self) -> bool {
        self.checks.iter().all(|c| c.pass)
    }

    pub fn get(&self, name: &str) -> Option<&AssumptionCheck> {
        self.checks.iter().find(|c| c.name == name)
    }
}

/// Re-derive every assumption witness from `theta` and compare against the
/// declared bounds.
pub fn validate_model(model: &GgmModel) -> AssumptionReport {
    let b = model.bounds();
    let g = model.graph();
    let slack = |x: f64| 1e-12 * x.abs().max(1.0);
    let mut checks = Vec::new();

    let min_eig = min_eigenvalue(model.theta());
    checks.push(AssumptionCheck {
        name: "positive_definite",
        pass: min_eig > PD_TOLERANCE,
        witness: min_eig,
        detail: format!("smallest eigenvalue {min_eig:.6e}"),
    });

    let (mut emin, mut emax) = (f64::INFINITY, 0.0_f64);
    for &(i, j) in g.edges() {
        for v in [model.beta(i, j).abs(), model.beta(j, i).abs()] {
            emin = emin.min(v);
            emax = emax.max(v);
        }
    }
    let empty = g.edges().is_empty();
    checks.push(AssumptionCheck {
        name: "bounded_edge_strength",
        pass: empty || (emin >= b.beta_min - slack(b.beta_min) && emax <= b.beta_max + slack(b.beta_max)),
        witness: if empty { f64::NAN } else { emin },
        detail: if empty {
            "vacuous: no edges".into()
        } else {
            format!(
                "edge |beta| in [{emin:.6e}, {emax:.6e}], declared [{:.6e}, {:.6e}]",
                b.beta_min, b.beta_max
            )
        },
    });

    let var_min = model.cond_vars().iter().copied().fold(f64::INFINITY, f64::min);
    let marg_max = (0..model.p()).map(|i| model.sigma()[(i, i)]).fold(0.0_f64, f64::max);
    let smin2 = b.sigma_min * b.sigma_min;
    let smax2 = b.sigma_max * b.sigma_max;
    checks.push(AssumptionCheck {
        name: "bounded_variance",
        pass: var_min >= smin2 - slack(smin2) && marg_max <= smax2 + slack(smax2),
        witness: var_min,
        detail: format!(
            "min conditional variance {var_min:.6e} (>= {smin2:.6e}), max marginal variance {marg_max:.6e} (<= {smax2:.6e})"
        ),
    });

    let dbeta = g.max_degree() as f64 * b.beta_max;
    checks.push(AssumptionCheck {
        name: "degree_decay",
        pass: dbeta < 1.0,
        witness: dbeta,
        detail: format!(
            "d * beta_max = {dbeta:.6e}, actual d * max|beta| = {:.6e}",
            g.max_degree() as f64 * emax
        ),
    });

    AssumptionReport {
        checks,
        empty_edge_set: empty,
    }
}
