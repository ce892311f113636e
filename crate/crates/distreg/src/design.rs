//! Model-frame construction: per-parameter design matrices, penalized
//! smooth bases, and the coefficient-name registry.
//!
//! [`build_frame`] turns a parsed [`FormulaSet`] plus a [`DataTable`] into a
//! [`ModelFrame`]: for every distribution parameter, one parametric block
//! holding all linear/transform/polynomial columns (intercept first, then
//! written order) and one term block per smooth or special term. Rows with
//! missing values in any used column are dropped, and the count is kept for
//! reporting.
//!
//! Smooths use penalized B-splines: an equally spaced B-spline basis over
//! the observed covariate range with a difference penalty on adjacent
//! coefficients. Each smooth is reparameterized to sum-to-zero columns
//! (the level belongs to the intercept), which removes one coefficient.
//!
//! Coefficient names are stable and fully determined by the formulas:
//! `<param>.p.<column>` for parametric columns and
//! `<param>.s.<label>.b<i>` for term-block coefficients; smoothing
//! variances sample under `<param>.s.<label>.tau2<l>`.

use std::collections::BTreeMap;
use std::sync::Arc;

use ndarray::{Array1, Array2, ArrayView2};

use crate::data::{Column, DataTable};
use crate::error::{Error, Result};
use crate::family::Family;
use crate::formula::{eval_transform, FormulaSet, TermKind, TermSpec};
use crate::linalg::{check_symmetric_psd, constraint_nullspace, psd_rank};
use crate::special::{gompertz_term, SpecialHooks};

/// Starting value for smoothing variances before optimization/sampling.
pub const DEFAULT_TAU2: f64 = 10.0;

// ---------------------------------------------------------------------
// penalized B-spline basis
// ---------------------------------------------------------------------

/// An equally spaced B-spline basis frozen to a training covariate range.
#[derive(Debug, Clone, PartialEq)]
pub struct PSpline {
    k: usize,
    degree: usize,
    x_min: f64,
    x_max: f64,
    /// Full knot vector: `k - degree` equal intervals spanning
    /// `[x_min, x_max]` plus `degree` replicated-spacing knots per side.
    knots: Vec<f64>,
}

impl PSpline {
    /// Lays out knots for `k` basis functions of the given degree over the
    /// observed range of `x`.
    pub fn new(x: &[f64], k: usize, degree: usize) -> Result<Self> {
        if k < degree + 1 {
            return Err(Error::Design(format!(
                "basis dimension k = {k} is too small for degree {degree} (need k ≥ degree + 1)"
            )));
        }
        let x_min = x.iter().copied().fold(f64::INFINITY, f64::min);
        let x_max = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if !x_min.is_finite() || !x_max.is_finite() || x_max <= x_min {
            return Err(Error::Design(
                "degenerate smooth covariate: needs at least 2 distinct finite values".into(),
            ));
        }
        let m = k - degree;
        let h = (x_max - x_min) / m as f64;
        let knots = (0..=(m + 2 * degree))
            .map(|j| x_min + h * (j as f64 - degree as f64))
            .collect();
        Ok(PSpline { k, degree, x_min, x_max, knots })
    }

    /// Number of basis functions.
    pub fn k(&self) -> usize {
        self.k
    }

    /// Supported covariate range (outside it, evaluation errors).
    pub fn range(&self) -> (f64, f64) {
        (self.x_min, self.x_max)
    }

    /// Evaluates the basis at `x` (n × k). Values outside the training
    /// range are an error: the spline carries no information there.
    pub fn basis(&self, x: &[f64]) -> Result<Array2<f64>> {
        let span = self.x_max - self.x_min;
        let slack = 1e-8 * span;
        for &xi in x {
            if !xi.is_finite() || xi < self.x_min - slack || xi > self.x_max + slack {
                return Err(Error::Design(format!(
                    "covariate value {xi} outside the basis support [{}, {}]",
                    self.x_min, self.x_max
                )));
            }
        }
        let degree = self.degree;
        let m = self.k - degree;
        let h = span / m as f64;
        let n = x.len();
        let n_intervals = self.knots.len() - 1;
        // degree-0 indicators; the last interior interval is right-closed so
        // x = max(x) belongs to the basis
        let mut b = Array2::zeros((n, n_intervals));
        for (i, &xi) in x.iter().enumerate() {
            let xi = xi.clamp(self.x_min, self.x_max);
            let j = (((xi - self.x_min) / h).floor() as usize).min(m - 1) + degree;
            b[[i, j]] = 1.0;
        }
        // Cox–de Boor recursion up to the target degree
        for d in 1..=degree {
            let cols = n_intervals - d;
            let mut next = Array2::zeros((n, cols));
            for j in 0..cols {
                let t_j = self.knots[j];
                let t_jd = self.knots[j + d];
                let t_j1 = self.knots[j + 1];
                let t_jd1 = self.knots[j + d + 1];
                for i in 0..n {
                    let xi = x[i].clamp(self.x_min, self.x_max);
                    next[[i, j]] = (xi - t_j) / (t_jd - t_j) * b[[i, j]]
                        + (t_jd1 - xi) / (t_jd1 - t_j1) * b[[i, j + 1]];
                }
            }
            b = next;
        }
        debug_assert_eq!(b.ncols(), self.k);
        Ok(b)
    }
}

/// The difference penalty `K = DᵀD`, where `D` is the `order`-th order
/// difference matrix of shape `(k − order) × k`.
pub fn difference_penalty(k: usize, order: usize) -> Array2<f64> {
    assert!(order < k, "penalty order {order} must be below the basis dimension {k}");
    let mut d = Array2::<f64>::eye(k);
    for _ in 0..order {
        let rows = d.nrows() - 1;
        let mut next = Array2::zeros((rows, k));
        for i in 0..rows {
            for j in 0..k {
                next[[i, j]] = d[[i + 1, j]] - d[[i, j]];
            }
        }
        d = next;
    }
    d.t().dot(&d)
}

/// Builds both the basis matrix and the difference penalty for a smooth
/// covariate in one call.
pub fn pspline_basis(
    x: &[f64],
    k: usize,
    degree: usize,
    penalty_order: usize,
) -> Result<(Array2<f64>, Array2<f64>)> {
    if penalty_order >= k {
        return Err(Error::Design(format!(
            "penalty order {penalty_order} must be below the basis dimension {k}"
        )));
    }
    let spline = PSpline::new(x, k, degree)?;
    let basis = spline.basis(x)?;
    Ok((basis, difference_penalty(k, penalty_order)))
}

/// Applies the sum-to-zero constraint `1ᵀXβ = 0` by reparameterization:
/// returns `(Xc, Kc, Z)` with `Xc = XZ`, `Kc = ZᵀKZ`, where the columns of
/// `Z` span the nullspace of the column-sum vector. `Xc` has one column
/// fewer than `X` and all its columns sum to zero.
pub fn center_block(
    x: ArrayView2<f64>,
    k: ArrayView2<f64>,
) -> Result<(Array2<f64>, Array2<f64>, Array2<f64>)> {
    let colsums = x.sum_axis(ndarray::Axis(0));
    let norm = colsums.dot(&colsums).sqrt();
    if norm < 1e-12 {
        return Err(Error::Design(
            "cannot center a block whose fitted values already sum to zero".into(),
        ));
    }
    let z = constraint_nullspace(colsums.view())?;
    let xc = x.dot(&z);
    let kc = z.t().dot(&k.dot(&z));
    Ok((xc, kc, z))
}

// ---------------------------------------------------------------------
// design blocks
// ---------------------------------------------------------------------

/// How one parametric design column is computed from a data table, so the
/// same column can be rebuilt for prediction data.
#[derive(Debug, Clone, PartialEq)]
pub enum ColumnSource {
    Intercept,
    /// A numeric column taken as-is.
    Value { var: String },
    /// A treatment-coded indicator: 1 where `var == level`.
    Dummy { var: String, level: String },
    /// A raw polynomial power of a numeric column.
    Power { var: String, power: usize },
    /// An `I(expr)` arithmetic transform.
    Transform { spec: TermSpec },
}

impl ColumnSource {
    /// Evaluates this column over a table. All referenced values must be
    /// present: prediction tables may not contain missing entries.
    pub fn eval(&self, table: &DataTable) -> Result<Array1<f64>> {
        let n = table.n_rows();
        match self {
            ColumnSource::Intercept => Ok(Array1::ones(n)),
            ColumnSource::Value { var } => {
                let values = table.numeric(var)?;
                if values.iter().any(|v| !v.is_finite()) {
                    return Err(Error::Design(format!(
                        "column `{var}` contains missing values"
                    )));
                }
                Ok(Array1::from_iter(values.iter().copied()))
            }
            ColumnSource::Dummy { var, level } => {
                let col = table
                    .column(var)
                    .ok_or_else(|| Error::Design(format!("unknown column `{var}`")))?;
                match col {
                    Column::Categorical(values) => {
                        let mut out = Array1::zeros(n);
                        for (i, v) in values.iter().enumerate() {
                            match v {
                                Some(value) => {
                                    if value == level {
                                        out[i] = 1.0;
                                    }
                                }
                                None => {
                                    return Err(Error::Design(format!(
                                        "column `{var}` contains missing values"
                                    )))
                                }
                            }
                        }
                        Ok(out)
                    }
                    Column::Numeric(_) => Err(Error::Design(format!(
                        "column `{var}` was categorical during fitting but is numeric here"
                    ))),
                }
            }
            ColumnSource::Power { var, power } => {
                let values = table.numeric(var)?;
                if values.iter().any(|v| !v.is_finite()) {
                    return Err(Error::Design(format!(
                        "column `{var}` contains missing values"
                    )));
                }
                Ok(Array1::from_iter(values.iter().map(|v| v.powi(*power as i32))))
            }
            ColumnSource::Transform { spec } => {
                let values = eval_transform(spec, table)?;
                Ok(Array1::from_vec(values))
            }
        }
    }
}

/// All non-smooth columns of one distribution parameter: intercept first,
/// then the remaining terms in written order.
#[derive(Debug, Clone)]
pub struct ParametricBlock {
    pub colnames: Vec<String>,
    pub sources: Vec<ColumnSource>,
    /// Training design matrix (n × p).
    pub x: Array2<f64>,
    /// Training levels of every categorical column used by this block,
    /// for validating prediction data.
    pub cat_levels: BTreeMap<String, Vec<String>>,
}

impl ParametricBlock {
    pub fn n_coef(&self) -> usize {
        self.colnames.len()
    }

    /// Rebuilds the design matrix over new data, validating that
    /// categorical columns carry no unseen levels.
    pub fn design_for(&self, table: &DataTable) -> Result<Array2<f64>> {
        for (var, levels) in &self.cat_levels {
            let col = table
                .column(var)
                .ok_or_else(|| Error::Design(format!("unknown column `{var}`")))?;
            match col {
                Column::Categorical(values) => {
                    for v in values.iter().flatten() {
                        if !levels.contains(v) {
                            return Err(Error::Design(format!(
                                "unseen level `{v}` in categorical column `{var}` \
                                 (training levels: {})",
                                levels.join(", ")
                            )));
                        }
                    }
                }
                Column::Numeric(_) => {
                    return Err(Error::Design(format!(
                        "column `{var}` was categorical during fitting but is numeric here"
                    )))
                }
            }
        }
        let n = table.n_rows();
        let mut x = Array2::zeros((n, self.sources.len()));
        for (j, source) in self.sources.iter().enumerate() {
            x.column_mut(j).assign(&source.eval(table)?);
        }
        Ok(x)
    }
}

/// One penalized smooth term of one distribution parameter, already
/// centered to sum-to-zero columns.
#[derive(Debug, Clone)]
pub struct SmoothBlock {
    /// Display label, e.g. `s(times)`.
    pub label: String,
    pub var: String,
    pub spline: PSpline,
    /// Centering reparameterization (k × (k−1)).
    pub z: Array2<f64>,
    /// Centered training basis (n × (k−1)).
    pub x: Array2<f64>,
    /// Centered difference penalty ((k−1) × (k−1)), symmetric PSD.
    pub penalty: Array2<f64>,
    /// Numeric rank of the centered penalty.
    pub penalty_rank: usize,
    /// Starting smoothing variance.
    pub tau2_init: f64,
    /// When set, engines keep the smoothing variance at `tau2_init`
    /// instead of optimizing or sampling it.
    pub tau2_fixed: bool,
}

impl SmoothBlock {
    pub fn n_coef(&self) -> usize {
        self.x.ncols()
    }

    /// Centered basis at new covariate values (errors outside the training
    /// range).
    pub fn design_for(&self, table: &DataTable) -> Result<Array2<f64>> {
        let values = table.numeric(&self.var)?;
        Ok(self.spline.basis(values)?.dot(&self.z))
    }
}

/// A special (nonlinear-in-coefficients) term; engines drive it through
/// its hooks only.
#[derive(Debug, Clone)]
pub struct SpecialBlock {
    /// Display label, e.g. `s2(time)`.
    pub label: String,
    pub var: String,
    pub hooks: Arc<dyn SpecialHooks>,
}

impl SpecialBlock {
    pub fn n_coef(&self) -> usize {
        self.hooks.n_params()
    }
}

/// A penalized or special model term.
#[derive(Debug, Clone)]
pub enum TermBlock {
    Smooth(SmoothBlock),
    Special(SpecialBlock),
}

impl TermBlock {
    pub fn label(&self) -> &str {
        match self {
            TermBlock::Smooth(b) => &b.label,
            TermBlock::Special(b) => &b.label,
        }
    }

    pub fn n_coef(&self) -> usize {
        match self {
            TermBlock::Smooth(b) => b.n_coef(),
            TermBlock::Special(b) => b.n_coef(),
        }
    }

    /// True when the term carries a smoothing variance to estimate/sample.
    pub fn has_tau2(&self) -> bool {
        matches!(self, TermBlock::Smooth(_))
    }
}

// ---------------------------------------------------------------------
// model frame
// ---------------------------------------------------------------------

/// Blocks of one distribution parameter.
#[derive(Debug, Clone)]
pub struct ParamFrame {
    /// Parameter name, e.g. `mu`.
    pub name: String,
    pub parametric: ParametricBlock,
    pub terms: Vec<TermBlock>,
}

impl ParamFrame {
    pub fn n_coef(&self) -> usize {
        self.parametric.n_coef() + self.terms.iter().map(|t| t.n_coef()).sum::<usize>()
    }
}

/// Which block a coefficient belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BlockRef {
    Parametric,
    Term(usize),
}

/// Position of one named coefficient: (parameter, block, index in block).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CoefRef {
    pub param: usize,
    pub block: BlockRef,
    pub index: usize,
}

/// Everything the engines need: encoded response, per-parameter design
/// blocks, and the coefficient-name registry.
#[derive(Debug, Clone)]
pub struct ModelFrame {
    pub family: Family,
    pub formulas: FormulaSet,
    pub y: Array1<f64>,
    pub params: Vec<ParamFrame>,
    /// Rows retained after dropping incomplete cases.
    pub n: usize,
    /// Rows removed by the incomplete-case filter.
    pub n_dropped: usize,
}

impl ModelFrame {
    /// Total coefficient count `p = Σ p_jk` across parameters and blocks.
    pub fn n_coef_total(&self) -> usize {
        self.params.iter().map(|p| p.n_coef()).sum()
    }

    /// All coefficient names in canonical order: per parameter, parametric
    /// columns first (`<param>.p.<column>`), then each term block's
    /// coefficients (`<param>.s.<label>.b<i>`, 1-based).
    pub fn coef_names(&self) -> Vec<String> {
        let mut names = Vec::with_capacity(self.n_coef_total());
        for param in &self.params {
            for col in &param.parametric.colnames {
                names.push(format!("{}.p.{}", param.name, col));
            }
            for term in &param.terms {
                for i in 1..=term.n_coef() {
                    names.push(format!("{}.s.{}.b{}", param.name, term.label(), i));
                }
            }
        }
        names
    }

    /// Smoothing-variance sample-column names, `<param>.s.<label>.tau2<l>`
    /// (one per smooth term; special terms have fixed priors).
    pub fn tau2_names(&self) -> Vec<String> {
        let mut names = Vec::new();
        for param in &self.params {
            for term in &param.terms {
                if term.has_tau2() {
                    names.push(format!("{}.s.{}.tau21", param.name, term.label()));
                }
            }
        }
        names
    }

    /// Looks a coefficient name up in the registry.
    pub fn coef_ref(&self, name: &str) -> Option<CoefRef> {
        for (k, param) in self.params.iter().enumerate() {
            let prefix_p = format!("{}.p.", param.name);
            if let Some(col) = name.strip_prefix(&prefix_p) {
                if let Some(index) = param.parametric.colnames.iter().position(|c| c == col) {
                    return Some(CoefRef { param: k, block: BlockRef::Parametric, index });
                }
            }
            for (j, term) in param.terms.iter().enumerate() {
                let prefix_s = format!("{}.s.{}.b", param.name, term.label());
                if let Some(num) = name.strip_prefix(&prefix_s) {
                    if let Ok(i) = num.parse::<usize>() {
                        if i >= 1 && i <= term.n_coef() {
                            return Some(CoefRef {
                                param: k,
                                block: BlockRef::Term(j),
                                index: i - 1,
                            });
                        }
                    }
                }
            }
        }
        None
    }
}

// ---------------------------------------------------------------------
// frame construction
// ---------------------------------------------------------------------

/// Builds the model frame: validates columns, drops incomplete cases,
/// encodes the response, and assembles per-parameter design blocks.
pub fn build_frame(fs: &FormulaSet, table: &DataTable, family: Family) -> Result<ModelFrame> {
    let mut family = family;

    // collect every referenced column and check it exists
    let mut used: Vec<&str> = vec![fs.response.as_str()];
    for formula in &fs.formulas {
        for term in &formula.terms {
            for var in term.variables() {
                if !used.contains(&var) {
                    used.push(var);
                }
            }
        }
    }
    for var in &used {
        if table.column(var).is_none() {
            return Err(Error::Design(format!("unknown column `{var}`")));
        }
    }

    // incomplete-case filter over the used columns
    let n0 = table.n_rows();
    let keep: Vec<bool> = (0..n0)
        .map(|i| {
            used.iter()
                .all(|var| !table.column(var).unwrap().is_missing(i))
        })
        .collect();
    let n = keep.iter().filter(|&&k| k).count();
    if n == 0 {
        return Err(Error::Design(
            "no rows left after removing incomplete cases".into(),
        ));
    }
    let n_dropped = n0 - n;
    let table = if n_dropped > 0 { table.filter_rows(&keep) } else { table.clone() };

    // response
    let y_col = table.column(&fs.response).unwrap();
    let y = family.encode_response(&fs.response, y_col)?;
    family.validate_response(&y)?;

    // per-parameter blocks
    let mut params = Vec::with_capacity(fs.formulas.len());
    for (k, formula) in fs.formulas.iter().enumerate() {
        let mut colnames = Vec::new();
        let mut sources = Vec::new();
        let mut cat_levels = BTreeMap::new();
        let mut terms = Vec::new();

        for spec in &formula.terms {
            match &spec.kind {
                TermKind::Intercept => {
                    colnames.push("(Intercept)".to_string());
                    sources.push(ColumnSource::Intercept);
                }
                TermKind::Linear { var } => match table.column(var).unwrap() {
                    Column::Numeric(_) => {
                        colnames.push(var.clone());
                        sources.push(ColumnSource::Value { var: var.clone() });
                    }
                    col @ Column::Categorical(_) => {
                        let levels = col.levels();
                        if levels.len() < 2 {
                            return Err(Error::Design(format!(
                                "categorical column `{var}` has fewer than 2 levels"
                            )));
                        }
                        // treatment coding: first level is the reference
                        for level in &levels[1..] {
                            colnames.push(format!("{var}{level}"));
                            sources.push(ColumnSource::Dummy {
                                var: var.clone(),
                                level: level.clone(),
                            });
                        }
                        cat_levels.insert(var.clone(), levels);
                    }
                },
                TermKind::Transform { .. } => {
                    colnames.push(spec.label());
                    sources.push(ColumnSource::Transform { spec: spec.clone() });
                }
                TermKind::Poly { var, degree } => {
                    let label = spec.label();
                    for power in 1..=*degree {
                        colnames.push(format!("{label}{power}"));
                        sources.push(ColumnSource::Power { var: var.clone(), power });
                    }
                }
                TermKind::Smooth { var, k: dim, degree, penalty_order } => {
                    terms.push(TermBlock::Smooth(build_smooth(
                        &table,
                        &spec.label(),
                        var,
                        *dim,
                        *degree,
                        *penalty_order,
                    )?));
                }
                TermKind::Special { var, .. } => {
                    let values = table.numeric(var)?;
                    terms.push(TermBlock::Special(SpecialBlock {
                        label: spec.label(),
                        var: var.clone(),
                        hooks: gompertz_term(Array1::from_iter(values.iter().copied())),
                    }));
                }
            }
        }

        let mut x = Array2::zeros((n, sources.len()));
        for (j, source) in sources.iter().enumerate() {
            x.column_mut(j).assign(&source.eval(&table)?);
        }

        params.push(ParamFrame {
            name: fs.param_names[k].clone(),
            parametric: ParametricBlock { colnames, sources, x, cat_levels },
            terms,
        });
    }

    // plug-in families learn their effective parameter count from the
    // design width
    let p_total: usize = params.iter().map(|p| p.n_coef()).sum();
    family.set_p_effective(p_total);

    let frame = ModelFrame {
        family,
        formulas: fs.clone(),
        y,
        params,
        n,
        n_dropped,
    };

    // the registry must be a bijection onto the coefficients
    let names = frame.coef_names();
    let mut seen = std::collections::BTreeSet::new();
    for name in &names {
        if !seen.insert(name) {
            return Err(Error::Design(format!("coefficient name collision: `{name}`")));
        }
    }
    debug_assert_eq!(names.len(), frame.n_coef_total());

    Ok(frame)
}

fn build_smooth(
    table: &DataTable,
    label: &str,
    var: &str,
    k: usize,
    degree: usize,
    penalty_order: usize,
) -> Result<SmoothBlock> {
    let values = match table.column(var).unwrap() {
        Column::Numeric(v) => v.clone(),
        Column::Categorical(_) => {
            return Err(Error::Design(format!(
                "smooth term `{label}` over the categorical column `{var}`"
            )))
        }
    };
    let mut distinct = values.clone();
    distinct.sort_by(|a, b| a.partial_cmp(b).unwrap());
    distinct.dedup();
    if distinct.len() < k {
        return Err(Error::Design(format!(
            "smooth term `{label}`: {} distinct values of `{var}` cannot support \
             a basis of dimension {k}",
            distinct.len()
        )));
    }
    let spline = PSpline::new(&values, k, degree)?;
    let basis = spline.basis(&values)?;
    let penalty = difference_penalty(k, penalty_order);
    let (xc, kc, z) = center_block(basis.view(), penalty.view())?;
    check_symmetric_psd(kc.view(), 1e-8, &format!("penalty of `{label}`"))?;
    let penalty_rank = psd_rank(kc.view(), 1e-10);
    Ok(SmoothBlock {
        label: label.to_string(),
        var: var.to_string(),
        spline,
        z,
        x: xc,
        penalty: kc,
        penalty_rank,
        tau2_init: DEFAULT_TAU2,
        tau2_fixed: false,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::formula::parse_formula_set;
    use ndarray::array;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha20Rng;

    fn texts(v: &[&str]) -> Vec<String> {
        v.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn bspline_partition_of_unity_across_dimensions() {
        let mut rng = ChaCha20Rng::seed_from_u64(21);
        let x: Vec<f64> = (0..200).map(|_| rng.gen::<f64>() * 7.0 - 2.0).collect();
        for degree in [1usize, 2, 3] {
            for k in (degree + 1).max(4)..=30 {
                let spline = PSpline::new(&x, k, degree).unwrap();
                let b = spline.basis(&x).unwrap();
                for i in 0..x.len() {
                    let row_sum: f64 = b.row(i).sum();
                    assert!(
                        (row_sum - 1.0).abs() < 1e-10,
                        "k={k} degree={degree} row {i}: sum {row_sum}"
                    );
                }
            }
        }
    }

    #[test]
    fn bspline_covers_the_boundaries() {
        let x = vec![0.0, 0.25, 1.0];
        let spline = PSpline::new(&x, 8, 3).unwrap();
        let b = spline.basis(&[0.0, 1.0]).unwrap();
        assert!((b.row(0).sum() - 1.0).abs() < 1e-12);
        assert!((b.row(1).sum() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn bspline_rejects_out_of_range_points() {
        let x = vec![0.0, 1.0, 2.0, 3.0];
        let spline = PSpline::new(&x, 6, 3).unwrap();
        assert!(spline.basis(&[1.5]).is_ok());
        assert!(spline.basis(&[-0.1]).is_err());
        assert!(spline.basis(&[3.1]).is_err());
    }

    #[test]
    fn bspline_dimension_and_degeneracy_errors() {
        assert!(PSpline::new(&[0.0, 1.0], 3, 3).is_err()); // k < degree + 1
        assert!(PSpline::new(&[2.0, 2.0, 2.0], 5, 3).is_err()); // all equal
    }

    #[test]
    fn difference_penalty_rank_and_nullspace() {
        let k = 10;
        let pen = difference_penalty(k, 2);
        // second differences annihilate constants and index-linear vectors
        let ones = Array1::ones(k);
        let linear = Array1::from_iter((0..k).map(|j| 2.0 + 0.7 * j as f64));
        assert!(pen.dot(&ones).iter().all(|v| v.abs() < 1e-12));
        assert!(pen.dot(&linear).iter().all(|v| v.abs() < 1e-12));
        assert_eq!(psd_rank(pen.view(), 1e-10), k - 2);
        // first-order penalty keeps only constants in the nullspace
        let pen1 = difference_penalty(k, 1);
        assert_eq!(psd_rank(pen1.view(), 1e-10), k - 1);
        assert!(pen1.dot(&ones).iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn pspline_basis_op_combines_basis_and_penalty() {
        let x: Vec<f64> = (0..50).map(|i| i as f64 / 7.0).collect();
        let (basis, pen) = pspline_basis(&x, 12, 3, 2).unwrap();
        assert_eq!(basis.shape(), [50, 12]);
        assert_eq!(pen.shape(), [12, 12]);
        assert!(pspline_basis(&x, 4, 3, 4).is_err()); // order ≥ k
    }

    #[test]
    fn centered_block_columns_sum_to_zero() {
        let x: Vec<f64> = (0..60).map(|i| (i as f64).sin() * 2.0 + i as f64 / 10.0).collect();
        let (basis, pen) = pspline_basis(&x, 9, 3, 2).unwrap();
        let (xc, kc, z) = center_block(basis.view(), pen.view()).unwrap();
        assert_eq!(xc.ncols(), 8);
        assert_eq!(z.shape(), [9, 8]);
        for j in 0..xc.ncols() {
            assert!(xc.column(j).sum().abs() < 1e-8 * 60.0, "column {j}");
        }
        // any coefficient vector gives zero-mean fitted values
        let beta = Array1::from_iter((0..8).map(|i| (i as f64 - 3.0) / 2.0));
        let fit = xc.dot(&beta);
        assert!(fit.sum().abs() < 1e-8 * 60.0);
        check_symmetric_psd(kc.view(), 1e-8, "centered penalty").unwrap();
    }

    /// Gram–Schmidt orthonormal basis of the column span.
    fn orthonormal_columns(m: &Array2<f64>) -> Array2<f64> {
        let mut cols: Vec<Array1<f64>> = Vec::new();
        for j in 0..m.ncols() {
            let mut v = m.column(j).to_owned();
            for q in &cols {
                let proj = q.dot(&v);
                v = &v - &(q * proj);
            }
            let norm = v.dot(&v).sqrt();
            if norm > 1e-10 {
                cols.push(v / norm);
            }
        }
        let mut out = Array2::zeros((m.nrows(), cols.len()));
        for (j, c) in cols.iter().enumerate() {
            out.column_mut(j).assign(c);
        }
        out
    }

    #[test]
    fn centering_spans_the_constrained_fit_space() {
        // independent construction of span{Xβ : 1ᵀXβ = 0}: orthonormalize
        // col(X), then remove the direction whose coefficient breaks the
        // constraint, and compare orthogonal projections of random targets
        let mut rng = ChaCha20Rng::seed_from_u64(22);
        let x = Array2::from_shape_fn((20, 10), |_| rng.gen::<f64>() * 2.0 - 1.0);
        let k = Array2::<f64>::eye(10);
        let (xc, _, _) = center_block(x.view(), k.view()).unwrap();

        let q = orthonormal_columns(&x);
        let ones = Array1::ones(20);
        let c = q.t().dot(&ones); // constraint in the orthonormal basis
        let cn = c.dot(&c).sqrt();
        // basis of {a : cᵀa = 0} mapped back: Q(I − ccᵀ/‖c‖²), orthonormalized
        let proj = Array2::from_shape_fn((q.ncols(), q.ncols()), |(i, j)| {
            (if i == j { 1.0 } else { 0.0 }) - c[i] * c[j] / (cn * cn)
        });
        let constrained = orthonormal_columns(&q.dot(&proj));
        let qc = orthonormal_columns(&xc);
        assert_eq!(constrained.ncols(), qc.ncols());

        for _ in 0..5 {
            let t = Array1::from_shape_fn(20, |_| rng.gen::<f64>() * 4.0 - 2.0);
            let p1 = constrained.dot(&constrained.t().dot(&t));
            let p2 = qc.dot(&qc.t().dot(&t));
            let gap = (&p1 - &p2).iter().map(|v| v.abs()).fold(0.0f64, f64::max);
            assert!(gap < 1e-8, "projection gap {gap}");
        }
    }

    #[test]
    fn labor_force_frame_matches_expected_columns() {
        let table = DataTable::from_csv_path(concat!(
            env!("CARGO_MANIFEST_DIR"),
            "/data/swisslabor.csv"
        ))
        .unwrap();
        let family = Family::binomial();
        let fs = parse_formula_set(
            &texts(&[
                "participation ~ income + age + education + youngkids + oldkids + foreign + I(age^2)",
            ]),
            &family,
        )
        .unwrap();
        let frame = build_frame(&fs, &table, family).unwrap();
        assert_eq!(
            frame.params[0].parametric.colnames,
            [
                "(Intercept)",
                "income",
                "age",
                "education",
                "youngkids",
                "oldkids",
                "foreignyes",
                "I(age^2)"
            ]
        );
        assert_eq!(frame.n, 872);
        assert_eq!(frame.n_dropped, 0);
        // response: binary 0/1 with `yes` = 1
        assert!(frame.y.iter().all(|&v| v == 0.0 || v == 1.0));
        let share = frame.y.sum() / frame.n as f64;
        assert!((0.3..0.7).contains(&share), "participation share {share}");
        // I(age^2) column really is the square of the age column
        let age_idx = 2;
        let sq_idx = 7;
        let x = &frame.params[0].parametric.x;
        for i in 0..frame.n {
            assert!((x[[i, age_idx]] * x[[i, age_idx]] - x[[i, sq_idx]]).abs() < 1e-12);
        }
    }

    #[test]
    fn intercept_only_parameter_gets_a_ones_column() {
        let table = DataTable::new(vec![(
            "y".into(),
            Column::Numeric(vec![1.0, 2.0, 3.0, 4.0, 5.0]),
        )])
        .unwrap();
        let family = Family::gaussian();
        let fs = parse_formula_set(&texts(&["y ~ 1"]), &family).unwrap();
        let frame = build_frame(&fs, &table, family).unwrap();
        // sigma got an implicit intercept-only formula
        assert_eq!(frame.params.len(), 2);
        for param in &frame.params {
            assert_eq!(param.parametric.colnames, ["(Intercept)"]);
            assert_eq!(param.parametric.x, Array2::<f64>::ones((5, 1)));
        }
    }

    #[test]
    fn incomplete_cases_are_dropped_and_counted() {
        let table = DataTable::new(vec![
            (
                "y".into(),
                Column::Numeric(vec![1.0, 2.0, f64::NAN, 4.0, 5.0, 6.0]),
            ),
            (
                "x".into(),
                Column::Numeric(vec![0.0, f64::NAN, 2.0, 3.0, 4.0, 5.0]),
            ),
            (
                "g".into(),
                Column::Categorical(vec![
                    Some("a".into()),
                    Some("b".into()),
                    Some("a".into()),
                    None,
                    Some("b".into()),
                    Some("a".into()),
                ]),
            ),
            (
                "unused".into(),
                Column::Numeric(vec![f64::NAN; 6]),
            ),
        ])
        .unwrap();
        let family = Family::gaussian();
        let fs = parse_formula_set(&texts(&["y ~ x + g"]), &family).unwrap();
        let frame = build_frame(&fs, &table, family).unwrap();
        // rows 0, 4, 5 survive; missingness in `unused` is ignored
        assert_eq!(frame.n, 3);
        assert_eq!(frame.n_dropped, 3);
        assert_eq!(frame.y.to_vec(), [1.0, 5.0, 6.0]);
        // dummy column for g: reference level `a`
        assert_eq!(
            frame.params[0].parametric.colnames,
            ["(Intercept)", "x", "gb"]
        );
        let x = &frame.params[0].parametric.x;
        assert_eq!(x.column(2).to_vec(), [0.0, 1.0, 0.0]);
    }

    #[test]
    fn frame_error_cases() {
        let table = DataTable::new(vec![
            ("y".into(), Column::Numeric((0..30).map(|i| i as f64).collect())),
            (
                "g".into(),
                Column::Categorical((0..30).map(|i| Some(if i % 2 == 0 { "a" } else { "b" }.into())).collect()),
            ),
            ("x".into(), Column::Numeric((0..30).map(|i| (i % 5) as f64).collect())),
        ])
        .unwrap();
        let family = Family::gaussian();

        let fs = parse_formula_set(&texts(&["y ~ missing_column"]), &family).unwrap();
        let err = build_frame(&fs, &table, family.clone()).unwrap_err();
        assert!(err.to_string().contains("missing_column"));

        let fs = parse_formula_set(&texts(&["y ~ s(g)"]), &family).unwrap();
        let err = build_frame(&fs, &table, family.clone()).unwrap_err();
        assert!(err.to_string().contains("categorical"), "{err}");

        // x has 5 distinct values; default k = 10 cannot be supported
        let fs = parse_formula_set(&texts(&["y ~ s(x)"]), &family).unwrap();
        let err = build_frame(&fs, &table, family.clone()).unwrap_err();
        assert!(err.to_string().contains("distinct"), "{err}");
    }

    fn smooth_frame() -> ModelFrame {
        let n = 80;
        let times: Vec<f64> = (0..n).map(|i| i as f64 * 0.7).collect();
        let y: Vec<f64> = times.iter().map(|t| (t / 8.0).sin()).collect();
        let table = DataTable::new(vec![
            ("accel".into(), Column::Numeric(y)),
            ("times".into(), Column::Numeric(times)),
        ])
        .unwrap();
        let family = Family::gaussian();
        let fs = parse_formula_set(
            &texts(&["accel ~ s(times, k = 20)", "sigma ~ s(times)"]),
            &family,
        )
        .unwrap();
        build_frame(&fs, &table, family).unwrap()
    }

    #[test]
    fn smooth_blocks_are_centered_with_correct_penalty_rank() {
        let frame = smooth_frame();
        for (param, expected_k) in frame.params.iter().zip([20usize, 10]) {
            assert_eq!(param.terms.len(), 1);
            let TermBlock::Smooth(block) = &param.terms[0] else {
                panic!("expected a smooth block");
            };
            assert_eq!(block.n_coef(), expected_k - 1);
            for j in 0..block.x.ncols() {
                assert!(block.x.column(j).sum().abs() < 1e-8 * frame.n as f64);
            }
            // order-2 penalty: rank k−2 survives centering
            assert_eq!(block.penalty_rank, expected_k - 2);
            assert_eq!(block.tau2_init, DEFAULT_TAU2);
        }
    }

    #[test]
    fn coefficient_names_and_registry_are_a_bijection() {
        let frame = smooth_frame();
        let names = frame.coef_names();
        assert_eq!(names.len(), frame.n_coef_total());
        assert_eq!(names.len(), 1 + 19 + 1 + 9);
        assert_eq!(names[0], "mu.p.(Intercept)");
        assert_eq!(names[1], "mu.s.s(times).b1");
        assert_eq!(names[19], "mu.s.s(times).b19");
        assert_eq!(names[20], "sigma.p.(Intercept)");
        assert_eq!(names[21], "sigma.s.s(times).b1");
        let unique: std::collections::BTreeSet<_> = names.iter().collect();
        assert_eq!(unique.len(), names.len());
        // round trip through the registry
        for (pos, name) in names.iter().enumerate() {
            let r = frame.coef_ref(name).unwrap_or_else(|| panic!("unresolved `{name}`"));
            // recompute the flat position from the reference
            let mut flat = 0;
            for (k, param) in frame.params.iter().enumerate() {
                if k < r.param {
                    flat += param.n_coef();
                }
            }
            let param = &frame.params[r.param];
            flat += match r.block {
                BlockRef::Parametric => r.index,
                BlockRef::Term(j) => {
                    param.parametric.n_coef()
                        + param.terms[..j].iter().map(|t| t.n_coef()).sum::<usize>()
                        + r.index
                }
            };
            assert_eq!(flat, pos, "name `{name}`");
        }
        assert!(frame.coef_ref("mu.s.s(times).b0").is_none());
        assert!(frame.coef_ref("nonsense").is_none());
        // smoothing-variance sample columns
        assert_eq!(
            frame.tau2_names(),
            ["mu.s.s(times).tau21", "sigma.s.s(times).tau21"]
        );
    }

    #[test]
    fn frame_construction_is_deterministic() {
        let a = smooth_frame();
        let b = smooth_frame();
        assert_eq!(a.y, b.y);
        for (pa, pb) in a.params.iter().zip(b.params.iter()) {
            assert_eq!(pa.parametric.x, pb.parametric.x);
            for (ta, tb) in pa.terms.iter().zip(pb.terms.iter()) {
                let (TermBlock::Smooth(sa), TermBlock::Smooth(sb)) = (ta, tb) else {
                    continue;
                };
                assert_eq!(sa.x, sb.x);
                assert_eq!(sa.penalty, sb.penalty);
            }
        }
    }

    #[test]
    fn design_for_reproduces_training_matrices() {
        let frame = smooth_frame();
        let n = 80;
        let times: Vec<f64> = (0..n).map(|i| i as f64 * 0.7).collect();
        let y: Vec<f64> = times.iter().map(|t| (t / 8.0).sin()).collect();
        let table = DataTable::new(vec![
            ("accel".into(), Column::Numeric(y)),
            ("times".into(), Column::Numeric(times)),
        ])
        .unwrap();
        let param = &frame.params[0];
        let xp = param.parametric.design_for(&table).unwrap();
        assert_eq!(xp, param.parametric.x);
        let TermBlock::Smooth(block) = &param.terms[0] else { panic!() };
        let xs = block.design_for(&table).unwrap();
        let gap = (&xs - &block.x).iter().map(|v| v.abs()).fold(0.0f64, f64::max);
        assert!(gap < 1e-12);
        // out-of-range prediction data is a hard error
        let bad = DataTable::new(vec![("times".into(), Column::Numeric(vec![1000.0]))]).unwrap();
        assert!(block.design_for(&bad).is_err());
    }

    #[test]
    fn unseen_categorical_level_is_rejected() {
        let table = DataTable::new(vec![
            ("y".into(), Column::Numeric(vec![1.0, 2.0, 3.0, 4.0])),
            (
                "g".into(),
                Column::Categorical(vec![
                    Some("a".into()),
                    Some("b".into()),
                    Some("a".into()),
                    Some("b".into()),
                ]),
            ),
        ])
        .unwrap();
        let family = Family::gaussian();
        let fs = parse_formula_set(&texts(&["y ~ g"]), &family).unwrap();
        let frame = build_frame(&fs, &table, family).unwrap();
        let new = DataTable::new(vec![(
            "g".into(),
            Column::Categorical(vec![Some("c".into())]),
        )])
        .unwrap();
        let err = frame.params[0].parametric.design_for(&new).unwrap_err();
        assert!(err.to_string().contains("unseen level"), "{err}");
    }

    #[test]
    fn special_terms_become_hook_blocks() {
        let table = DataTable::new(vec![
            ("y".into(), Column::Numeric((0..30).map(|i| i as f64 / 10.0).collect())),
            ("time".into(), Column::Numeric((0..30).map(|i| i as f64).collect())),
        ])
        .unwrap();
        let family = Family::gaussian();
        let fs = parse_formula_set(&texts(&["y ~ s2(time, bs = \"gc\")"]), &family).unwrap();
        let frame = build_frame(&fs, &table, family).unwrap();
        let TermBlock::Special(block) = &frame.params[0].terms[0] else {
            panic!("expected a special block");
        };
        assert_eq!(block.label, "s2(time)");
        assert_eq!(block.n_coef(), 3);
        assert!(!frame.params[0].terms[0].has_tau2());
        let names = frame.coef_names();
        assert!(names.contains(&"mu.s.s2(time).b1".to_string()));
        assert!(names.contains(&"mu.s.s2(time).b3".to_string()));
        // fixed-prior special terms contribute no tau2 sample columns
        assert!(frame.tau2_names().is_empty());
    }

    #[test]
    fn poly_expands_to_raw_powers() {
        let table = DataTable::new(vec![
            ("y".into(), Column::Numeric(vec![0.0, 1.0, 2.0, 3.0])),
            ("x2".into(), Column::Numeric(vec![1.0, 2.0, 3.0, 4.0])),
        ])
        .unwrap();
        let family = Family::lm(0);
        let fs = parse_formula_set(&texts(&["y ~ poly(x2, 3)"]), &family).unwrap();
        let frame = build_frame(&fs, &table, family).unwrap();
        assert_eq!(
            frame.params[0].parametric.colnames,
            ["(Intercept)", "poly(x2, 3)1", "poly(x2, 3)2", "poly(x2, 3)3"]
        );
        let x = &frame.params[0].parametric.x;
        assert_eq!(x.column(2).to_vec(), [1.0, 4.0, 9.0, 16.0]);
        assert_eq!(x.column(3).to_vec(), [1.0, 8.0, 27.0, 64.0]);
        // the plug-in family learned its effective parameter count
        assert_eq!(frame.family.p_effective(), 4);
    }

    #[test]
    fn no_rows_left_is_an_error() {
        let table = DataTable::new(vec![
            ("y".into(), Column::Numeric(vec![f64::NAN, f64::NAN])),
            ("x".into(), Column::Numeric(vec![1.0, 2.0])),
        ])
        .unwrap();
        let family = Family::gaussian();
        let fs = parse_formula_set(&texts(&["y ~ x"]), &family).unwrap();
        assert!(build_frame(&fs, &table, family).is_err());
    }

    #[test]
    fn gaussian_response_must_be_numeric() {
        let table = DataTable::new(vec![
            (
                "y".into(),
                Column::Categorical(vec![Some("a".into()), Some("b".into())]),
            ),
            ("x".into(), Column::Numeric(vec![1.0, 2.0])),
        ])
        .unwrap();
        let family = Family::gaussian();
        let fs = parse_formula_set(&texts(&["y ~ x"]), &family).unwrap();
        let err = build_frame(&fs, &table, family).unwrap_err();
        assert!(err.to_string().contains("numeric response"), "{err}");
    }

    #[test]
    fn smooth_design_matches_direct_basis_evaluation() {
        // the stored centered basis equals basis(x)·Z computed by hand
        let frame = smooth_frame();
        let TermBlock::Smooth(block) = &frame.params[0].terms[0] else { panic!() };
        let times: Vec<f64> = (0..80).map(|i| i as f64 * 0.7).collect();
        let raw = block.spline.basis(&times).unwrap();
        let by_hand = raw.dot(&block.z);
        let gap = (&by_hand - &block.x).iter().map(|v| v.abs()).fold(0.0f64, f64::max);
        assert!(gap < 1e-12);
        assert_eq!(array![0.0].len(), 1);
    }
}
