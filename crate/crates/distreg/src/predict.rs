//! Posterior prediction on new data.
//!
//! [`predict`] rebuilds each distribution parameter's additive predictor
//! over a new table — for the mode fit, or once per retained draw of a
//! chain — optionally restricted to named terms, then reduces over draws
//! with a summary functional. [`prob_exceed`] turns count-model
//! predictions into exceedance probabilities, and [`effect_curve`] exports
//! a smooth term's pointwise posterior band over its covariate range.

use ndarray::{Array1, Array2};

use crate::data::DataTable;
use crate::design::{ModelFrame, ParamFrame, TermBlock};
use crate::diagnostics::quantile_type7;
use crate::engine::FitState;
use crate::error::{Error, Result};
use crate::sampler::{RowDecoder, SampleMatrix};

/// What scale a prediction is on.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PredictTarget {
    /// The additive predictor η.
    Link,
    /// The distribution parameter h⁻¹(η).
    Parameter,
    /// Selected terms' contributions on the link scale.
    Term,
}

/// How per-draw predictions are reduced.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Functional {
    /// Mean over draws — one column.
    Mean,
    /// Empirical 2.5% quantile, mean, 97.5% quantile — three columns.
    C95,
    /// No reduction — one column per draw.
    Identity,
}

/// Coefficients to predict from: a mode fit or a whole chain.
#[derive(Debug, Clone, Copy)]
pub enum PredictSource<'a> {
    Mode(&'a FitState),
    Samples(&'a SampleMatrix),
}

/// A prediction request.
///
/// `terms` selects blocks by label: smooth/special labels (`s(x)`) or
/// parametric column names (`x1`, `gendermale`); `None` selects everything.
/// The intercept is controlled separately. `Parameter`-scale predictions
/// require the full predictor (no term subset, intercept included),
/// because an inverse link of a partial predictor is not a parameter.
#[derive(Debug, Clone)]
pub struct PredictionRequest {
    pub target: PredictTarget,
    pub terms: Option<Vec<String>>,
    pub include_intercept: bool,
    pub functional: Functional,
}

impl Default for PredictionRequest {
    fn default() -> Self {
        PredictionRequest {
            target: PredictTarget::Parameter,
            terms: None,
            include_intercept: true,
            functional: Functional::Mean,
        }
    }
}

/// One distribution parameter's prediction columns.
#[derive(Debug, Clone)]
pub struct ParamPrediction {
    /// Parameter name, e.g. `mu`.
    pub param: String,
    /// Column labels: `mean`, or `q2.5`/`mean`/`q97.5`, or `s1..sS`.
    pub colnames: Vec<String>,
    /// One row per new observation.
    pub data: Array2<f64>,
}

/// The evaluable pieces of one parameter's predictor over a new table.
struct NewDesign {
    /// Parametric design restricted to the selected columns, with the
    /// selected training-coefficient indices.
    parametric: Option<(Array2<f64>, Vec<usize>)>,
    /// Per selected term: index in `param.terms` plus its evaluation.
    terms: Vec<(usize, TermDesign)>,
}

enum TermDesign {
    /// Centered smooth basis over the new table.
    Linear(Array2<f64>),
    /// New covariate values for a special term's `fitted_at`.
    Special(Array1<f64>),
}

fn build_new_design(
    param: &ParamFrame,
    newdata: &DataTable,
    terms: &Option<Vec<String>>,
    include_intercept: bool,
) -> Result<NewDesign> {
    let wants = |label: &str| -> bool {
        match terms {
            None => true,
            Some(list) => list.iter().any(|t| t == label),
        }
    };

    let mut sel: Vec<usize> = Vec::new();
    for (j, name) in param.parametric.colnames.iter().enumerate() {
        let is_intercept = name == "(Intercept)";
        if (is_intercept && include_intercept) || (!is_intercept && wants(name)) {
            sel.push(j);
        }
    }
    let parametric = if sel.is_empty() {
        None
    } else {
        let full = param.parametric.design_for(newdata)?;
        let mut x = Array2::zeros((full.nrows(), sel.len()));
        for (c, &j) in sel.iter().enumerate() {
            x.column_mut(c).assign(&full.column(j));
        }
        Some((x, sel))
    };

    let mut term_designs = Vec::new();
    for (j, term) in param.terms.iter().enumerate() {
        if !wants(term.label()) {
            continue;
        }
        let design = match term {
            TermBlock::Smooth(b) => TermDesign::Linear(b.design_for(newdata)?),
            TermBlock::Special(b) => {
                let values = newdata.numeric(&b.var)?;
                TermDesign::Special(Array1::from_vec(values.to_vec()))
            }
        };
        term_designs.push((j, design));
    }
    Ok(NewDesign { parametric, terms: term_designs })
}

impl NewDesign {
    /// η contribution over the new rows for one coefficient configuration.
    fn eval(
        &self,
        param: &ParamFrame,
        n_new: usize,
        parametric_beta: &Array1<f64>,
        term_beta: &dyn Fn(usize) -> Array1<f64>,
    ) -> Array1<f64> {
        let mut eta = Array1::zeros(n_new);
        if let Some((x, sel)) = &self.parametric {
            let beta_sel: Array1<f64> = sel.iter().map(|&j| parametric_beta[j]).collect();
            eta += &x.dot(&beta_sel);
        }
        for (j, design) in &self.terms {
            let beta = term_beta(*j);
            match design {
                TermDesign::Linear(x) => eta += &x.dot(&beta),
                TermDesign::Special(x_new) => {
                    let TermBlock::Special(b) = &param.terms[*j] else { unreachable!() };
                    eta += &b.hooks.fitted_at(x_new, &beta);
                }
            }
        }
        eta
    }
}

/// Validates the request against the frame: known term labels and the
/// full-predictor restriction on parameter-scale predictions.
fn validate_request(frame: &ModelFrame, req: &PredictionRequest) -> Result<()> {
    if let Some(list) = &req.terms {
        for label in list {
            let known = frame.params.iter().any(|p| {
                p.parametric
                    .colnames
                    .iter()
                    .any(|c| c == label && c != "(Intercept)")
                    || p.terms.iter().any(|t| t.label() == label)
            });
            if !known {
                return Err(Error::Predict(format!(
                    "unknown term `{label}`; no parameter has a term or column with that label"
                )));
            }
        }
        if req.target == PredictTarget::Parameter {
            return Err(Error::Predict(
                "parameter-scale prediction needs the full predictor; drop the term \
                 subset or predict on the link scale"
                    .into(),
            ));
        }
    }
    if req.target == PredictTarget::Parameter && !req.include_intercept {
        return Err(Error::Predict(
            "parameter-scale prediction needs the full predictor; keep the intercept \
             or predict on the link scale"
                .into(),
        ));
    }
    Ok(())
}

/// Predicts every distribution parameter over `newdata`.
///
/// For each retained draw (or once for a mode fit) the selected blocks'
/// contributions are rebuilt over the new rows; `Parameter` targets map
/// the full predictor through the inverse link; the functional reduces
/// over draws. Intervals are pointwise.
pub fn predict(
    source: PredictSource,
    frame: &ModelFrame,
    newdata: &DataTable,
    req: &PredictionRequest,
) -> Result<Vec<ParamPrediction>> {
    validate_request(frame, req)?;
    let n_new = newdata.n_rows();
    let decoder = match source {
        PredictSource::Samples(s) => Some(RowDecoder::new(frame, &s.colnames)?),
        PredictSource::Mode(_) => None,
    };

    let mut out = Vec::with_capacity(frame.params.len());
    for (k, param) in frame.params.iter().enumerate() {
        let design = build_new_design(param, newdata, &req.terms, req.include_intercept)?;
        let link = frame.family.link(k);
        let apply = |eta: Array1<f64>| -> Array1<f64> {
            match req.target {
                PredictTarget::Parameter => eta.mapv(|v| link.inverse(v)),
                PredictTarget::Link | PredictTarget::Term => eta,
            }
        };

        let draws: Vec<Array1<f64>> = match source {
            PredictSource::Mode(state) => {
                let eta = design.eval(param, n_new, &state.params[k].parametric.beta, &|j| {
                    state.params[k].terms[j].beta.clone()
                });
                vec![apply(eta)]
            }
            PredictSource::Samples(samples) => {
                let decoder = decoder.as_ref().expect("decoder built for sample source");
                samples
                    .data
                    .rows()
                    .into_iter()
                    .map(|row| {
                        let pbeta =
                            decoder.block_beta(row, k, &crate::design::BlockRef::Parametric);
                        let eta = design.eval(param, n_new, &pbeta, &|j| {
                            decoder.block_beta(row, k, &crate::design::BlockRef::Term(j))
                        });
                        apply(eta)
                    })
                    .collect()
            }
        };

        let s = draws.len();
        let (colnames, data) = match req.functional {
            Functional::Identity => {
                let mut data = Array2::zeros((n_new, s));
                for (c, col) in draws.iter().enumerate() {
                    data.column_mut(c).assign(col);
                }
                let colnames = (1..=s).map(|i| format!("s{i}")).collect();
                (colnames, data)
            }
            Functional::Mean => {
                let mut mean = Array1::zeros(n_new);
                for col in &draws {
                    mean += col;
                }
                mean.mapv_inplace(|v| v / s as f64);
                let mut data = Array2::zeros((n_new, 1));
                data.column_mut(0).assign(&mean);
                (vec!["mean".to_string()], data)
            }
            Functional::C95 => {
                let mut data = Array2::zeros((n_new, 3));
                let mut buf = vec![0.0f64; s];
                for i in 0..n_new {
                    for (c, col) in draws.iter().enumerate() {
                        buf[c] = col[i];
                    }
                    let mean = buf.iter().sum::<f64>() / s as f64;
                    buf.sort_by(|a, b| a.partial_cmp(b).unwrap());
                    data[[i, 0]] = quantile_type7(&buf, 0.025);
                    data[[i, 1]] = mean;
                    data[[i, 2]] = quantile_type7(&buf, 0.975);
                }
                (
                    vec!["q2.5".to_string(), "mean".to_string(), "q97.5".to_string()],
                    data,
                )
            }
        };
        out.push(ParamPrediction { param: param.name.clone(), colnames, data });
    }
    Ok(out)
}

/// Probability of observing `threshold` or more counts per new row:
/// `1 − F(threshold − 1 | θ̂)` with `θ̂` the (posterior-mean) predicted
/// parameters.
pub fn prob_exceed(
    source: PredictSource,
    frame: &ModelFrame,
    newdata: &DataTable,
    threshold: f64,
) -> Result<Array1<f64>> {
    let req = PredictionRequest {
        target: PredictTarget::Parameter,
        terms: None,
        include_intercept: true,
        functional: Functional::Mean,
    };
    let par = predict(source, frame, newdata, &req)?;
    let n_new = newdata.n_rows();
    let kp = frame.family.n_params();
    let mut out = Array1::zeros(n_new);
    for i in 0..n_new {
        let row: Vec<f64> = (0..kp).map(|k| par[k].data[[i, 0]]).collect();
        out[i] = 1.0 - frame.family.cdf_at(threshold - 1.0, &row)?;
    }
    Ok(out)
}

/// A smooth term's pointwise posterior band over its covariate range.
#[derive(Debug, Clone)]
pub struct EffectCurve {
    pub param: String,
    pub label: String,
    /// Grid over the training covariate range.
    pub x: Array1<f64>,
    /// Pointwise 2.5% quantile of the term contribution.
    pub lo: Array1<f64>,
    pub mean: Array1<f64>,
    /// Pointwise 97.5% quantile.
    pub hi: Array1<f64>,
}

/// Evaluates one smooth term of parameter `k` on an `n_grid`-point grid
/// spanning its training range, reduced to pointwise (2.5%, mean, 97.5%)
/// over the source's draws.
pub fn effect_curve(
    source: PredictSource,
    frame: &ModelFrame,
    k: usize,
    label: &str,
    n_grid: usize,
) -> Result<EffectCurve> {
    let param = frame
        .params
        .get(k)
        .ok_or_else(|| Error::Predict(format!("no distribution parameter {k}")))?;
    let block = param
        .terms
        .iter()
        .find_map(|t| match t {
            TermBlock::Smooth(b) if b.label == label => Some(b),
            _ => None,
        })
        .ok_or_else(|| {
            Error::Predict(format!(
                "parameter `{}` has no smooth term `{label}`",
                param.name
            ))
        })?;
    if n_grid < 2 {
        return Err(Error::Predict("effect curve needs at least 2 grid points".into()));
    }
    let (lo, hi) = block.spline.range();
    let x: Vec<f64> = (0..n_grid)
        .map(|i| lo + (hi - lo) * i as f64 / (n_grid - 1) as f64)
        .collect();
    let var = block.var.clone();
    let table = DataTable::new(vec![(var, crate::data::Column::Numeric(x.clone()))])?;
    let req = PredictionRequest {
        target: PredictTarget::Term,
        terms: Some(vec![label.to_string()]),
        include_intercept: false,
        functional: Functional::C95,
    };
    let pred = predict(source, frame, &table, &req)?;
    let band = &pred[k];
    Ok(EffectCurve {
        param: param.name.clone(),
        label: label.to_string(),
        x: Array1::from_vec(x),
        lo: band.data.column(0).to_owned(),
        mean: band.data.column(1).to_owned(),
        hi: band.data.column(2).to_owned(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Column;
    use crate::design::build_frame;
    use crate::engine::backfit;
    use crate::family::Family;
    use crate::formula::parse_formula_set;
    use crate::sampler::{gmcmc, McmcOptions};
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha20Rng;
    use rand_distr::StandardNormal;

    fn texts(v: &[&str]) -> Vec<String> {
        v.iter().map(|s| s.to_string()).collect()
    }

    fn linear_setup(n: usize, seed: u64) -> (DataTable, ModelFrame, FitState) {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let x1: Vec<f64> = (0..n).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
        let y: Vec<f64> = x1
            .iter()
            .map(|&v| 0.5 + 1.5 * v + 0.4 * rng.sample::<f64, _>(StandardNormal))
            .collect();
        let table = DataTable::new(vec![
            ("y".into(), Column::Numeric(y)),
            ("x1".into(), Column::Numeric(x1)),
        ])
        .unwrap();
        let family = Family::gaussian();
        let fs = parse_formula_set(&texts(&["y ~ x1", "sigma ~ 1"]), &family).unwrap();
        let frame = build_frame(&fs, &table, family).unwrap();
        let state = backfit(&frame, 200, 1e-6).unwrap();
        (table, frame, state)
    }

    #[test]
    fn mode_link_prediction_reproduces_cached_eta() {
        let (table, frame, state) = linear_setup(50, 1);
        let req = PredictionRequest {
            target: PredictTarget::Link,
            terms: None,
            include_intercept: true,
            functional: Functional::Mean,
        };
        let pred = predict(PredictSource::Mode(&state), &frame, &table, &req).unwrap();
        assert_eq!(pred.len(), 2);
        assert_eq!(pred[0].param, "mu");
        for k in 0..2 {
            for i in 0..frame.n {
                assert!(
                    (pred[k].data[[i, 0]] - state.eta[k][i]).abs() < 1e-10,
                    "param {k} row {i}"
                );
            }
        }
    }

    #[test]
    fn mean_functional_commutes_with_linear_predictors() {
        let (table, frame, state) = linear_setup(40, 2);
        let opt = McmcOptions { n_iter: 150, burnin: 50, thin: 1, seed: 3 };
        let run = gmcmc(&frame, &state, &opt).unwrap();
        let before = run.clone();
        let req = PredictionRequest {
            target: PredictTarget::Link,
            terms: None,
            include_intercept: true,
            functional: Functional::Mean,
        };
        let pred = predict(PredictSource::Samples(&run), &frame, &table, &req).unwrap();
        // η is linear in β, so the draw-mean of η is η at the column means
        let b0 = run.mean_of("mu.p.(Intercept)").unwrap();
        let b1 = run.mean_of("mu.p.x1").unwrap();
        let x1 = table.numeric("x1").unwrap();
        for i in 0..frame.n {
            let eta = b0 + b1 * x1[i];
            assert!((pred[0].data[[i, 0]] - eta).abs() < 1e-10);
        }
        // prediction never mutates the chain
        assert_eq!(run, before);
    }

    #[test]
    fn identity_functional_returns_one_column_per_draw() {
        let (table, frame, state) = linear_setup(15, 4);
        let opt = McmcOptions { n_iter: 30, burnin: 11, thin: 1, seed: 5 };
        let run = gmcmc(&frame, &state, &opt).unwrap();
        let req = PredictionRequest {
            target: PredictTarget::Link,
            terms: None,
            include_intercept: true,
            functional: Functional::Identity,
        };
        let pred = predict(PredictSource::Samples(&run), &frame, &table, &req).unwrap();
        assert_eq!(pred[0].data.ncols(), run.nsave());
        assert_eq!(pred[0].colnames[0], "s1");
        assert_eq!(pred[0].colnames.last().unwrap(), &format!("s{}", run.nsave()));
    }

    fn smooth_setup(n: usize, seed: u64) -> (DataTable, ModelFrame, FitState) {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let x: Vec<f64> = (0..n).map(|i| i as f64 / (n - 1) as f64 * 6.0).collect();
        let y: Vec<f64> = x
            .iter()
            .map(|&v| 1.0 + v.sin() + 0.25 * rng.sample::<f64, _>(StandardNormal))
            .collect();
        let table = DataTable::new(vec![
            ("y".into(), Column::Numeric(y)),
            ("x".into(), Column::Numeric(x)),
        ])
        .unwrap();
        let family = Family::gaussian();
        let fs = parse_formula_set(&texts(&["y ~ s(x)", "sigma ~ 1"]), &family).unwrap();
        let frame = build_frame(&fs, &table, family).unwrap();
        let state = backfit(&frame, 200, 1e-5).unwrap();
        (table, frame, state)
    }

    #[test]
    fn term_prediction_of_a_centered_smooth_has_mean_zero() {
        let (table, frame, state) = smooth_setup(80, 6);
        let req = PredictionRequest {
            target: PredictTarget::Term,
            terms: Some(vec!["s(x)".into()]),
            include_intercept: false,
            functional: Functional::Mean,
        };
        let pred = predict(PredictSource::Mode(&state), &frame, &table, &req).unwrap();
        let mean = pred[0].data.column(0).mean().unwrap();
        assert!(mean.abs() < 1e-8, "term mean = {mean}");
        // the sigma predictor has no `s(x)` and no intercept: contribution 0
        assert!(pred[1].data.column(0).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn out_of_range_smooth_covariates_error() {
        let (_table, frame, state) = smooth_setup(40, 7);
        let bad = DataTable::new(vec![("x".into(), Column::Numeric(vec![7.5]))]).unwrap();
        let req = PredictionRequest {
            target: PredictTarget::Link,
            terms: None,
            include_intercept: true,
            functional: Functional::Mean,
        };
        let err = predict(PredictSource::Mode(&state), &frame, &bad, &req).unwrap_err();
        assert!(err.to_string().contains("outside the basis support"), "{err}");
    }

    #[test]
    fn request_validation_catches_bad_inputs() {
        let (table, frame, state) = linear_setup(20, 8);
        let unknown = PredictionRequest {
            target: PredictTarget::Term,
            terms: Some(vec!["nope".into()]),
            include_intercept: false,
            functional: Functional::Mean,
        };
        assert!(predict(PredictSource::Mode(&state), &frame, &table, &unknown).is_err());

        let partial_parameter = PredictionRequest {
            target: PredictTarget::Parameter,
            terms: Some(vec!["x1".into()]),
            include_intercept: true,
            functional: Functional::Mean,
        };
        assert!(predict(PredictSource::Mode(&state), &frame, &table, &partial_parameter).is_err());

        let no_intercept_parameter = PredictionRequest {
            target: PredictTarget::Parameter,
            terms: None,
            include_intercept: false,
            functional: Functional::Mean,
        };
        assert!(
            predict(PredictSource::Mode(&state), &frame, &table, &no_intercept_parameter).is_err()
        );
    }

    fn ztnb_setup(n: usize, seed: u64) -> (DataTable, ModelFrame, FitState) {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let family = Family::ztnbinom();
        let x: Vec<f64> = (0..n).map(|_| rng.gen::<f64>() * 2.0 - 1.0).collect();
        let mu: Array1<f64> = x.iter().map(|&v| (1.0 + 0.6 * v).exp()).collect();
        let theta = Array1::from_elem(n, 2.0);
        let y = family.sample(&[mu, theta], &mut rng).unwrap();
        let table = DataTable::new(vec![
            ("y".into(), Column::Numeric(y.to_vec())),
            ("x".into(), Column::Numeric(x)),
        ])
        .unwrap();
        let fs = parse_formula_set(&texts(&["y ~ x", "theta ~ 1"]), &family).unwrap();
        let frame = build_frame(&fs, &table, family).unwrap();
        let state = backfit(&frame, 200, 1e-5).unwrap();
        (table, frame, state)
    }

    #[test]
    fn parameter_predictions_of_a_count_model_are_positive() {
        let (table, frame, state) = ztnb_setup(300, 9);
        let pred = predict(
            PredictSource::Mode(&state),
            &frame,
            &table,
            &PredictionRequest::default(),
        )
        .unwrap();
        assert_eq!(pred[0].param, "mu");
        assert_eq!(pred[1].param, "theta");
        for p in &pred {
            assert!(p.data.iter().all(|&v| v > 0.0), "{} has nonpositive entries", p.param);
        }
    }

    #[test]
    fn prob_exceed_limits_and_monte_carlo_agreement() {
        let (_table, frame, state) = ztnb_setup(200, 10);
        let newdata = DataTable::new(vec![("x".into(), Column::Numeric(vec![0.2]))]).unwrap();

        // threshold at the support minimum: P(Y >= 1) = 1 for a
        // zero-truncated family
        let p1 = prob_exceed(PredictSource::Mode(&state), &frame, &newdata, 1.0).unwrap();
        assert!((p1[0] - 1.0).abs() < 1e-12);

        // far-tail threshold: probability vanishes
        let p_far = prob_exceed(PredictSource::Mode(&state), &frame, &newdata, 1e6).unwrap();
        assert!(p_far[0] < 1e-12);

        // Monte-Carlo check of P(Y >= 10) at the predicted parameters
        let p10 = prob_exceed(PredictSource::Mode(&state), &frame, &newdata, 10.0).unwrap()[0];
        let pred = predict(
            PredictSource::Mode(&state),
            &frame,
            &newdata,
            &PredictionRequest::default(),
        )
        .unwrap();
        let m = 1_000_000usize;
        let par = vec![
            Array1::from_elem(m, pred[0].data[[0, 0]]),
            Array1::from_elem(m, pred[1].data[[0, 0]]),
        ];
        let mut rng = ChaCha20Rng::seed_from_u64(11);
        let draws = frame.family.sample(&par, &mut rng).unwrap();
        let freq = draws.iter().filter(|&&v| v >= 10.0).count() as f64 / m as f64;
        assert!((p10 - freq).abs() < 0.003, "analytic {p10} vs MC {freq}");
    }

    #[test]
    fn effect_curve_bands_are_ordered_and_span_the_range() {
        let (_table, frame, state) = smooth_setup(90, 12);
        let opt = McmcOptions { n_iter: 200, burnin: 50, thin: 1, seed: 13 };
        let run = gmcmc(&frame, &state, &opt).unwrap();
        let curve = effect_curve(PredictSource::Samples(&run), &frame, 0, "s(x)", 60).unwrap();
        assert_eq!(curve.x.len(), 60);
        assert!((curve.x[0] - 0.0).abs() < 1e-12);
        assert!((curve.x[59] - 6.0).abs() < 1e-12);
        for i in 0..60 {
            assert!(curve.lo[i] <= curve.mean[i] + 1e-12);
            assert!(curve.mean[i] <= curve.hi[i] + 1e-12);
            assert!(curve.lo[i].is_finite() && curve.hi[i].is_finite());
        }
        // the band should bracket the mode-fit term over the grid interior
        assert!(effect_curve(PredictSource::Samples(&run), &frame, 0, "s(z)", 60).is_err());
        assert!(effect_curve(PredictSource::Samples(&run), &frame, 1, "s(x)", 60).is_err());
    }
}
