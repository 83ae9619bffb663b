//! Quality metrics and the study harnesses built on them: replicated
//! simulations, sensitivity sweeps over `n` and `q`, and random-subsample
//! re-fitting.

use log::warn;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::em::{fit, EmConfig, FitResult};
use crate::error::{Error, Result};
use crate::estep::PosteriorMoments;
use crate::linalg::pearson;
use crate::model::{Dataset, Dimensions, Latents, Theta};
use crate::simulate::{derive_seed, simulate_dataset, SimConfig, ThetaMode};

/// Two-sided 95% normal quantile.
const Z_95: f64 = 1.959_963_984_540_054;

#[derive(Debug, Clone, PartialEq)]
pub struct AbsRelDeviation {
    /// `|θ̂*[k] − θ*[k]| / |θ*[k]|`, `None` where the true value is zero.
    pub per_param: Vec<Option<f64>>,
    /// Mean over the defined coordinates.
    pub average: f64,
    pub undefined: usize,
}

pub fn abs_rel_deviation(truth: &Theta, estimate: &Theta) -> Result<AbsRelDeviation> {
    let t = truth.flatten();
    let e = estimate.flatten();
    if t.len() != e.len() {
        return Err(Error::Shape("parameter vectors differ in length".into()));
    }
    let per_param: Vec<Option<f64>> = t
        .iter()
        .zip(e.iter())
        .map(|(&t, &e)| (t != 0.0).then(|| (e - t).abs() / t.abs()))
        .collect();
    let defined: Vec<f64> = per_param.iter().flatten().copied().collect();
    let undefined = per_param.len() - defined.len();
    if defined.is_empty() {
        return Err(Error::Data(
            "every true parameter is zero; relative deviation undefined".into(),
        ));
    }
    if undefined > 0 {
        warn!("{undefined} zero-valued true parameters excluded from the relative deviation");
    }
    Ok(AbsRelDeviation {
        average: defined.iter().sum::<f64>() / defined.len() as f64,
        per_param,
        undefined,
    })
}

/// Squared Pearson correlation between each true latent and its factor
/// score, `g` first. Squaring makes the metric blind to factor reflection.
pub fn factor_sq_correlation(truth: &Latents, moments: &PosteriorMoments) -> Result<Vec<f64>> {
    let n = truth.n();
    if n < 3 || moments.n() != n || moments.p() != truth.f.len() {
        return Err(Error::Shape(format!(
            "need matching latents with at least 3 units (got {n} true, {} estimated)",
            moments.n()
        )));
    }
    std::iter::once((&truth.g, &moments.g_tilde))
        .chain(truth.f.iter().zip(&moments.f_tilde))
        .enumerate()
        .map(|(k, (a, b))| {
            pearson(a.as_slice(), b.as_slice())
                .map(|r| r * r)
                .ok_or_else(|| Error::Data(format!("factor {k} has zero variance")))
        })
        .collect()
}

/// First quartile, median and third quartile (linear interpolation between
/// order statistics).
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Quartiles {
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
}

impl Quartiles {
    pub fn of(values: &[f64]) -> Option<Quartiles> {
        if values.is_empty() {
            return None;
        }
        let mut v = values.to_vec();
        v.sort_by(f64::total_cmp);
        let at = |prob: f64| {
            let pos = prob * (v.len() - 1) as f64;
            let lo = pos.floor() as usize;
            let hi = pos.ceil() as usize;
            v[lo] + (pos - lo as f64) * (v[hi] - v[lo])
        };
        Some(Quartiles {
            q1: at(0.25),
            median: at(0.5),
            q3: at(0.75),
        })
    }
}

/// Mean of a parameter estimate across replicates with a 95%
/// normal-approximation confidence band.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Band {
    pub name: String,
    pub mean: f64,
    /// `None` with fewer than two successful replicates.
    pub half_width: Option<f64>,
}

fn band(name: &str, values: &[f64]) -> Option<Band> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let k = v.len() as f64;
    let mean = v.iter().sum::<f64>() / k;
    let half_width = (v.len() >= 2).then(|| {
        let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (k - 1.0);
        Z_95 * (var / k).sqrt()
    });
    Some(Band {
        name: name.into(),
        mean,
        half_width,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReplicateRecord {
    pub index: usize,
    pub seed: u64,
    pub iterations: Option<usize>,
    pub converged: Option<bool>,
    pub avg_abs_rel_deviation: Option<f64>,
    /// Per-parameter deviations in θ* order.
    #[serde(skip)]
    pub abs_rel_deviations: Vec<Option<f64>>,
    /// `g` first, then each `fᵐ`.
    pub sq_correlations: Vec<f64>,
    /// Values of the tracked parameters, see [`StudySummary::tracked`].
    pub tracked: Vec<f64>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StudySummary {
    pub dims: Dimensions,
    pub replicates: Vec<ReplicateRecord>,
    pub failures: usize,
    /// Quartiles of the per-replicate average absolute relative deviation.
    pub deviation: Option<Quartiles>,
    /// Each parameter's deviation is averaged over the replicates; these are
    /// the quartiles of those averages across parameters.
    pub parameter_deviation: Option<Quartiles>,
    /// Quartiles over every (replicate, factor) squared correlation.
    pub sq_correlation: Option<Quartiles>,
    /// Names of the tracked parameters: `c1..cp`, `sigma2_Y`.
    pub tracked: Vec<String>,
    pub bands: Vec<Band>,
    pub mean_iterations: Option<f64>,
    pub converged_fraction: f64,
}

impl StudySummary {
    /// Fraction of all replicates that converged within `max_iterations`.
    pub fn fraction_converged_within(&self, max_iterations: usize) -> f64 {
        let hits = self
            .replicates
            .iter()
            .filter(|r| r.converged == Some(true) && r.iterations.is_some_and(|i| i <= max_iterations))
            .count();
        hits as f64 / self.replicates.len() as f64
    }

    pub fn band(&self, name: &str) -> Option<&Band> {
        self.bands.iter().find(|b| b.name == name)
    }
}

fn tracked_names(p: usize) -> Vec<String> {
    (1..=p)
        .map(|m| format!("c{m}"))
        .chain(["sigma2_Y".to_string()])
        .collect()
}

fn tracked_values(theta: &Theta) -> Vec<f64> {
    theta.c.iter().copied().chain([theta.sigma2_y]).collect()
}

fn run_replicate(sim: &SimConfig, em: &EmConfig, index: usize) -> ReplicateRecord {
    let seed = derive_seed(sim.seed, index as u64);
    let mut record = ReplicateRecord {
        index,
        seed,
        iterations: None,
        converged: None,
        avg_abs_rel_deviation: None,
        abs_rel_deviations: Vec::new(),
        sq_correlations: Vec::new(),
        tracked: Vec::new(),
        error: None,
    };
    let outcome = (|| -> Result<()> {
        let simulated = simulate_dataset(&SimConfig { seed, ..sim.clone() })?;
        let result = fit(&simulated.data, &EmConfig { seed, ..em.clone() })?;
        record.iterations = Some(result.iterations);
        record.converged = Some(result.converged);
        let deviation = abs_rel_deviation(&simulated.theta, &result.theta)?;
        record.avg_abs_rel_deviation = Some(deviation.average);
        record.abs_rel_deviations = deviation.per_param;
        record.sq_correlations = factor_sq_correlation(&simulated.latents, &result.moments)?;
        record.tracked = tracked_values(&result.theta);
        Ok(())
    })();
    if let Err(e) = outcome {
        warn!("replicate {index} failed: {e}");
        record.error = Some(e.to_string());
    }
    record
}

/// Aggregates replicate records. Every aggregate is computed from sorted
/// values, so the result does not depend on the order of `records`.
pub fn summarize(dims: Dimensions, mut records: Vec<ReplicateRecord>) -> StudySummary {
    records.sort_by_key(|r| r.index);
    let ok: Vec<&ReplicateRecord> = records.iter().filter(|r| r.error.is_none()).collect();
    let deviations: Vec<f64> = ok.iter().filter_map(|r| r.avg_abs_rel_deviation).collect();
    let correlations: Vec<f64> = ok.iter().flat_map(|r| r.sq_correlations.iter().copied()).collect();
    let width = ok.iter().map(|r| r.abs_rel_deviations.len()).max().unwrap_or(0);
    let parameter_means: Vec<f64> = (0..width)
        .filter_map(|k| {
            let values: Vec<f64> = ok
                .iter()
                .filter_map(|r| r.abs_rel_deviations.get(k).copied().flatten())
                .collect();
            (!values.is_empty()).then(|| values.iter().sum::<f64>() / values.len() as f64)
        })
        .collect();
    let tracked = tracked_names(dims.p);
    let bands = tracked
        .iter()
        .enumerate()
        .filter_map(|(k, name)| band(name, &ok.iter().map(|r| r.tracked[k]).collect::<Vec<_>>()))
        .collect();
    let mut iterations: Vec<f64> = ok.iter().filter_map(|r| r.iterations.map(|i| i as f64)).collect();
    iterations.sort_by(f64::total_cmp);
    let converged = ok.iter().filter(|r| r.converged == Some(true)).count();
    StudySummary {
        failures: records.len() - ok.len(),
        deviation: Quartiles::of(&deviations),
        parameter_deviation: Quartiles::of(&parameter_means),
        sq_correlation: Quartiles::of(&correlations),
        tracked,
        bands,
        mean_iterations: (!iterations.is_empty()).then(|| iterations.iter().sum::<f64>() / iterations.len() as f64),
        converged_fraction: converged as f64 / records.len().max(1) as f64,
        dims,
        replicates: records,
    }
}

/// Simulate → fit → score, `replicates` times with seeds derived from
/// `sim.seed`. Replicates run in parallel; results do not depend on
/// scheduling.
pub fn replicate_study(sim: &SimConfig, em: &EmConfig, replicates: usize) -> Result<StudySummary> {
    if replicates == 0 {
        return Err(Error::Config("at least one replicate is required".into()));
    }
    em.validate()?;
    sim.dims.validate()?;
    let records: Vec<ReplicateRecord> = (0..replicates)
        .into_par_iter()
        .map(|i| run_replicate(sim, em, i))
        .collect();
    Ok(summarize(sim.dims.clone(), records))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepAxis {
    /// `n` varies, block width fixed at the base value.
    N,
    /// Block width varies, `n` fixed at the base value.
    Q,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SensitivityCell {
    pub axis: SweepAxis,
    pub n: usize,
    pub q: usize,
    pub summary: StudySummary,
}

/// One study per `n` (with the base block width) and one per block width
/// `q` (with the base `n`). Every observed block gets width `q`.
pub fn sensitivity_sweep(
    n_values: &[usize],
    q_values: &[usize],
    base: &SimConfig,
    em: &EmConfig,
    replicates: usize,
) -> Result<Vec<SensitivityCell>> {
    if n_values.is_empty() || q_values.is_empty() {
        return Err(Error::Config("sensitivity grids must be nonempty".into()));
    }
    if matches!(base.theta_mode, ThetaMode::Custom(_)) {
        return Err(Error::Config(
            "sensitivity sweeps change block widths and need the integer-sequence parameters".into(),
        ));
    }
    let base_q = base.dims.q_y;
    let cells: Vec<(SweepAxis, usize, usize)> = n_values
        .iter()
        .map(|&n| (SweepAxis::N, n, base_q))
        .chain(q_values.iter().map(|&q| (SweepAxis::Q, base.dims.n, q)))
        .collect();
    cells
        .into_iter()
        .enumerate()
        .map(|(k, (axis, n, q))| {
            let dims = Dimensions {
                n,
                q_y: q,
                q_m: vec![q; base.dims.p],
                ..base.dims.clone()
            };
            dims.validate()?;
            let sim = SimConfig {
                dims,
                seed: derive_seed(base.seed, 1_000_000 + k as u64),
                ..base.clone()
            };
            let summary = replicate_study(&sim, em, replicates)?;
            Ok(SensitivityCell { axis, n, q, summary })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ResampleSample {
    pub index: usize,
    /// Sorted unit indices of the subsample.
    pub units: Vec<usize>,
    /// Mean squared difference between subsample and full-data θ*.
    pub param_mse: Option<f64>,
    pub param_corr: Option<f64>,
    /// Averages over the `p+1` factors, restricted to subsample units.
    pub factor_mse: Option<f64>,
    pub factor_corr: Option<f64>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ResampleReport {
    pub k: usize,
    pub sample_size: usize,
    pub full_iterations: usize,
    pub full_converged: bool,
    pub samples: Vec<ResampleSample>,
    pub param_mse: Option<Quartiles>,
    pub param_corr: Option<Quartiles>,
    pub factor_mse: Option<Quartiles>,
    pub factor_corr: Option<Quartiles>,
}

fn mse(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>() / a.len() as f64
}

fn compare_sample(full: &FitResult, sub: &FitResult, units: &[usize]) -> Result<[f64; 4]> {
    let tf = full.theta.flatten();
    let ts = sub.theta.flatten();
    let param_corr =
        pearson(tf.as_slice(), ts.as_slice()).ok_or_else(|| Error::Data("constant parameter vector".into()))?;
    let full_scores = full.moments.select_units(units).factor_scores().as_matrix();
    let sub_scores = sub.moments.factor_scores().as_matrix();
    let k = full_scores.ncols();
    let mut fm = 0.0;
    let mut fc = 0.0;
    for j in 0..k {
        let a = full_scores.column(j);
        let b = sub_scores.column(j);
        fm += mse(a.as_slice(), b.as_slice());
        fc += pearson(a.as_slice(), b.as_slice())
            .ok_or_else(|| Error::Data(format!("factor {j} has constant scores")))?;
    }
    Ok([
        mse(tf.as_slice(), ts.as_slice()),
        param_corr,
        fm / k as f64,
        fc / k as f64,
    ])
}

/// Fits the full data once, then `k` random subsamples of `sample_size`
/// units drawn without replacement, and compares each subsample fit with
/// the full fit.
pub fn kfold_resample(
    data: &Dataset,
    em: &EmConfig,
    k: usize,
    sample_size: usize,
    seed: u64,
) -> Result<ResampleReport> {
    let n = data.n();
    if k < 2 {
        return Err(Error::Config("re-sampling needs k ≥ 2".into()));
    }
    if sample_size > n || sample_size < 3 {
        return Err(Error::Config(format!(
            "sample size must lie in 3..={n}, got {sample_size}"
        )));
    }
    let full = fit(data, em)?;
    let samples: Vec<ResampleSample> = (0..k)
        .into_par_iter()
        .map(|s| {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, s as u64));
            let mut units = rand::seq::index::sample(&mut rng, n, sample_size).into_vec();
            units.sort_unstable();
            let compared = fit(&data.select_units(&units), em).and_then(|sub| compare_sample(&full, &sub, &units));
            let mut sample = ResampleSample {
                index: s,
                units,
                param_mse: None,
                param_corr: None,
                factor_mse: None,
                factor_corr: None,
                error: None,
            };
            match compared {
                Ok([pm, pc, fm, fc]) => {
                    sample.param_mse = Some(pm);
                    sample.param_corr = Some(pc);
                    sample.factor_mse = Some(fm);
                    sample.factor_corr = Some(fc);
                }
                Err(e) => {
                    warn!("re-sample {s} failed: {e}");
                    sample.error = Some(e.to_string());
                }
            }
            sample
        })
        .collect();
    let collect =
        |f: fn(&ResampleSample) -> Option<f64>| Quartiles::of(&samples.iter().filter_map(f).collect::<Vec<_>>());
    Ok(ResampleReport {
        k,
        sample_size,
        full_iterations: full.iterations,
        full_converged: full.converged,
        param_mse: collect(|s| s.param_mse),
        param_corr: collect(|s| s.param_corr),
        factor_mse: collect(|s| s.factor_mse),
        factor_corr: collect(|s| s.factor_corr),
        samples,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::DVector;

    fn small_sim(seed: u64) -> SimConfig {
        SimConfig::new(Dimensions::uniform(80, 2, 6, 2).unwrap(), seed)
    }

    #[test]
    fn exact_recovery_has_zero_deviation() {
        let theta = crate::simulate::paper_theta(&Dimensions::uniform(5, 2, 3, 2).unwrap());
        let d = abs_rel_deviation(&theta, &theta).unwrap();
        assert_eq!(d.average, 0.0);
        assert!(d.per_param.iter().all(|v| *v == Some(0.0)));
    }

    #[test]
    fn deviation_arithmetic_and_zero_truth() {
        let dims = Dimensions::uniform(5, 1, 1, 1).unwrap();
        let mut truth = Theta::zeros(&dims);
        truth.b[0] = 2.0;
        let mut est = truth.clone();
        est.b[0] = 1.9;
        let d = abs_rel_deviation(&truth, &est).unwrap();
        let b_index = 2; // D, D1, then b
        assert!((d.per_param[b_index].unwrap() - 0.05).abs() < 1e-12);
        assert_eq!(d.undefined, 4);
        assert!((d.average - 0.05 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn self_and_negated_correlation_are_one() {
        let latents = Latents {
            g: DVector::from_vec(vec![1.0, -2.0, 0.5, 3.0]),
            f: vec![DVector::from_vec(vec![0.1, 0.2, -0.4, 1.0])],
        };
        let law = crate::estep::ConditionalLaw {
            means: latents.as_matrix(),
            sigma: nalgebra::DMatrix::zeros(2, 2),
        };
        let mut mo = crate::estep::posterior_moments(&law);
        for r in factor_sq_correlation(&latents, &mo).unwrap() {
            assert!((r - 1.0).abs() < 1e-12);
        }
        mo.reflect(&[true, true]);
        for r in factor_sq_correlation(&latents, &mo).unwrap() {
            assert!((r - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn constant_scores_are_an_error() {
        let latents = Latents {
            g: DVector::from_vec(vec![1.0, 2.0, 3.0]),
            f: vec![DVector::from_vec(vec![1.0, 0.0, 1.0])],
        };
        let law = crate::estep::ConditionalLaw {
            means: nalgebra::DMatrix::from_element(3, 2, 1.0),
            sigma: nalgebra::DMatrix::zeros(2, 2),
        };
        let mo = crate::estep::posterior_moments(&law);
        assert!(factor_sq_correlation(&latents, &mo).is_err());
    }

    #[test]
    fn quartiles_interpolate() {
        let q = Quartiles::of(&[4.0, 1.0, 3.0, 2.0, 5.0]).unwrap();
        assert_eq!((q.q1, q.median, q.q3), (2.0, 3.0, 4.0));
        let q = Quartiles::of(&[1.0, 2.0]).unwrap();
        assert_eq!((q.q1, q.median, q.q3), (1.25, 1.5, 1.75));
        assert!(Quartiles::of(&[]).is_none());
    }

    #[test]
    fn identical_seeds_identical_records() {
        let a = replicate_study(&small_sim(3), &EmConfig::default(), 2).unwrap();
        let b = replicate_study(&small_sim(3), &EmConfig::default(), 2).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.replicates.len(), 2);
        assert_eq!(a.failures, 0);
    }

    #[test]
    fn summary_is_order_independent() {
        let study = replicate_study(&small_sim(4), &EmConfig::default(), 5).unwrap();
        let mut reversed = study.replicates.clone();
        reversed.reverse();
        let again = summarize(study.dims.clone(), reversed);
        assert_eq!(again, study);
    }

    #[test]
    fn summary_values_are_in_range() {
        let study = replicate_study(&small_sim(5), &EmConfig::default(), 4).unwrap();
        let q = study.sq_correlation.unwrap();
        assert!(0.0 <= q.q1 && q.q1 <= q.median && q.median <= q.q3 && q.q3 <= 1.0);
        let d = study.deviation.unwrap();
        assert!(0.0 <= d.q1 && d.q1 <= d.median && d.median <= d.q3);
        assert_eq!(study.tracked, vec!["c1", "c2", "sigma2_Y"]);
        assert!(study.band("c1").unwrap().half_width.unwrap() > 0.0);
    }

    #[test]
    fn zero_replicates_rejected() {
        assert!(replicate_study(&small_sim(1), &EmConfig::default(), 0).is_err());
    }

    #[test]
    fn single_cell_sweep() {
        let base = small_sim(6);
        let cells = sensitivity_sweep(&[80], &[6], &base, &EmConfig::default(), 1).unwrap();
        assert_eq!(cells.len(), 2);
        for cell in &cells {
            assert_eq!(cell.summary.replicates.len(), 1);
            assert_eq!((cell.n, cell.q), (80, 6));
            assert!(cell.summary.band("c1").unwrap().half_width.is_none());
        }
        assert_eq!(cells[0].axis, SweepAxis::N);
        assert_eq!(cells[1].axis, SweepAxis::Q);
    }

    #[test]
    fn sweep_grid_layout() {
        let base = small_sim(7);
        let cells = sensitivity_sweep(&[40, 60], &[3, 4, 5], &base, &EmConfig::default(), 2).unwrap();
        let layout: Vec<_> = cells.iter().map(|c| (c.axis, c.n, c.q)).collect();
        assert_eq!(
            layout,
            vec![
                (SweepAxis::N, 40, 6),
                (SweepAxis::N, 60, 6),
                (SweepAxis::Q, 80, 3),
                (SweepAxis::Q, 80, 4),
                (SweepAxis::Q, 80, 5),
            ]
        );
        assert_eq!(cells[3].summary.dims.q_m, vec![4, 4]);
    }

    #[test]
    fn full_size_resample_reproduces_full_fit() {
        let data = simulate_dataset(&small_sim(8)).unwrap().data;
        let report = kfold_resample(&data, &EmConfig::default(), 3, data.n(), 1).unwrap();
        for s in &report.samples {
            assert_eq!(s.units, (0..data.n()).collect::<Vec<_>>());
            assert_eq!(s.param_mse, Some(0.0));
            assert!((s.param_corr.unwrap() - 1.0).abs() < 1e-12);
            assert_eq!(s.factor_mse, Some(0.0));
        }
    }

    #[test]
    fn subsamples_are_sorted_distinct_units() {
        let data = simulate_dataset(&small_sim(9)).unwrap().data;
        let report = kfold_resample(&data, &EmConfig::default(), 4, 40, 2).unwrap();
        assert_eq!(report.samples.len(), 4);
        for s in &report.samples {
            assert_eq!(s.units.len(), 40);
            assert!(s.units.windows(2).all(|w| w[0] < w[1]));
            assert!(s.error.is_none());
            assert!(s.param_mse.unwrap() >= 0.0);
        }
        assert!(kfold_resample(&data, &EmConfig::default(), 1, 40, 2).is_err());
        assert!(kfold_resample(&data, &EmConfig::default(), 2, 81, 2).is_err());
    }
}
