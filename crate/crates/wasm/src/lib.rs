//! Browser bindings. Each exported function takes plain numbers or a JSON
//! config and returns a JSON string for the page to plot. The pure
//! functions underneath run natively too, which is how they are tested.

use serde::Serialize;
use wasm_bindgen::prelude::*;

use repsample::harness::collect::run_replicate;
use repsample::harness::SimulateConfig;
use repsample::population::{sample_batch, ResponseBias, ResponseBiasConfig, Site};
use repsample::rng::{derive_seed, substream, STREAM_TRIAL};
use repsample::theory::{expected_unfairness, unfairness_trial, UnivariateGroupModel};
use repsample::{Record, Result, SensitiveVector};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PolicyCurve {
    pub policy: String,
    /// Mean distance to the target after each step, over replicates.
    pub mean: Vec<f64>,
    pub final_runs: Vec<f64>,
}

/// Mean distance trajectories per policy. Runs replicates one after another.
pub fn trajectories(config: &SimulateConfig) -> Result<Vec<PolicyCurve>> {
    config.validate()?;
    let mut curves: Vec<PolicyCurve> = config
        .policies
        .iter()
        .map(|p| PolicyCurve { policy: p.label(), mean: vec![0.0; config.horizon], final_runs: vec![] })
        .collect();
    for r in 0..config.replicates {
        for (curve, run) in curves.iter_mut().zip(run_replicate(config, r, None)?) {
            for (m, d) in curve.mean.iter_mut().zip(&run.trajectory) {
                *m += d / config.replicates as f64;
            }
            curve.final_runs.push(run.final_distance);
        }
    }
    Ok(curves)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct UnfairnessPoint {
    pub n0: usize,
    pub expected: f64,
    pub simulated: f64,
    pub std_error: f64,
}

/// Closed-form and simulated unfairness as `n0` varies with `n1` fixed.
pub fn unfairness_curve(
    sigma0: f64,
    sigma1: f64,
    n1: usize,
    n0_values: &[usize],
    trials: usize,
    seed: u64,
) -> Result<Vec<UnfairnessPoint>> {
    let model = UnivariateGroupModel::centered(sigma0, sigma1)?;
    if trials < 2 || n1 == 0 {
        return Err(repsample::Error::Argument("need n1 > 0 and at least two trials".into()));
    }
    n0_values
        .iter()
        .enumerate()
        .map(|(i, &n0)| {
            let s = derive_seed(seed, &[i as u64]);
            let d: Vec<f64> = (0..trials)
                .map(|t| unfairness_trial(&model, [n0.max(1), n1], 500, &mut substream(s, &[STREAM_TRIAL, t as u64])))
                .collect();
            let mean = d.iter().sum::<f64>() / trials as f64;
            let var = d.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (trials - 1) as f64;
            Ok(UnfairnessPoint {
                n0,
                expected: expected_unfairness(sigma0, sigma1, n0.max(1) as f64, n1 as f64)?,
                simulated: mean,
                std_error: (var / trials as f64).sqrt(),
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BiasDemo {
    pub lambda: f64,
    /// Share of the majority value at the site itself.
    pub base_share: f64,
    /// Share among biased draws.
    pub observed_share: f64,
    /// `q w1 / (q w1 + (1 - q) w0)` with the response weights.
    pub predicted_share: f64,
}

/// Draws from a one-attribute site whose majority value has share
/// `base_share`, under response bias `lambda`.
pub fn bias_demo(lambda: f64, base_share: f64, draws: usize, seed: u64) -> Result<BiasDemo> {
    if !(0.0..=1.0).contains(&base_share) || draws == 0 {
        return Err(repsample::Error::Argument("share must lie in [0, 1] and draws be positive".into()));
    }
    let n = 1000;
    let ones = (base_share * n as f64).round() as usize;
    let records: Vec<Record> = (0..n)
        .map(|i| Record::new(vec![], SensitiveVector::binary(vec![f64::from(u8::from(i < ones))]).unwrap(), 0))
        .collect::<Result<_>>()?;
    let mut site = Site::empirical(0, records)?;
    site.biased = true;
    let cfg = ResponseBiasConfig::new(lambda, 1)?;
    let bias = ResponseBias::new(&cfg, vec![false]);
    let batch = sample_batch(&mut site, draws, Some(&bias), &mut substream(seed, &[]))?;
    let hits = batch.iter().filter(|r| r.a.as_slice()[0] == 1.0).count();
    let (w1, w0) = (bias.weight(&[1.0]), bias.weight(&[0.0]));
    let q = ones as f64 / n as f64;
    Ok(BiasDemo {
        lambda,
        base_share: q,
        observed_share: hits as f64 / draws as f64,
        predicted_share: q * w1 / (q * w1 + (1.0 - q) * w0),
    })
}

fn to_js<T: Serialize>(r: Result<T>) -> std::result::Result<String, JsError> {
    let v = r.map_err(|e| JsError::new(&e.to_string()))?;
    serde_json::to_string(&v).map_err(|e| JsError::new(&e.to_string()))
}

/// `config_json` is a `SimulateConfig`; missing fields take their defaults.
#[wasm_bindgen(js_name = simulateTrajectories)]
pub fn simulate_trajectories(config_json: &str) -> std::result::Result<String, JsError> {
    let cfg: SimulateConfig = serde_json::from_str(config_json).map_err(|e| JsError::new(&e.to_string()))?;
    to_js(trajectories(&cfg))
}

#[wasm_bindgen(js_name = unfairnessCurve)]
pub fn unfairness_curve_js(
    sigma0: f64,
    sigma1: f64,
    n1: usize,
    n0_values: Vec<usize>,
    trials: usize,
    seed: u64,
) -> std::result::Result<String, JsError> {
    to_js(unfairness_curve(sigma0, sigma1, n1, &n0_values, trials, seed))
}

#[wasm_bindgen(js_name = biasDemo)]
pub fn bias_demo_js(lambda: f64, base_share: f64, draws: usize, seed: u64) -> std::result::Result<String, JsError> {
    to_js(bias_demo(lambda, base_share, draws, seed))
}

#[cfg(test)]
mod tests {
    use super::*;
    use repsample::harness::PolicySpec;

    #[test]
    fn trajectories_have_one_point_per_step() {
        let cfg = SimulateConfig {
            replicates: 2,
            m: 5,
            horizon: 7,
            k: 10,
            policies: vec![PolicySpec::Dpbrs, PolicySpec::Random],
            ..Default::default()
        };
        let c = trajectories(&cfg).unwrap();
        assert_eq!(c.len(), 2);
        assert!(c.iter().all(|p| p.mean.len() == 7 && p.final_runs.len() == 2));
    }

    #[test]
    fn trajectories_match_native_harness() {
        let cfg = SimulateConfig { replicates: 3, m: 5, horizon: 5, k: 10, ..Default::default() };
        let native = repsample::harness::simulate(&cfg).unwrap();
        let curves = trajectories(&cfg).unwrap();
        for c in &curves {
            assert_eq!(c.final_runs, native.finals(&c.policy));
        }
    }

    #[test]
    fn unfairness_curve_closed_form() {
        let pts = unfairness_curve(2.0, 1.0, 50, &[50, 200], 20, 1).unwrap();
        assert!((pts[0].expected - (2.0f64 / std::f64::consts::PI).sqrt() / 50f64.sqrt()).abs() < 1e-12);
        assert_eq!(pts[1].expected, 0.0);
    }

    #[test]
    fn bias_demo_tracks_prediction() {
        let d = bias_demo(4.0, 0.5, 20_000, 3).unwrap();
        assert!((d.predicted_share - 16.0 / 17.0).abs() < 1e-12);
        assert!((d.observed_share - d.predicted_share).abs() < 0.01);
        let none = bias_demo(1.0, 0.3, 100, 3).unwrap();
        assert!((none.predicted_share - 0.3).abs() < 1e-12);
    }

    #[test]
    fn json_wrappers() {
        let s = simulate_trajectories(r#"{"replicates": 1, "m": 3, "horizon": 2, "k": 5}"#).unwrap();
        assert!(s.starts_with("[{\"policy\":\"opt\""));
        assert!(bias_demo_js(2.0, 0.5, 10, 0).unwrap().contains("observed_share"));
    }
}
