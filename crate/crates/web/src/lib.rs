//! Browser bindings: simulate a benchmark, fit the mixture to it, and look at
//! the spline basis. Every entry point returns a JSON string.

use nalgebra::DMatrix;
use serde::Serialize;
use wasm_bindgen::prelude::*;

use mixprobit::basis::{BasisConfig, BasisExpansion};
use mixprobit::inference::{predict, summarize};
use mixprobit::model::{FitData, PriorConfig};
use mixprobit::rjmcmc::{continue_chain, run_pilots, Chain, ChainConfig};
use mixprobit::rng::RngStream;
use mixprobit::sampler::SamplerSettings;
use mixprobit::simgen::{design_points, simulate_at, Benchmark, BenchmarkFunction, Design, Simulation};

const GRID: usize = 200;

fn js(e: impl std::fmt::Display) -> JsError {
    JsError::new(&e.to_string())
}

fn benchmark(function: &str, negated: bool) -> Result<Benchmark, JsError> {
    let f: BenchmarkFunction = function.parse().map_err(js)?;
    if f.dimension() != 1 {
        return Err(JsError::new("the demo plots univariate functions only (a, b or c)"));
    }
    Ok(if negated { Benchmark::negated(f) } else { Benchmark::new(f) })
}

fn simulation(bench: &Benchmark, n: usize, seed: u64) -> Result<Simulation, JsError> {
    let mut rng = RngStream::new(seed);
    let x = design_points(n, 1, Design::Uniform, &mut rng).map_err(js)?;
    simulate_at(bench, x, &mut rng).map_err(js)
}

fn grid() -> Vec<f64> {
    (0..GRID).map(|i| i as f64 / (GRID - 1) as f64).collect()
}

fn to_json<T: Serialize>(value: &T) -> String {
    serde_json::to_string(value).expect("plain data serializes")
}

#[derive(Serialize)]
struct SimulatedData {
    x: Vec<f64>,
    w: Vec<bool>,
    grid: Vec<f64>,
    truth: Vec<f64>,
}

/// Draw `n` uniform points and Bernoulli responses from a benchmark, plus the
/// true curve on a grid.
#[wasm_bindgen]
pub fn simulate(function: &str, negated: bool, n: usize, seed: u64) -> Result<String, JsError> {
    let bench = benchmark(function, negated)?;
    let sim = simulation(&bench, n, seed)?;
    let grid = grid();
    let truth = grid
        .iter()
        .map(|&x| bench.true_probability(&[x]))
        .collect::<Result<Vec<_>, _>>()
        .map_err(js)?;
    Ok(to_json(&SimulatedData {
        x: sim.covariates.column(0).iter().copied().collect(),
        w: sim.responses.clone(),
        grid,
        truth,
    }))
}

#[derive(Serialize)]
struct FittedCurve {
    grid: Vec<f64>,
    mean: Vec<f64>,
    low: Vec<f64>,
    high: Vec<f64>,
    model_probs: Vec<f64>,
    jump_acceptance: f64,
    rank: usize,
}

/// Fit the mixture to the same data [`simulate`] produces for these
/// arguments and return the posterior mean curve with 90% bands.
#[wasm_bindgen]
pub fn fit(
    function: &str,
    negated: bool,
    n: usize,
    seed: u64,
    max_components: usize,
    pilot_length: usize,
    iterations: usize,
) -> Result<String, JsError> {
    let bench = benchmark(function, negated)?;
    let data = simulation(&bench, n, seed)?.into_dataset().map_err(js)?;
    let basis = BasisExpansion::build(&data, &BasisConfig::default()).map_err(js)?;
    let fit_data = FitData::new(&data, &basis).map_err(js)?;
    let prior = PriorConfig::for_data(n, max_components.max(1));
    let settings = SamplerSettings::default();
    let config = ChainConfig {
        pilot_burnin: pilot_length / 2,
        pilot_length: pilot_length.max(2),
        warmup: iterations / 2,
        sampling: (iterations - iterations / 2).max(1),
        thin: 1,
    };
    let pilots = run_pilots(&fit_data, &prior, &settings, &config, seed).map_err(js)?;
    let mut chain = Chain::new(&pilots, &prior, n, RngStream::substream(seed, 0));
    let trace = continue_chain(&mut chain, &fit_data, &pilots, &prior, &settings, &config, |_| Ok(())).map_err(js)?;
    let result = summarize(&trace, &data, &basis, prior.max_components(), 0.9).map_err(js)?;
    let grid = grid();
    let points = DMatrix::from_column_slice(GRID, 1, &grid);
    let curve = predict(&result, &points).map_err(js)?;
    Ok(to_json(&FittedCurve {
        grid,
        mean: curve.prob,
        low: curve.low,
        high: curve.high,
        model_probs: result.model_probs,
        jump_acceptance: trace.jump_acceptance,
        rank: basis.rank(),
    }))
}

#[derive(Serialize)]
struct BasisColumns {
    grid: Vec<f64>,
    knots: Vec<f64>,
    singular_values: Vec<f64>,
    /// `columns[k][i]` is column `k` of the basis at grid point `i`.
    columns: Vec<Vec<f64>>,
}

/// The first `count` orthogonal basis columns, evaluated on a grid, for the
/// covariates of `n` simulated points and knot cell width `epsilon`.
#[wasm_bindgen]
pub fn basis_columns(n: usize, seed: u64, epsilon: f64, count: usize) -> Result<String, JsError> {
    let bench = Benchmark::new(BenchmarkFunction::ASin);
    let data = simulation(&bench, n, seed)?.into_dataset().map_err(js)?;
    let config = BasisConfig {
        epsilon,
        ..BasisConfig::default()
    };
    let basis = BasisExpansion::build(&data, &config).map_err(js)?;
    let grid = grid();
    let rows: Vec<Vec<f64>> = grid.iter().map(|&x| basis.basis_row(&[x])).collect();
    let count = count.min(basis.rank());
    let columns = (0..count).map(|k| rows.iter().map(|r| r[k]).collect()).collect();
    Ok(to_json(&BasisColumns {
        grid,
        knots: basis.knots.column(0).iter().copied().collect(),
        singular_values: basis.singular_values.clone(),
        columns,
    }))
}
