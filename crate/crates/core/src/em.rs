//! Baum-Welch fitting of Poisson and categorical hidden Markov models,
//! order selection by information criteria and pseudo-residual diagnostics.
//!
//! Fitting follows the usual HMM convention: `X_0 ~ pi0` and every epoch,
//! including `t = 0`, emits an observation.

use std::io::{Read, Write};
use std::path::Path;

use rand::Rng;
use rayon::prelude::*;
use statrs::distribution::{ContinuousCDF, DiscreteCDF, Normal, Poisson};
use statrs::function::gamma::ln_gamma;

use crate::error::{Error, Result};
use crate::hmm::{Emission, HmmModel, Observation};
use crate::matrix::Matrix;
use crate::rng::{derive_seed, rng_from_seed, SimRng};

/// Smallest Poisson mean kept by the M-step.
const MIN_RATE: f64 = 1e-8;
/// Smallest categorical probability kept by the M-step.
const MIN_PROB: f64 = 1e-300;

/// Viewer counts sampled on a regular grid.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CountSeries {
    counts: Vec<Observation>,
    timestamps: Option<Vec<String>>,
}

impl CountSeries {
    pub fn new(counts: Vec<Observation>) -> Result<Self> {
        if counts.len() < 2 {
            return Err(Error::Domain(format!("series needs at least 2 samples, got {}", counts.len())));
        }
        Ok(Self { counts, timestamps: None })
    }

    /// Reads a CSV with a header row. The `viewers` column is used when present,
    /// otherwise the file must have a single column. A `timestamp` column is kept.
    pub fn from_csv_reader<R: Read>(reader: R) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
        let headers = rdr.headers()?.clone();
        let col = match headers.iter().position(|h| h.eq_ignore_ascii_case("viewers")) {
            Some(c) => c,
            None if headers.len() == 1 => 0,
            None => {
                return Err(Error::Domain("line 1: expected a `viewers` column or a single column".into()));
            }
        };
        let ts_col = headers.iter().position(|h| h.eq_ignore_ascii_case("timestamp"));
        let mut counts = Vec::new();
        let mut stamps = Vec::new();
        for rec in rdr.records() {
            let rec = rec?;
            let line = rec.position().map_or(0, |p| p.line());
            let field = rec.get(col).ok_or_else(|| Error::Domain(format!("line {line}: missing viewers field")))?;
            let y: Observation = field
                .parse()
                .map_err(|_| Error::Domain(format!("line {line}: invalid count `{field}`")))?;
            counts.push(y);
            if let Some(c) = ts_col {
                stamps.push(rec.get(c).unwrap_or_default().to_string());
            }
        }
        let mut series = Self::new(counts)?;
        if ts_col.is_some() {
            series.timestamps = Some(stamps);
        }
        Ok(series)
    }

    pub fn from_csv_path(path: &Path) -> Result<Self> {
        Self::from_csv_reader(std::fs::File::open(path)?)
    }

    pub fn counts(&self) -> &[Observation] {
        &self.counts
    }

    pub fn timestamps(&self) -> Option<&[String]> {
        self.timestamps.as_deref()
    }

    pub fn len(&self) -> usize {
        self.counts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.counts.is_empty()
    }

    fn is_constant(&self) -> bool {
        self.counts.iter().all(|&y| y == self.counts[0])
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EmConfig {
    /// Relative log-likelihood gain below which iteration stops.
    pub tol: f64,
    pub max_iters: usize,
    pub restarts: usize,
    pub seed: u64,
}

impl Default for EmConfig {
    fn default() -> Self {
        Self { tol: 1e-7, max_iters: 500, restarts: 5, seed: 0 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitResult {
    pub model: HmmModel,
    pub loglik: f64,
    pub aic: f64,
    pub bic: f64,
    /// Free parameters counted by the criteria.
    pub params: usize,
    pub iterations: usize,
    pub converged: bool,
    /// Extra states cannot be identified from the data (e.g. a constant series).
    pub rank_deficient: bool,
    /// Log-likelihood at every E-step.
    pub loglik_trace: Vec<f64>,
}

/// Free parameters of an `S`-state model: transitions, emissions, initial law.
pub fn parameter_count(states: usize, symbols: Option<usize>) -> usize {
    let s = states;
    let emission = match symbols {
        None => s,
        Some(m) => s * (m - 1),
    };
    s * (s - 1) + emission + (s - 1)
}

/// Emission parameters during fitting.
#[derive(Debug, Clone)]
enum EmitParams {
    Poisson(Vec<f64>),
    Categorical(Matrix),
}

#[derive(Debug, Clone)]
struct Params {
    p: Matrix,
    pi0: Vec<f64>,
    emit: EmitParams,
}

impl Params {
    fn states(&self) -> usize {
        self.pi0.len()
    }

    fn from_model(model: &HmmModel) -> Self {
        let emit = match model.emission() {
            Emission::Poisson { g, .. } => EmitParams::Poisson(g.clone()),
            Emission::Categorical { b } => EmitParams::Categorical(b.clone()),
        };
        Self { p: model.transition().clone(), pi0: model.initial().to_vec(), emit }
    }

    fn to_model(&self) -> Result<HmmModel> {
        let emission = match &self.emit {
            EmitParams::Poisson(g) => Emission::poisson(g.clone()),
            EmitParams::Categorical(b) => Emission::categorical(b.clone()),
        };
        HmmModel::new(self.p.clone(), self.pi0.clone(), emission)
    }

    /// Reorders states: descending Poisson mean, or ascending mean symbol
    /// (symbol 0 is the highest level) for categorical emission.
    fn sorted(&self) -> Self {
        let s = self.states();
        let key: Vec<f64> = match &self.emit {
            EmitParams::Poisson(g) => g.iter().map(|x| -x).collect(),
            EmitParams::Categorical(b) => {
                (0..s).map(|i| b.row(i).iter().enumerate().map(|(k, p)| k as f64 * p).sum()).collect()
            }
        };
        let mut order: Vec<usize> = (0..s).collect();
        order.sort_by(|&a, &b| key[a].partial_cmp(&key[b]).unwrap().then(a.cmp(&b)));
        let mut p = Matrix::zeros(s, s);
        for (ni, &oi) in order.iter().enumerate() {
            for (nj, &oj) in order.iter().enumerate() {
                p[(ni, nj)] = self.p[(oi, oj)];
            }
        }
        let pi0 = order.iter().map(|&i| self.pi0[i]).collect();
        let emit = match &self.emit {
            EmitParams::Poisson(g) => EmitParams::Poisson(order.iter().map(|&i| g[i]).collect()),
            EmitParams::Categorical(b) => {
                EmitParams::Categorical(Matrix::from_rows(order.iter().map(|&i| b.row(i).to_vec()).collect()).expect("rows"))
            }
        };
        Self { p, pi0, emit }
    }
}

/// Observation data with its per-epoch constants precomputed.
struct Data<'a> {
    obs: &'a [Observation],
    /// `ln y_t!` for Poisson data.
    ln_fact: Vec<f64>,
}

impl<'a> Data<'a> {
    fn new(obs: &'a [Observation]) -> Self {
        Self { obs, ln_fact: obs.iter().map(|&y| ln_gamma(f64::from(y) + 1.0)).collect() }
    }
}

/// Shifted emission likelihoods `exp(ln B(i, y_t) - m_t)` and their shifts `m_t`.
fn emission_table(params: &Params, data: &Data<'_>) -> (Vec<f64>, Vec<f64>) {
    let s = params.states();
    let t_len = data.obs.len();
    let mut table = vec![0.0; t_len * s];
    let mut shifts = vec![0.0; t_len];
    let ln_g: Vec<f64> = match &params.emit {
        EmitParams::Poisson(g) => g.iter().map(|x| x.ln()).collect(),
        EmitParams::Categorical(_) => Vec::new(),
    };
    for t in 0..t_len {
        let row = &mut table[t * s..(t + 1) * s];
        let y = data.obs[t];
        match &params.emit {
            EmitParams::Poisson(g) => {
                let yf = f64::from(y);
                for i in 0..s {
                    row[i] = yf * ln_g[i] - g[i];
                }
            }
            EmitParams::Categorical(b) => {
                for i in 0..s {
                    row[i] = b[(i, y as usize)].ln();
                }
            }
        }
        let top = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        row.iter_mut().for_each(|x| *x = (*x - top).exp());
        shifts[t] = top - if matches!(params.emit, EmitParams::Poisson(_)) { data.ln_fact[t] } else { 0.0 };
    }
    (table, shifts)
}

/// Scaled forward pass. Returns normalized `alpha`, scale factors and the log-likelihood.
fn forward(params: &Params, table: &[f64], shifts: &[f64]) -> (Vec<f64>, Vec<f64>, f64) {
    let s = params.states();
    let t_len = shifts.len();
    let mut alpha = vec![0.0; t_len * s];
    let mut scale = vec![0.0; t_len];
    let mut pred = vec![0.0; s];
    let mut loglik = 0.0;
    for t in 0..t_len {
        if t == 0 {
            pred.copy_from_slice(&params.pi0);
        } else {
            params.p.tr_mul_vec_into(&alpha[(t - 1) * s..t * s], &mut pred);
        }
        let row = &mut alpha[t * s..(t + 1) * s];
        let mut c = 0.0;
        for i in 0..s {
            row[i] = pred[i] * table[t * s + i];
            c += row[i];
        }
        if c.is_nan() || c <= 0.0 {
            // impossible observation under the current parameters
            c = f64::MIN_POSITIVE;
        }
        row.iter_mut().for_each(|x| *x /= c);
        scale[t] = c;
        loglik += c.ln() + shifts[t];
    }
    (alpha, scale, loglik)
}

/// Log-likelihood of `obs` under `model`.
pub fn loglik(model: &HmmModel, obs: &[Observation]) -> f64 {
    let params = Params::from_model(model);
    let data = Data::new(obs);
    let (table, shifts) = emission_table(&params, &data);
    forward(&params, &table, &shifts).2
}

/// One EM iteration: E-step at `params`, returns the updated parameters and
/// the log-likelihood of `params`.
fn em_step(params: &Params, data: &Data<'_>, symbols: Option<usize>) -> (Params, f64) {
    let s = params.states();
    let t_len = data.obs.len();
    let (table, shifts) = emission_table(params, data);
    let (alpha, scale, ll) = forward(params, &table, &shifts);

    let mut beta = vec![1.0; s];
    let mut next_beta = vec![0.0; s];
    let mut weighted = vec![0.0; s];
    let mut xi = Matrix::zeros(s, s);
    let mut occupancy = vec![0.0; s];
    let mut emit_acc = match symbols {
        None => vec![0.0; s],
        Some(m) => vec![0.0; s * m],
    };
    let mut gamma0 = vec![0.0; s];
    let mut gamma = vec![0.0; s];
    for t in (0..t_len).rev() {
        let a = &alpha[t * s..(t + 1) * s];
        let mut norm = 0.0;
        for i in 0..s {
            gamma[i] = a[i] * beta[i];
            norm += gamma[i];
        }
        let y = data.obs[t];
        for i in 0..s {
            let gi = if norm > 0.0 { gamma[i] / norm } else { 0.0 };
            occupancy[i] += gi;
            match symbols {
                None => emit_acc[i] += gi * f64::from(y),
                Some(m) => emit_acc[i * m + y as usize] += gi,
            }
            if t == 0 {
                gamma0[i] = gi;
            }
        }
        if t > 0 {
            // xi(i, j) += alpha_{t-1}(i) P(i, j) b_t(j) beta_t(j) / c_t
            let prev = &alpha[(t - 1) * s..t * s];
            for j in 0..s {
                weighted[j] = table[t * s + j] * beta[j] / scale[t];
            }
            for i in 0..s {
                if prev[i] == 0.0 {
                    continue;
                }
                for j in 0..s {
                    xi[(i, j)] += prev[i] * params.p[(i, j)] * weighted[j];
                }
            }
            params.p.mul_vec_into(&weighted, &mut next_beta);
            std::mem::swap(&mut beta, &mut next_beta);
        }
    }

    let mut p = params.p.clone();
    for i in 0..s {
        let total: f64 = xi.row(i).iter().sum();
        if total > 0.0 {
            for j in 0..s {
                p[(i, j)] = xi[(i, j)] / total;
            }
        }
    }
    let g0: f64 = gamma0.iter().sum();
    let pi0 = if g0 > 0.0 { gamma0.iter().map(|x| x / g0).collect() } else { params.pi0.clone() };
    let emit = match (&params.emit, symbols) {
        (EmitParams::Poisson(g), None) => EmitParams::Poisson(
            (0..s)
                .map(|i| if occupancy[i] > 0.0 { (emit_acc[i] / occupancy[i]).max(MIN_RATE) } else { g[i] })
                .collect(),
        ),
        (EmitParams::Categorical(b), Some(m)) => {
            let mut nb = b.clone();
            for i in 0..s {
                if occupancy[i] > 0.0 {
                    let row: Vec<f64> = (0..m).map(|k| (emit_acc[i * m + k] / occupancy[i]).max(MIN_PROB)).collect();
                    let total: f64 = row.iter().sum();
                    for k in 0..m {
                        nb[(i, k)] = row[k] / total;
                    }
                }
            }
            EmitParams::Categorical(nb)
        }
        _ => unreachable!("emission kind fixed by the data"),
    };
    (Params { p, pi0, emit }, ll)
}

fn run_em(init: Params, data: &Data<'_>, symbols: Option<usize>, config: &EmConfig) -> (Params, Vec<f64>, bool) {
    let mut params = init;
    let mut trace = Vec::new();
    let mut converged = false;
    for _ in 0..config.max_iters {
        let (next, ll) = em_step(&params, data, symbols);
        if let Some(&prev) = trace.last() {
            let prev: f64 = prev;
            if (ll - prev).abs() <= config.tol * prev.abs().max(1.0) {
                trace.push(ll);
                converged = true;
                break;
            }
        }
        trace.push(ll);
        params = next;
    }
    (params, trace, converged)
}

fn finish(params: Params, data: &Data<'_>, trace: Vec<f64>, converged: bool, symbols: Option<usize>, rank_deficient: bool) -> Result<FitResult> {
    let params = params.sorted();
    let model = params.to_model()?;
    let (table, shifts) = emission_table(&params, data);
    let ll = forward(&params, &table, &shifts).2;
    let k = parameter_count(params.states(), symbols);
    let n = data.obs.len() as f64;
    Ok(FitResult {
        model,
        loglik: ll,
        aic: -2.0 * ll + 2.0 * k as f64,
        bic: -2.0 * ll + k as f64 * n.ln(),
        params: k,
        iterations: trace.len(),
        converged,
        rank_deficient,
        loglik_trace: trace,
    })
}

fn diagonal_transition(s: usize) -> Matrix {
    let mut p = Matrix::zeros(s, s);
    for i in 0..s {
        for j in 0..s {
            p[(i, j)] = if s == 1 {
                1.0
            } else if i == j {
                0.9
            } else {
                0.1 / (s - 1) as f64
            };
        }
    }
    p
}

/// Means of `S` equal-size chunks of the sorted counts, descending.
fn quantile_means(counts: &[Observation], s: usize) -> Vec<f64> {
    let mut sorted: Vec<f64> = counts.iter().map(|&y| f64::from(y)).collect();
    sorted.sort_by(|a, b| b.partial_cmp(a).unwrap());
    let n = sorted.len();
    (0..s)
        .map(|k| {
            let (lo, hi) = (k * n / s, ((k + 1) * n / s).max(k * n / s + 1).min(n));
            let chunk = &sorted[lo..hi];
            (chunk.iter().sum::<f64>() / chunk.len() as f64).max(MIN_RATE)
        })
        .collect()
}

/// k-means++ seeding on the counts followed by Lloyd iterations; centres descending.
fn kmeans_means(counts: &[Observation], s: usize, rng: &mut SimRng) -> Vec<f64> {
    let xs: Vec<f64> = counts.iter().map(|&y| f64::from(y)).collect();
    let mut centres = vec![xs[rng.random_range(0..xs.len())]];
    let mut d2: Vec<f64> = xs.iter().map(|x| (x - centres[0]).powi(2)).collect();
    while centres.len() < s {
        let total: f64 = d2.iter().sum();
        let next = if total > 0.0 {
            let mut u = rng.random::<f64>() * total;
            let mut pick = xs.len() - 1;
            for (i, d) in d2.iter().enumerate() {
                if u < *d {
                    pick = i;
                    break;
                }
                u -= d;
            }
            xs[pick]
        } else {
            xs[rng.random_range(0..xs.len())]
        };
        centres.push(next);
        for (d, x) in d2.iter_mut().zip(&xs) {
            *d = d.min((x - next).powi(2));
        }
    }
    for _ in 0..100 {
        let mut sums = vec![0.0; s];
        let mut sizes = vec![0usize; s];
        for x in &xs {
            let k = (0..s).min_by(|&a, &b| (x - centres[a]).abs().total_cmp(&(x - centres[b]).abs())).unwrap();
            sums[k] += x;
            sizes[k] += 1;
        }
        let next: Vec<f64> = (0..s)
            .map(|k| if sizes[k] > 0 { sums[k] / sizes[k] as f64 } else { centres[k] })
            .collect();
        if next == centres {
            break;
        }
        centres = next;
    }
    centres.sort_by(|a, b| b.total_cmp(a));
    centres.into_iter().map(|c| c.max(MIN_RATE)).collect()
}

/// Restart 0 starts from the quantile means; later restarts from seeded k-means centres.
fn initial_poisson(counts: &[Observation], s: usize, restart: usize, seed: u64) -> Params {
    let g = if restart == 0 {
        quantile_means(counts, s)
    } else {
        kmeans_means(counts, s, &mut rng_from_seed(derive_seed(seed, restart as u64)))
    };
    Params { p: diagonal_transition(s), pi0: vec![1.0 / s as f64; s], emit: EmitParams::Poisson(g) }
}

fn best_of(fits: Vec<Result<FitResult>>) -> Result<FitResult> {
    let mut best: Option<FitResult> = None;
    for fit in fits {
        let fit = fit?;
        if best.as_ref().is_none_or(|b| fit.loglik > b.loglik) {
            best = Some(fit);
        }
    }
    best.ok_or_else(|| Error::Domain("at least one restart is required".into()))
}

/// Poisson-emission fit with `config.restarts` seeded restarts; keeps the best log-likelihood.
pub fn fit_em(series: &CountSeries, states: usize, config: &EmConfig) -> Result<FitResult> {
    if states == 0 {
        return Err(Error::Domain("at least one state is required".into()));
    }
    if series.len() <= states {
        return Err(Error::Domain(format!("series of length {} is too short for {states} states", series.len())));
    }
    let data = Data::new(series.counts());
    let rank_deficient = states > 1 && series.is_constant();
    let fits = (0..config.restarts.max(1))
        .into_par_iter()
        .map(|r| {
            let init = initial_poisson(series.counts(), states, r, config.seed);
            let (params, trace, converged) = run_em(init, &data, None, config);
            finish(params, &data, trace, converged, None, rank_deficient)
        })
        .collect();
    best_of(fits)
}

/// Single EM run started from `init` (Poisson or categorical).
pub fn fit_em_from(obs: &[Observation], init: &HmmModel, config: &EmConfig) -> Result<FitResult> {
    let symbols = init.emission().symbols();
    if let Some(m) = symbols {
        if let Some(&y) = obs.iter().find(|&&y| y as usize >= m) {
            return Err(Error::Domain(format!("symbol {y} out of range for {m} symbols")));
        }
    }
    let data = Data::new(obs);
    let (params, trace, converged) = run_em(Params::from_model(init), &data, symbols, config);
    let constant = obs.iter().all(|&y| y == obs[0]);
    finish(params, &data, trace, converged, symbols, init.states() > 1 && constant)
}

/// Categorical-emission fit over symbols `0..levels`.
pub fn fit_categorical_em(obs: &[Observation], states: usize, levels: usize, config: &EmConfig) -> Result<FitResult> {
    if states == 0 || levels < 2 {
        return Err(Error::Domain("need at least one state and two symbols".into()));
    }
    if let Some(&y) = obs.iter().find(|&&y| y as usize >= levels) {
        return Err(Error::Domain(format!("symbol {y} out of range for {levels} symbols")));
    }
    if obs.len() <= states {
        return Err(Error::Domain("series too short".into()));
    }
    let data = Data::new(obs);
    let constant = obs.iter().all(|&y| y == obs[0]);
    let fits = (0..config.restarts.max(1))
        .into_par_iter()
        .map(|r| {
            let mut rng = rng_from_seed(derive_seed(config.seed, r as u64));
            let rows = (0..states)
                .map(|i| {
                    // state i leans toward symbol i * levels / states
                    let centre = (i * levels / states) as f64;
                    let w: Vec<f64> = (0..levels)
                        .map(|k| (-(k as f64 - centre).abs()).exp() * rng.random_range(0.5..1.5))
                        .collect();
                    let t: f64 = w.iter().sum();
                    w.into_iter().map(|x| x / t).collect()
                })
                .collect();
            let init = Params {
                p: diagonal_transition(states),
                pi0: vec![1.0 / states as f64; states],
                emit: EmitParams::Categorical(Matrix::from_rows(rows)?),
            };
            let (params, trace, converged) = run_em(init, &data, Some(levels), config);
            finish(params, &data, trace, converged, Some(levels), states > 1 && constant)
        })
        .collect();
    best_of(fits)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScoreRow {
    pub states: usize,
    pub loglik: f64,
    pub aic: f64,
    pub bic: f64,
    pub params: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Selection {
    /// BIC-minimizing fit.
    pub best: FitResult,
    pub scores: Vec<ScoreRow>,
}

impl Selection {
    /// `S, loglik, AIC, BIC, params`.
    pub fn write_scores_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["S", "loglik", "AIC", "BIC", "params"])?;
        for r in &self.scores {
            w.write_record([r.states.to_string(), r.loglik.to_string(), r.aic.to_string(), r.bic.to_string(), r.params.to_string()])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Fits every state count in `states` and keeps the lowest BIC (ties to fewer states).
pub fn select_model(series: &CountSeries, states: &[usize], config: &EmConfig) -> Result<Selection> {
    if states.is_empty() {
        return Err(Error::Domain("state range is empty".into()));
    }
    let mut scores = Vec::with_capacity(states.len());
    let mut best: Option<FitResult> = None;
    for &s in states {
        let fit = fit_em(series, s, config)?;
        scores.push(ScoreRow { states: s, loglik: fit.loglik, aic: fit.aic, bic: fit.bic, params: fit.params });
        let better = match &best {
            None => true,
            Some(b) => fit.bic < b.bic || (fit.bic == b.bic && s < b.model.states()),
        };
        if better {
            best = Some(fit);
        }
    }
    Ok(Selection { best: best.expect("nonempty range"), scores })
}

/// One-step-ahead mid-PIT residuals mapped to standard normal quantiles.
#[derive(Debug, Clone, PartialEq)]
pub struct PseudoResiduals {
    /// Mid-point PIT values in `[0, 1]`.
    pub uniform: Vec<f64>,
    /// `Phi^-1(uniform)`; `None` where the observation had zero predictive probability.
    pub normal: Vec<Option<f64>>,
}

impl PseudoResiduals {
    pub fn outliers(&self) -> Vec<usize> {
        self.normal.iter().enumerate().filter(|(_, z)| z.is_none()).map(|(t, _)| t).collect()
    }

    /// `(theoretical, sample)` normal quantile pairs over the finite residuals.
    pub fn qq_pairs(&self) -> Vec<(f64, f64)> {
        let mut z: Vec<f64> = self.normal.iter().flatten().copied().collect();
        z.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let n = z.len() as f64;
        let std = Normal::standard();
        z.iter()
            .enumerate()
            .map(|(k, &v)| (std.inverse_cdf((k as f64 + 0.5) / n), v))
            .collect()
    }

    pub fn write_qq_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["theoretical_quantile", "sample_quantile"])?;
        for (a, b) in self.qq_pairs() {
            w.write_record([a.to_string(), b.to_string()])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Pseudo-residuals of `obs` under the filtered one-step predictive law.
pub fn pseudo_residuals(model: &HmmModel, obs: &[Observation]) -> Result<PseudoResiduals> {
    let s = model.states();
    let std = Normal::standard();
    let dists: Vec<Poisson> = match model.emission() {
        Emission::Poisson { g, .. } => g.iter().map(|&m| Poisson::new(m).expect("validated mean")).collect(),
        Emission::Categorical { .. } => Vec::new(),
    };
    // (F(y - 1), P(Y = y)) for one state
    let cdf_pmf = |i: usize, y: Observation| -> (f64, f64) {
        match model.emission() {
            Emission::Poisson { .. } => {
                let pmf = statrs::distribution::Discrete::pmf(&dists[i], u64::from(y));
                let below = if y == 0 { 0.0 } else { dists[i].cdf(u64::from(y) - 1) };
                (below, pmf)
            }
            Emission::Categorical { b } => {
                let row = b.row(i);
                let k = (y as usize).min(row.len());
                (row[..k].iter().sum(), row.get(y as usize).copied().unwrap_or(0.0))
            }
        }
    };
    let mut pred = model.initial().to_vec();
    let mut filtered = vec![0.0; s];
    let mut uniform = Vec::with_capacity(obs.len());
    let mut normal = Vec::with_capacity(obs.len());
    for &y in obs {
        let (mut below, mut pmf) = (0.0, 0.0);
        for (i, &w) in pred.iter().enumerate() {
            let (b, p) = cdf_pmf(i, y);
            below += w * b;
            pmf += w * p;
        }
        let u = (below + 0.5 * pmf).clamp(0.0, 1.0);
        uniform.push(u);
        normal.push(if pmf > 0.0 && u > 0.0 && u < 1.0 { Some(std.inverse_cdf(u)) } else { None });
        // filter: condition on y, then predict
        let mut total = 0.0;
        for i in 0..s {
            filtered[i] = pred[i] * model.obs_ln_likelihood(i, y).map_or(0.0, f64::exp);
            total += filtered[i];
        }
        if total > 0.0 {
            filtered.iter_mut().for_each(|x| *x /= total);
        } else {
            // an impossible observation carries no information about the state
            filtered.copy_from_slice(&pred);
        }
        model.transition().tr_mul_vec_into(&filtered, &mut pred);
    }
    Ok(PseudoResiduals { uniform, normal })
}

/// Empirical-quantile binning into `levels` symbols; symbol 0 holds the
/// highest counts.
pub fn quantize(counts: &[Observation], levels: usize) -> Result<Vec<Observation>> {
    if levels < 2 {
        return Err(Error::Domain("quantization needs at least two levels".into()));
    }
    if counts.is_empty() {
        return Ok(Vec::new());
    }
    let mut sorted = counts.to_vec();
    sorted.sort_unstable();
    let n = sorted.len();
    let cuts: Vec<Observation> = (1..levels).map(|k| sorted[(k * n).div_ceil(levels).min(n - 1)]).collect();
    Ok(counts
        .iter()
        .map(|&y| {
            let bin = cuts.iter().filter(|&&c| y >= c).count();
            (levels - 1 - bin) as Observation
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_state_closed_form() {
        let counts = vec![3, 5, 4, 8, 0, 2, 6];
        let series = CountSeries::new(counts.clone()).unwrap();
        let fit = fit_em(&series, 1, &EmConfig::default()).unwrap();
        let mean = counts.iter().sum::<u32>() as f64 / counts.len() as f64;
        let g = fit.model.emission().poisson_means().unwrap()[0];
        assert!((g - mean).abs() < 1e-12);
        let ll: f64 = counts.iter().map(|&y| crate::hmm::poisson_ln_pmf(mean, y)).sum();
        assert!((fit.loglik - ll).abs() < 1e-9);
        assert_eq!(fit.params, 1);
    }

    #[test]
    fn parameter_counts() {
        assert_eq!(parameter_count(1, None), 1);
        assert_eq!(parameter_count(5, None), 20 + 5 + 4);
        assert_eq!(parameter_count(2, Some(3)), 2 + 4 + 1);
    }

    #[test]
    fn quantize_examples() {
        let q = quantize(&[1, 2, 3, 4, 5, 6, 7, 8, 9], 3).unwrap();
        assert_eq!(q, vec![2, 2, 2, 1, 1, 1, 0, 0, 0]);
        assert_eq!(quantize(&[4; 10], 3).unwrap(), vec![0; 10]);
        assert!(quantize(&[1, 2], 1).is_err());
    }

    #[test]
    fn csv_input() {
        let text = "timestamp,viewers\n0,3\n300,5\n600,4\n";
        let s = CountSeries::from_csv_reader(text.as_bytes()).unwrap();
        assert_eq!(s.counts(), &[3, 5, 4]);
        assert_eq!(s.timestamps().unwrap().len(), 3);
        let s = CountSeries::from_csv_reader("count\n1\n2\n".as_bytes()).unwrap();
        assert_eq!(s.counts(), &[1, 2]);
        let err = CountSeries::from_csv_reader("viewers\n1\nx\n".as_bytes()).unwrap_err();
        assert!(err.to_string().contains("line 3"), "{err}");
    }
}
