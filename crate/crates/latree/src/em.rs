//! Maximum-likelihood parameter estimation by EM with random restarts,
//! BIC scoring, and latent class cardinality selection.

use std::collections::BTreeMap;

use rand::Rng;
use rayon::prelude::*;

use crate::data::DataSet;
use crate::error::{Error, Result};
use crate::inference;
use crate::model::LatentTreeModel;
use crate::parallel;
use crate::seeding;

#[derive(Debug, Clone)]
pub struct EmConfig {
    pub max_iterations: usize,
    /// Relative improvement threshold: (l_t - l_{t-1}) / (|l_{t-1}| + 1).
    pub tolerance: f64,
    pub restarts: usize,
    pub seed: u64,
    pub m_step_smoothing: f64,
}

impl Default for EmConfig {
    fn default() -> Self {
        EmConfig {
            max_iterations: 500,
            tolerance: 1e-6,
            restarts: 16,
            seed: 0,
            m_step_smoothing: 0.0,
        }
    }
}

impl EmConfig {
    fn check(&self) -> Result<()> {
        if self.max_iterations < 1 {
            return Err(Error::InvalidConfig("maxIterations must be >= 1".into()));
        }
        if !(self.tolerance > 0.0) {
            return Err(Error::InvalidConfig("tolerance must be > 0".into()));
        }
        if self.restarts < 1 {
            return Err(Error::InvalidConfig("restarts must be >= 1".into()));
        }
        if self.m_step_smoothing < 0.0 {
            return Err(Error::InvalidConfig("mStepSmoothing must be >= 0".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct FitResult {
    pub model: LatentTreeModel,
    pub loglik: f64,
    pub bic: f64,
    /// Log-likelihood after every EM iteration of the winning restart.
    pub iteration_trace: Vec<f64>,
    /// Final log-likelihood of each restart, in restart order.
    pub restart_logliks: Vec<f64>,
}

/// BIC in the maximized convention: loglik - (d/2) ln N.
pub fn bic_score(loglik: f64, dimension: usize, total_weight: f64) -> f64 {
    loglik - dimension as f64 / 2.0 * total_weight.ln()
}

/// BIC of a model on a dataset whose variables are the model's observed set.
pub fn bic(model: &LatentTreeModel, dataset: &DataSet) -> Result<f64> {
    let n = dataset.total_weight();
    if !(n > 0.0) {
        return Err(Error::ZeroWeight);
    }
    let ll = inference::dataset_loglik(model, dataset)?;
    Ok(bic_score(ll, model.dimension(), n))
}

/// Dataset lowered onto a model: one clamp slot per model node, rows
/// deduplicated with summed weights in a deterministic order.
pub(crate) struct EmData {
    nodes: Vec<usize>,
    rows: Vec<(Vec<Option<u32>>, f64)>,
    pub total_weight: f64,
}

pub(crate) fn compile_data(model: &LatentTreeModel, dataset: &DataSet) -> Result<EmData> {
    if dataset.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let observed = model.observed_names();
    let mut nodes = Vec::with_capacity(observed.len());
    let mut cols = Vec::with_capacity(observed.len());
    let mut missing = Vec::new();
    for name in &observed {
        match dataset.column_index(name) {
            Some(c) => {
                cols.push(c);
                nodes.push(model.index_of(name)?);
            }
            None => missing.push(name.clone()),
        }
    }
    if !missing.is_empty() {
        return Err(Error::VariableMismatch(missing));
    }
    let mut grouped: BTreeMap<Vec<Option<u32>>, f64> = BTreeMap::new();
    for (rec, &w) in dataset.records().iter().zip(dataset.weights()) {
        let row: Vec<Option<u32>> = cols.iter().map(|&c| rec[c]).collect();
        for (k, cell) in row.iter().enumerate() {
            if let Some(v) = cell {
                let node = nodes[k];
                if *v as usize >= model.card(node) {
                    return Err(Error::StateOutOfRange {
                        variable: model.var(node).name.clone(),
                        state: *v as usize,
                        cardinality: model.card(node),
                    });
                }
            }
        }
        *grouped.entry(row).or_insert(0.0) += w;
    }
    let rows: Vec<(Vec<Option<u32>>, f64)> = grouped.into_iter().collect();
    let total_weight = rows.iter().map(|(_, w)| w).sum();
    if !(total_weight > 0.0) {
        return Err(Error::ZeroWeight);
    }
    Ok(EmData {
        nodes,
        rows,
        total_weight,
    })
}

impl EmData {
    fn clamps(&self, model: &LatentTreeModel, row: &[Option<u32>]) -> Vec<Option<usize>> {
        let mut clamps = vec![None; model.variables().len()];
        for (&node, cell) in self.nodes.iter().zip(row) {
            if let Some(v) = cell {
                clamps[node] = Some(*v as usize);
            }
        }
        clamps
    }
}

/// Expected counts in the shape of the model's tables.
struct Stats {
    counts: Vec<Vec<f64>>,
    loglik: f64,
}

impl Stats {
    fn zero(model: &LatentTreeModel) -> Stats {
        Stats {
            counts: (0..model.variables().len())
                .map(|v| vec![0.0; model.table(v).len()])
                .collect(),
            loglik: 0.0,
        }
    }

    fn add(mut self, other: Stats) -> Stats {
        for (a, b) in self.counts.iter_mut().zip(other.counts) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += y;
            }
        }
        self.loglik += other.loglik;
        self
    }
}

fn e_step(model: &LatentTreeModel, data: &EmData) -> Result<Stats> {
    parallel::chunked_fold(
        &data.rows,
        |chunk| {
            let mut stats = Stats::zero(model);
            for (row, w) in chunk {
                let clamps = data.clamps(model, row);
                let beliefs = inference::propagate(model, &clamps)?;
                stats.loglik += w * beliefs.loglik;
                let root = model.root_index();
                for (x, p) in beliefs.node_posterior(root).iter().enumerate() {
                    stats.counts[root][x] += w * p;
                }
                for v in 0..model.variables().len() {
                    if model.parent_of(v).is_some() {
                        for (i, p) in beliefs.edge_posterior(v).iter().enumerate() {
                            stats.counts[v][i] += w * p;
                        }
                    }
                }
            }
            Ok(stats)
        },
        Ok(Stats::zero(model)),
        |a, b| match (a, b) {
            (Ok(a), Ok(b)) => Ok(a.add(b)),
            (Err(e), _) | (_, Err(e)) => Err(e),
        },
    )
}

fn m_step(model: &mut LatentTreeModel, stats: &Stats, smoothing: f64, mask: Option<&[bool]>) {
    for v in 0..model.variables().len() {
        if let Some(mask) = mask {
            if !mask[v] {
                continue;
            }
        }
        let card = model.card(v);
        let table = model.table_mut(v);
        let rows = table.len() / card;
        for r in 0..rows {
            let row = &mut table[r * card..(r + 1) * card];
            let mut sum = 0.0;
            for (x, cell) in row.iter_mut().enumerate() {
                *cell = stats.counts[v][r * card + x] + smoothing;
                sum += *cell;
            }
            if sum > 0.0 {
                for cell in row.iter_mut() {
                    *cell /= sum;
                }
            } else {
                for cell in row.iter_mut() {
                    *cell = 1.0 / card as f64;
                }
            }
        }
    }
}

pub(crate) fn data_loglik(model: &LatentTreeModel, data: &EmData) -> f64 {
    parallel::chunked_sum(&data.rows, |(row, w)| {
        let clamps = data.clamps(model, row);
        w * inference::clamped_loglik(model, &clamps)
    })
}

/// Run EM in place. Returns the iteration trace; the last entry is the
/// log-likelihood of the returned parameters. `mask` restricts the M-step
/// to the flagged nodes (local EM for structure-search screening).
pub(crate) fn em_run(
    model: &mut LatentTreeModel,
    data: &EmData,
    max_iterations: usize,
    tolerance: f64,
    smoothing: f64,
    mask: Option<&[bool]>,
) -> Result<Vec<f64>> {
    let mut trace = Vec::new();
    let mut prev: Option<f64> = None;
    for _ in 0..max_iterations {
        let stats = e_step(model, data)?;
        trace.push(stats.loglik);
        if let Some(p) = prev {
            if (stats.loglik - p) / (p.abs() + 1.0) < tolerance {
                return Ok(trace);
            }
        }
        m_step(model, &stats, smoothing, mask);
        prev = Some(stats.loglik);
    }
    // budget exhausted after an M-step: score the final parameters
    trace.push(data_loglik(model, data));
    Ok(trace)
}

/// Draw every table row from a symmetric Dirichlet(1).
pub(crate) fn random_init<R: Rng>(model: &mut LatentTreeModel, rng: &mut R) {
    for v in 0..model.variables().len() {
        let card = model.card(v);
        let table = model.table_mut(v);
        let rows = table.len() / card;
        for r in 0..rows {
            let row = &mut table[r * card..(r + 1) * card];
            let mut sum = 0.0;
            for cell in row.iter_mut() {
                let u: f64 = rng.random();
                *cell = -(1.0 - u).ln();
                sum += *cell;
            }
            if sum > 0.0 {
                for cell in row.iter_mut() {
                    *cell /= sum;
                }
            } else {
                for cell in row.iter_mut() {
                    *cell = 1.0 / card as f64;
                }
            }
        }
    }
}

/// Fit the skeleton's parameters by EM, keeping the best of
/// `config.restarts` random initializations.
pub fn fit_em(
    skeleton: &LatentTreeModel,
    dataset: &DataSet,
    config: &EmConfig,
) -> Result<FitResult> {
    config.check()?;
    let violations = skeleton.validate();
    if !violations.is_empty() {
        return Err(Error::InvalidModel(violations));
    }
    let data = compile_data(skeleton, dataset)?;
    let runs: Vec<Result<(LatentTreeModel, Vec<f64>)>> = (0..config.restarts)
        .into_par_iter()
        .map(|r| {
            let mut model = skeleton.clone();
            let mut rng = seeding::stream_rng(config.seed, "em-restart", r as u64);
            random_init(&mut model, &mut rng);
            let trace = em_run(
                &mut model,
                &data,
                config.max_iterations,
                config.tolerance,
                config.m_step_smoothing,
                None,
            )?;
            Ok((model, trace))
        })
        .collect();
    let mut best: Option<(usize, LatentTreeModel, Vec<f64>)> = None;
    let mut restart_logliks = Vec::with_capacity(config.restarts);
    for (r, run) in runs.into_iter().enumerate() {
        let (model, trace) = run?;
        let ll = *trace.last().expect("trace is never empty");
        restart_logliks.push(ll);
        let better = match &best {
            None => true,
            Some((_, _, best_trace)) => ll > *best_trace.last().unwrap(),
        };
        if better {
            best = Some((r, model, trace));
        }
    }
    let (_, model, iteration_trace) = best.expect("restarts >= 1");
    let loglik = *iteration_trace.last().unwrap();
    let bic = bic_score(loglik, model.dimension(), data.total_weight);
    Ok(FitResult {
        model,
        loglik,
        bic,
        iteration_trace,
        restart_logliks,
    })
}

#[derive(Debug)]
pub struct LcaFit {
    /// One fit per requested cardinality, ascending.
    pub cardinalities: Vec<usize>,
    pub fits: Vec<FitResult>,
    /// Index into `fits` of the BIC-selected cardinality.
    pub selected: usize,
}

impl LcaFit {
    pub fn best(&self) -> &FitResult {
        &self.fits[self.selected]
    }

    pub fn selected_cardinality(&self) -> usize {
        self.cardinalities[self.selected]
    }
}

/// Fit one LCM per cardinality over the named variables and select the
/// cardinality maximizing BIC. Ties within 1e-6 go to the smaller one.
pub fn fit_lca(
    dataset: &DataSet,
    variables: &[String],
    cardinality_range: &[usize],
    config: &EmConfig,
) -> Result<LcaFit> {
    if cardinality_range.is_empty() {
        return Err(Error::InvalidConfig("cardinality range is empty".into()));
    }
    if cardinality_range.iter().any(|&c| c < 1) {
        return Err(Error::InvalidConfig(
            "latent cardinalities must be >= 1".into(),
        ));
    }
    let names: Vec<String> = if variables.is_empty() {
        dataset.variables().to_vec()
    } else {
        variables.to_vec()
    };
    let projected = dataset.project(&names)?;
    let cards = projected.inferred_cardinalities();
    let leaves: Vec<(String, usize)> = names.into_iter().zip(cards).collect();
    let latent = next_latent_name(
        &leaves.iter().map(|(n, _)| n.clone()).collect::<Vec<_>>(),
        1,
    );
    let mut cardinalities: Vec<usize> = cardinality_range.to_vec();
    cardinalities.sort_unstable();
    cardinalities.dedup();
    let mut fits = Vec::with_capacity(cardinalities.len());
    for &k in &cardinalities {
        let skeleton = LatentTreeModel::lcm_skeleton(&latent, k, &leaves)?;
        fits.push(fit_em(&skeleton, &projected, config)?);
    }
    let mut selected = 0;
    for i in 1..fits.len() {
        if fits[i].bic > fits[selected].bic + 1e-6 {
            selected = i;
        }
    }
    Ok(LcaFit {
        cardinalities,
        fits,
        selected,
    })
}

/// First name of the form Y01, Y02, ... not already taken.
pub(crate) fn next_latent_name(taken: &[String], start: usize) -> String {
    let mut k = start;
    loop {
        let name = format!("Y{k:02}");
        if !taken.iter().any(|t| t == &name) {
            return name;
        }
        k += 1;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_state_lcm(p_child_s1: f64, leaves: usize) -> LatentTreeModel {
        let leaf_list: Vec<(String, usize)> = (0..leaves).map(|i| (format!("x{i}"), 2)).collect();
        let mut m = LatentTreeModel::lcm_skeleton("Y01", 2, &leaf_list).unwrap();
        let root = m.index_of("Y01").unwrap();
        *m.table_mut(root) = vec![0.5, 0.5];
        for (name, _) in &leaf_list {
            let idx = m.index_of(name).unwrap();
            *m.table_mut(idx) = vec![p_child_s1, 1.0 - p_child_s1, 1.0 - p_child_s1, p_child_s1];
        }
        m
    }

    #[test]
    fn card_one_latent_recovers_empirical_frequencies() {
        let csv = "a,b\n0,1\n0,0\n1,1\n0,1\n";
        let ds = DataSet::parse_csv(csv, "t.csv").unwrap();
        let skeleton =
            LatentTreeModel::lcm_skeleton("Y01", 1, &[("a".into(), 2), ("b".into(), 2)]).unwrap();
        let cfg = EmConfig {
            restarts: 1,
            ..Default::default()
        };
        let fit = fit_em(&skeleton, &ds, &cfg).unwrap();
        let a = fit.model.marginal(&["a".into()]).unwrap();
        assert!((a.values[0] - 0.75).abs() < 1e-12);
        let b = fit.model.marginal(&["b".into()]).unwrap();
        assert!((b.values[1] - 0.75).abs() < 1e-12);
    }

    #[test]
    fn traces_are_monotone() {
        let gen = two_state_lcm(0.8, 3);
        let data = gen.forward_sample(400, 11);
        let cfg = EmConfig {
            restarts: 4,
            max_iterations: 60,
            seed: 5,
            ..Default::default()
        };
        let fit = fit_em(&gen, &data, &cfg).unwrap();
        for w in fit.iteration_trace.windows(2) {
            assert!(w[1] >= w[0] - 1e-9, "trace decreased: {w:?}");
        }
        assert_eq!(fit.restart_logliks.len(), 4);
        assert!(fit.model.validate().is_empty());
    }

    #[test]
    fn recovers_well_separated_two_state_lcm() {
        let gen = two_state_lcm(0.9, 4);
        let data = gen.forward_sample(10_000, 42);
        let cfg = EmConfig {
            seed: 1,
            restarts: 8,
            ..Default::default()
        };
        let fit = fit_em(&gen, &data, &cfg).unwrap();
        let true_ll = inference::dataset_loglik(&gen, &data).unwrap();
        let per_record_gap = (fit.loglik - true_ll).abs() / 10_000.0;
        assert!(per_record_gap < 0.01, "gap {per_record_gap}");
    }

    #[test]
    fn smoothing_keeps_probabilities_interior() {
        let csv = "a,b\n0,0\n0,0\n0,0\n1,1\n";
        let ds = DataSet::parse_csv(csv, "t.csv").unwrap();
        let skeleton =
            LatentTreeModel::lcm_skeleton("Y01", 2, &[("a".into(), 2), ("b".into(), 2)]).unwrap();
        let cfg = EmConfig {
            restarts: 2,
            m_step_smoothing: 1e-4,
            seed: 3,
            ..Default::default()
        };
        let fit = fit_em(&skeleton, &ds, &cfg).unwrap();
        for v in 0..fit.model.variables().len() {
            for &p in fit.model.table(v) {
                assert!(p > 0.0 && p < 1.0, "boundary probability {p}");
            }
        }
    }

    #[test]
    #[allow(clippy::approx_constant)] // -2.3026 is the frozen hand value
    fn bic_matches_hand_computation() {
        // one binary variable, card-1 latent, 100 records of state 0
        let ds = DataSet::from_records(
            vec!["a".into()],
            (0..100).map(|_| vec![Some(0)]).collect(),
            None,
        )
        .unwrap();
        let skeleton = LatentTreeModel::lcm_skeleton("Y01", 1, &[("a".into(), 2)]).unwrap();
        let cfg = EmConfig {
            restarts: 1,
            ..Default::default()
        };
        let fit = fit_em(&skeleton, &ds, &cfg).unwrap();
        assert!(fit.loglik.abs() < 1e-12);
        assert!((fit.bic - (-0.5 * 100.0f64.ln())).abs() < 1e-9);
        assert!((fit.bic - (-2.3026)).abs() < 1e-4);
        // doubling the dimension at equal loglik lowers BIC by (d/2) ln N
        let b1 = bic_score(-10.0, 2, 100.0);
        let b2 = bic_score(-10.0, 4, 100.0);
        assert!((b1 - b2 - 100.0f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn singleton_cardinality_range_is_selected_trivially() {
        let gen = two_state_lcm(0.85, 3);
        let data = gen.forward_sample(300, 9);
        let cfg = EmConfig {
            restarts: 2,
            seed: 4,
            ..Default::default()
        };
        let lca = fit_lca(&data, &[], &[3], &cfg).unwrap();
        assert_eq!(lca.fits.len(), 1);
        assert_eq!(lca.selected_cardinality(), 3);
    }

    #[test]
    fn empty_dataset_is_rejected() {
        let ds = DataSet::from_records(vec!["a".into()], vec![], None).unwrap();
        let skeleton = LatentTreeModel::lcm_skeleton("Y01", 2, &[("a".into(), 2)]).unwrap();
        assert!(matches!(
            fit_em(&skeleton, &ds, &EmConfig::default()),
            Err(Error::EmptyDataset)
        ));
    }

    #[test]
    fn latent_names_avoid_collisions() {
        assert_eq!(next_latent_name(&[], 1), "Y01");
        assert_eq!(next_latent_name(&["Y01".into(), "Y02".into()], 1), "Y03");
    }
}
