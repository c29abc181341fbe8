//! Exact event-driven simulation of the branching process with full genealogy.

use std::ops::Range;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::Exp1;
use serde::{Deserialize, Serialize};

use crate::error::{domain, Error, Result};
use crate::offspring::OffspringMeasure;

pub const DEFAULT_POPULATION_CAP: usize = 1_000_000;

pub type IndividualId = u32;

/// One reproduction event: `parent` is replaced by `offspring_count` children
/// with consecutive ids starting at `first_child`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Event {
    pub time: f64,
    pub parent: IndividualId,
    pub first_child: IndividualId,
    pub offspring_count: u32,
}

impl Event {
    pub fn child_ids(&self) -> Range<IndividualId> {
        self.first_child..self.first_child + self.offspring_count
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Individual {
    pub birth_time: f64,
    /// Index into [`GenealogyForest::events`]; `None` for founders.
    pub parent_event: Option<u32>,
}

/// The population at the horizon together with every reproduction event.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenealogyForest {
    pub horizon: f64,
    founders: u32,
    individuals: Vec<Individual>,
    events: Vec<Event>,
    alive: Vec<IndividualId>,
}

impl GenealogyForest {
    pub fn founders(&self) -> Range<IndividualId> {
        0..self.founders
    }

    pub fn events(&self) -> &[Event] {
        &self.events
    }

    pub fn individual(&self, id: IndividualId) -> &Individual {
        &self.individuals[id as usize]
    }

    pub fn individual_count(&self) -> usize {
        self.individuals.len()
    }

    /// Ids alive at the horizon, in simulation order.
    pub fn alive(&self) -> &[IndividualId] {
        &self.alive
    }

    /// `Z_t`.
    pub fn population(&self) -> usize {
        self.alive.len()
    }

    pub fn parent(&self, id: IndividualId) -> Option<IndividualId> {
        self.individual(id)
            .parent_event
            .map(|e| self.events[e as usize].parent)
    }

    /// Ancestry of `id` from its founder down to `id` itself.
    pub fn lineage(&self, id: IndividualId) -> Vec<IndividualId> {
        let mut chain = vec![id];
        let mut current = id;
        while let Some(p) = self.parent(current) {
            chain.push(p);
            current = p;
        }
        chain.reverse();
        chain
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimulationConfig {
    pub population_cap: usize,
}

impl Default for SimulationConfig {
    fn default() -> Self {
        SimulationConfig {
            population_cap: DEFAULT_POPULATION_CAP,
        }
    }
}

/// Simulates from `x` founders up to time `t`; deterministic in `seed`.
pub fn simulate(m: &OffspringMeasure, x: u32, t: f64, seed: u64) -> Result<GenealogyForest> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    simulate_with(m, x, t, &mut rng, &SimulationConfig::default())
}

/// Gillespie scheme: with `z` individuals alive the next event comes after an
/// `Exp(z μ(ℕ))` time, hits a uniformly chosen individual and replaces it by
/// `n` children drawn from `μ(n)/μ(ℕ)`.
pub fn simulate_with<R: Rng + ?Sized>(
    m: &OffspringMeasure,
    x: u32,
    t: f64,
    rng: &mut R,
    cfg: &SimulationConfig,
) -> Result<GenealogyForest> {
    if !(t.is_finite() && t >= 0.0) {
        return domain(format!("horizon t = {t} must be finite and non-negative"));
    }
    let mut individuals: Vec<Individual> = (0..x)
        .map(|_| Individual {
            birth_time: 0.0,
            parent_event: None,
        })
        .collect();
    let mut alive: Vec<IndividualId> = (0..x).collect();
    let mut events = Vec::new();
    let rate = m.total_rate();
    let support = m.support();
    let mut clock = 0.0;

    while !alive.is_empty() {
        let wait: f64 = rng.sample::<f64, _>(Exp1) / (alive.len() as f64 * rate);
        clock += wait;
        if clock >= t {
            break;
        }
        let slot = rng.random_range(0..alive.len());
        let parent = alive.swap_remove(slot);
        let n = draw_offspring(support, rate, rng);
        let first_child = individuals.len() as IndividualId;
        let event_index = events.len() as u32;
        for _ in 0..n {
            let id = individuals.len() as IndividualId;
            individuals.push(Individual {
                birth_time: clock,
                parent_event: Some(event_index),
            });
            alive.push(id);
        }
        events.push(Event {
            time: clock,
            parent,
            first_child,
            offspring_count: n,
        });
        if alive.len() > cfg.population_cap {
            return Err(Error::PopulationExplosion {
                population: alive.len(),
                cap: cfg.population_cap,
                time: clock,
            });
        }
    }
    Ok(GenealogyForest {
        horizon: t,
        founders: x,
        individuals,
        events,
        alive,
    })
}

fn draw_offspring<R: Rng + ?Sized>(support: &[(u32, f64)], total: f64, rng: &mut R) -> u32 {
    let u = rng.random::<f64>() * total;
    let mut acc = 0.0;
    for &(n, w) in support {
        acc += w;
        if u < acc {
            return n;
        }
    }
    support.last().map_or(0, |&(n, _)| n)
}

/// `k` individuals sampled without replacement and their coalescence times.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleResult {
    pub sampled_ids: Vec<IndividualId>,
    /// Row-major `k × k` matrix; the diagonal is zero and carries no meaning.
    pairwise: Vec<f64>,
}

impl SampleResult {
    pub fn k(&self) -> usize {
        self.sampled_ids.len()
    }

    /// `T(σ_i, σ_j)`; `∞` when the two descend from different founders.
    pub fn pairwise(&self, i: usize, j: usize) -> f64 {
        self.pairwise[i * self.k() + j]
    }

    /// `T_1..T_{k−1}`: the first sampled individual against each other one.
    pub fn t_vector(&self) -> Vec<f64> {
        (1..self.k()).map(|j| self.pairwise(0, j)).collect()
    }

    /// `T*_1 ≤ … ≤ T*_{k−1}`: merge times of the sample genealogy, with an
    /// `m`-fold merger counted `m − 1` times.
    ///
    /// Equivalent to the edge weights of a minimum spanning tree of the
    /// ultrametric `T`.
    pub fn t_star(&self) -> Vec<f64> {
        let k = self.k();
        let mut pairs: Vec<(f64, usize, usize)> = (0..k)
            .flat_map(|i| ((i + 1)..k).map(move |j| (i, j)))
            .map(|(i, j)| (self.pairwise(i, j), i, j))
            .collect();
        pairs.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
        let mut root: Vec<usize> = (0..k).collect();
        fn find(root: &mut [usize], mut i: usize) -> usize {
            while root[i] != i {
                root[i] = root[root[i]];
                i = root[i];
            }
            i
        }
        let mut merges = Vec::with_capacity(k.saturating_sub(1));
        for (time, i, j) in pairs {
            let (a, b) = (find(&mut root, i), find(&mut root, j));
            if a != b {
                root[a] = b;
                merges.push(time);
            }
        }
        merges
    }

    /// True when two finite merge times coincide (a multiple merger).
    pub fn has_tied_merges(&self) -> bool {
        self.t_star()
            .windows(2)
            .any(|w| w[0].is_finite() && w[0] == w[1])
    }
}

/// Samples `k` distinct alive individuals uniformly (ordered) and traces
/// their lineages.
pub fn sample_and_trace<R: Rng + ?Sized>(
    forest: &GenealogyForest,
    k: usize,
    rng: &mut R,
) -> Result<SampleResult> {
    let alive = forest.alive();
    if alive.len() < k {
        return Err(Error::InsufficientPopulation {
            needed: k,
            alive: alive.len(),
        });
    }
    let mut slots: Vec<usize> = Vec::with_capacity(k);
    while slots.len() < k {
        let candidate = rng.random_range(0..alive.len());
        if !slots.contains(&candidate) {
            slots.push(candidate);
        }
    }
    let sampled_ids: Vec<IndividualId> = slots.iter().map(|&i| alive[i]).collect();
    Ok(trace(forest, sampled_ids))
}

/// Coalescence times for a fixed set of alive individuals.
pub fn trace(forest: &GenealogyForest, sampled_ids: Vec<IndividualId>) -> SampleResult {
    let k = sampled_ids.len();
    let lineages: Vec<Vec<IndividualId>> = sampled_ids.iter().map(|&id| forest.lineage(id)).collect();
    let mut pairwise = vec![0.0; k * k];
    for i in 0..k {
        for j in (i + 1)..k {
            let value = coalescence_time(forest, &lineages[i], &lineages[j]);
            pairwise[i * k + j] = value;
            pairwise[j * k + i] = value;
        }
    }
    SampleResult {
        sampled_ids,
        pairwise,
    }
}

/// `t − τ`, where `τ` is the event at which the two lineages last separate.
fn coalescence_time(forest: &GenealogyForest, a: &[IndividualId], b: &[IndividualId]) -> f64 {
    let shared = a.iter().zip(b).take_while(|(x, y)| x == y).count();
    if shared == 0 {
        return f64::INFINITY;
    }
    // a[shared] and b[shared] are distinct children of one event.
    let split = forest.individual(a[shared]).birth_time;
    forest.horizon - split
}
