//! NEAT-style evolution of CPPN genomes.
//!
//! Structural innovations carry global ids; the same `(from, to)` addition
//! made twice within one generation reuses one id. Genomes are grouped into
//! species by compatibility distance, each species reproduces into a fixed
//! number of slots, and the best members of every species survive unchanged.
//!
//! All randomness comes from streams derived from
//! `(master_seed, generation, index)`, so a population can be rebuilt
//! exactly from a checkpoint without storing generator state.

use std::collections::{BTreeMap, HashSet};

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cppn::{
    creates_cycle, Activation, ConnectionGene, CppnGenome, InnovationId, NodeGene, NodeId,
    NodeKind, INPUT_COUNT,
};
use crate::fitness::FitnessScore;

#[derive(Debug, Error)]
pub enum NeatError {
    #[error("population is empty")]
    EmptyPopulation,
    #[error("got {scores} scores for {genomes} genomes")]
    ScoreCountMismatch { scores: usize, genomes: usize },
    #[error("invalid NEAT parameters: {0}")]
    InvalidParams(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NeatParams {
    pub c1: f64,
    pub c2: f64,
    pub c3: f64,
    pub compatibility_threshold: f64,
    pub weight_mutate_rate: f64,
    pub weight_perturb_sigma: f64,
    pub add_connection_rate: f64,
    pub add_node_rate: f64,
    pub crossover_rate: f64,
    pub elitism_per_species: usize,
    pub stagnation_limit: u32,
    /// Share of each species (best first) allowed to parent offspring.
    pub parent_fraction: f64,
}

impl Default for NeatParams {
    fn default() -> Self {
        Self {
            c1: 1.0,
            c2: 1.0,
            c3: 0.4,
            compatibility_threshold: 3.0,
            weight_mutate_rate: 0.8,
            weight_perturb_sigma: 0.5,
            add_connection_rate: 0.1,
            add_node_rate: 0.03,
            crossover_rate: 0.75,
            elitism_per_species: 1,
            stagnation_limit: 15,
            parent_fraction: 0.5,
        }
    }
}

impl NeatParams {
    pub fn validate(&self) -> Result<(), NeatError> {
        let rates = [
            ("weight_mutate_rate", self.weight_mutate_rate),
            ("add_connection_rate", self.add_connection_rate),
            ("add_node_rate", self.add_node_rate),
            ("crossover_rate", self.crossover_rate),
        ];
        for (name, r) in rates {
            if !(0.0..=1.0).contains(&r) {
                return Err(NeatError::InvalidParams(format!(
                    "{name} = {r} not in [0, 1]"
                )));
            }
        }
        if !(self.parent_fraction > 0.0 && self.parent_fraction <= 1.0) {
            return Err(NeatError::InvalidParams(
                "parent_fraction must be in (0, 1]".into(),
            ));
        }
        if !(self.weight_perturb_sigma > 0.0) {
            return Err(NeatError::InvalidParams(
                "weight_perturb_sigma must be positive".into(),
            ));
        }
        if !(self.compatibility_threshold > 0.0) {
            return Err(NeatError::InvalidParams(
                "compatibility_threshold must be positive".into(),
            ));
        }
        if [self.c1, self.c2, self.c3].iter().any(|c| !(*c >= 0.0)) {
            return Err(NeatError::InvalidParams(
                "distance coefficients must be >= 0".into(),
            ));
        }
        Ok(())
    }
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed for the stream identified by `(master_seed, generation, index)`.
pub fn derive_seed(master_seed: u64, generation: u64, index: u64) -> u64 {
    splitmix64(splitmix64(splitmix64(master_seed) ^ generation) ^ index)
}

pub fn stream_rng(master_seed: u64, generation: u64, index: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(master_seed, generation, index))
}

/// Reserved stream index used while building the initial population.
const INIT_STREAM: u64 = u64::MAX;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct SplitIds {
    node: NodeId,
    in_innovation: InnovationId,
    out_innovation: InnovationId,
}

/// Hands out innovation and node ids.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InnovationTracker {
    next_innovation: InnovationId,
    next_node_id: NodeId,
    #[serde(skip)]
    connections: BTreeMap<(NodeId, NodeId), InnovationId>,
    #[serde(skip)]
    splits: BTreeMap<InnovationId, SplitIds>,
}

impl InnovationTracker {
    /// Ids below `4 * channels` belong to the input-to-output connections of
    /// [`minimal_genome`].
    pub fn new(channels: usize) -> Self {
        Self {
            next_innovation: (INPUT_COUNT * channels) as InnovationId,
            next_node_id: (INPUT_COUNT + channels) as NodeId,
            connections: BTreeMap::new(),
            splits: BTreeMap::new(),
        }
    }

    pub fn innovation_counter(&self) -> InnovationId {
        self.next_innovation
    }

    /// Forgets the structural additions of the previous generation.
    pub fn start_generation(&mut self) {
        self.connections.clear();
        self.splits.clear();
    }

    fn fresh_innovation(&mut self) -> InnovationId {
        let id = self.next_innovation;
        self.next_innovation += 1;
        id
    }

    fn fresh_node(&mut self) -> NodeId {
        let id = self.next_node_id;
        self.next_node_id += 1;
        id
    }

    pub fn connection_innovation(&mut self, from: NodeId, to: NodeId) -> InnovationId {
        if let Some(&id) = self.connections.get(&(from, to)) {
            return id;
        }
        let id = self.fresh_innovation();
        self.connections.insert((from, to), id);
        id
    }

    fn split(&mut self, genome: &CppnGenome, split_innovation: InnovationId) -> SplitIds {
        if let Some(&ids) = self.splits.get(&split_innovation) {
            // a genome that already holds this node (inherited through
            // crossover) needs a distinct one
            if genome.node(ids.node).is_none() {
                return ids;
            }
        }
        let ids = SplitIds {
            node: self.fresh_node(),
            in_innovation: self.fresh_innovation(),
            out_innovation: self.fresh_innovation(),
        };
        self.splits.entry(split_innovation).or_insert(ids);
        ids
    }
}

/// Every input wired to every output with N(0, 1) weights. Output
/// activations are drawn at random so the first generation is not uniformly
/// smooth.
pub fn minimal_genome(channels: usize, rng: &mut impl Rng) -> CppnGenome {
    let mut g = CppnGenome::bare(channels);
    for node in g.nodes.iter_mut().filter(|n| n.kind == NodeKind::Output) {
        node.activation = *Activation::ALL.choose(rng).expect("non-empty");
    }
    for i in 0..INPUT_COUNT {
        for c in 0..channels {
            g.connections.push(ConnectionGene {
                innovation_id: (i * channels + c) as InnovationId,
                from_node: i as NodeId,
                to_node: (INPUT_COUNT + c) as NodeId,
                weight: rng.sample(StandardNormal),
                enabled: true,
            });
        }
    }
    g
}

/// `c1*E/N + c2*D/N + c3*W`, with `E` excess genes, `D` disjoint genes,
/// `N` the larger connection count (at least 1) and `W` the mean absolute
/// weight difference over matching innovations.
pub fn compatibility_distance(a: &CppnGenome, b: &CppnGenome, p: &NeatParams) -> f64 {
    let mut ga: Vec<(InnovationId, f64)> = a
        .connections
        .iter()
        .map(|c| (c.innovation_id, c.weight))
        .collect();
    let mut gb: Vec<(InnovationId, f64)> = b
        .connections
        .iter()
        .map(|c| (c.innovation_id, c.weight))
        .collect();
    ga.sort_by_key(|g| g.0);
    gb.sort_by_key(|g| g.0);
    let max_a = ga.last().map(|g| g.0);
    let max_b = gb.last().map(|g| g.0);

    let (mut i, mut j) = (0, 0);
    let (mut excess, mut disjoint, mut matching) = (0usize, 0usize, 0usize);
    let mut weight_diff = 0.0;
    let is_excess = |id: InnovationId, other_max: Option<InnovationId>| match other_max {
        Some(m) => id > m,
        None => true,
    };
    while i < ga.len() || j < gb.len() {
        match (ga.get(i), gb.get(j)) {
            (Some(&(ia, wa)), Some(&(ib, wb))) if ia == ib => {
                matching += 1;
                weight_diff += (wa - wb).abs();
                i += 1;
                j += 1;
            }
            (Some(&(ia, _)), Some(&(ib, _))) if ia < ib => {
                if is_excess(ia, max_b) {
                    excess += 1
                } else {
                    disjoint += 1
                }
                i += 1;
            }
            (Some(_), Some(&(ib, _))) => {
                if is_excess(ib, max_a) {
                    excess += 1
                } else {
                    disjoint += 1
                }
                j += 1;
            }
            (Some(&(ia, _)), None) => {
                if is_excess(ia, max_b) {
                    excess += 1
                } else {
                    disjoint += 1
                }
                i += 1;
            }
            (None, Some(&(ib, _))) => {
                if is_excess(ib, max_a) {
                    excess += 1
                } else {
                    disjoint += 1
                }
                j += 1;
            }
            (None, None) => unreachable!(),
        }
    }
    let n = ga.len().max(gb.len()).max(1) as f64;
    let mean_diff = if matching > 0 {
        weight_diff / matching as f64
    } else {
        0.0
    };
    p.c1 * excess as f64 / n + p.c2 * disjoint as f64 / n + p.c3 * mean_diff
}

/// Applies weight perturbation, add-connection and add-node, each with its
/// configured probability.
#[must_use]
pub fn mutate(
    g: &CppnGenome,
    p: &NeatParams,
    rng: &mut impl Rng,
    tracker: &mut InnovationTracker,
) -> CppnGenome {
    let mut child = g.clone();
    if rng.random::<f64>() < p.weight_mutate_rate {
        for c in &mut child.connections {
            c.weight += p.weight_perturb_sigma * rng.sample::<f64, _>(StandardNormal);
        }
        for n in child.nodes.iter_mut().filter(|n| n.kind != NodeKind::Input) {
            n.bias += p.weight_perturb_sigma * rng.sample::<f64, _>(StandardNormal);
        }
    }
    if rng.random::<f64>() < p.add_connection_rate {
        add_connection(&mut child, rng, tracker);
    }
    if rng.random::<f64>() < p.add_node_rate {
        add_node(&mut child, rng, tracker);
    }
    child
}

/// Adds one new feed-forward connection from an input or hidden node to a
/// hidden or output node. No-op when no legal pair exists.
pub fn add_connection(g: &mut CppnGenome, rng: &mut impl Rng, tracker: &mut InnovationTracker) {
    let existing: HashSet<(NodeId, NodeId)> = g
        .connections
        .iter()
        .map(|c| (c.from_node, c.to_node))
        .collect();
    let mut sources: Vec<NodeId> = g
        .nodes
        .iter()
        .filter(|n| n.kind != NodeKind::Output)
        .map(|n| n.node_id)
        .collect();
    let mut targets: Vec<NodeId> = g
        .nodes
        .iter()
        .filter(|n| n.kind != NodeKind::Input)
        .map(|n| n.node_id)
        .collect();
    sources.sort_unstable();
    targets.sort_unstable();
    let candidates: Vec<(NodeId, NodeId)> = sources
        .iter()
        .flat_map(|&s| targets.iter().map(move |&t| (s, t)))
        .filter(|pair| !existing.contains(pair) && !creates_cycle(g, pair.0, pair.1))
        .collect();
    let Some(&(from, to)) = candidates.choose(rng) else {
        return;
    };
    g.connections.push(ConnectionGene {
        innovation_id: tracker.connection_innovation(from, to),
        from_node: from,
        to_node: to,
        weight: rng.sample(StandardNormal),
        enabled: true,
    });
}

/// Splits a random enabled connection `a -> b` into `a -> new -> b`; the old
/// gene is disabled, the incoming link gets weight 1 and the outgoing link
/// keeps the old weight.
pub fn add_node(g: &mut CppnGenome, rng: &mut impl Rng, tracker: &mut InnovationTracker) {
    let enabled: Vec<usize> = (0..g.connections.len())
        .filter(|&i| g.connections[i].enabled)
        .collect();
    let Some(&idx) = enabled.choose(rng) else {
        return;
    };
    let old = g.connections[idx].clone();
    let ids = tracker.split(g, old.innovation_id);
    g.connections[idx].enabled = false;
    g.nodes.push(NodeGene {
        node_id: ids.node,
        kind: NodeKind::Hidden,
        activation: *Activation::ALL.choose(rng).expect("non-empty"),
        bias: 0.0,
    });
    g.connections.push(ConnectionGene {
        innovation_id: ids.in_innovation,
        from_node: old.from_node,
        to_node: ids.node,
        weight: 1.0,
        enabled: true,
    });
    g.connections.push(ConnectionGene {
        innovation_id: ids.out_innovation,
        from_node: ids.node,
        to_node: old.to_node,
        weight: old.weight,
        enabled: true,
    });
}

/// Child with the fitter parent's structure. Genes present in both parents
/// are taken whole from either parent with equal probability; every other
/// gene and all node genes come from `fit_parent`.
#[must_use]
pub fn crossover(fit_parent: &CppnGenome, other: &CppnGenome, rng: &mut impl Rng) -> CppnGenome {
    let other_genes: BTreeMap<InnovationId, &ConnectionGene> = other
        .connections
        .iter()
        .map(|c| (c.innovation_id, c))
        .collect();
    let connections = fit_parent
        .connections
        .iter()
        .map(|c| match other_genes.get(&c.innovation_id) {
            Some(o) if rng.random::<bool>() => (*o).clone(),
            _ => c.clone(),
        })
        .collect();
    CppnGenome {
        nodes: fit_parent.nodes.clone(),
        connections,
    }
}

pub fn genome_json(g: &CppnGenome) -> String {
    serde_json::to_string(g).expect("genome serialization is infallible")
}

/// Index of the highest-scoring genome; ties go to the lexicographically
/// smallest serialized genome.
pub fn best_index(genomes: &[&CppnGenome], scores: &[FitnessScore]) -> Option<usize> {
    let mut best: Option<(usize, String)> = None;
    for (i, g) in genomes.iter().enumerate() {
        let better = match &best {
            None => true,
            Some((b, key)) => match scores[i].total.total_cmp(&scores[*b].total) {
                std::cmp::Ordering::Greater => true,
                std::cmp::Ordering::Less => false,
                std::cmp::Ordering::Equal => genome_json(g) < *key,
            },
        };
        if better {
            best = Some((i, genome_json(g)));
        }
    }
    best.map(|(i, _)| i)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Species {
    pub id: u64,
    pub representative: CppnGenome,
    pub members: Vec<CppnGenome>,
    pub stagnation_counter: u32,
    pub best_total: Option<f64>,
}

/// One generation's genomes grouped by species.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Population {
    pub species: Vec<Species>,
    pub generation: u64,
    pub innovations: InnovationTracker,
    pub master_seed: u64,
    pub species_count: usize,
    pub species_size: usize,
    pub channels: usize,
    next_species_id: u64,
}

impl Population {
    /// `species_count * species_size` minimal genomes, speciated.
    pub fn initial(
        master_seed: u64,
        channels: usize,
        species_count: usize,
        species_size: usize,
        p: &NeatParams,
    ) -> Result<Self, NeatError> {
        let total = species_count * species_size;
        if total == 0 {
            return Err(NeatError::EmptyPopulation);
        }
        let mut rng = stream_rng(master_seed, 0, INIT_STREAM);
        let genomes: Vec<CppnGenome> = (0..total)
            .map(|_| minimal_genome(channels, &mut rng))
            .collect();
        let mut pop = Population {
            species: Vec::new(),
            generation: 0,
            innovations: InnovationTracker::new(channels),
            master_seed,
            species_count,
            species_size,
            channels,
            next_species_id: 0,
        };
        for (rep, idxs) in speciate(&genomes, &[], p) {
            let id = pop.next_species_id;
            pop.next_species_id += 1;
            pop.species.push(Species {
                id,
                representative: rep.unwrap_or_else(|| genomes[idxs[0]].clone()),
                members: idxs.iter().map(|&i| genomes[i].clone()).collect(),
                stagnation_counter: 0,
                best_total: None,
            });
        }
        Ok(pop)
    }

    pub fn len(&self) -> usize {
        self.species.iter().map(|s| s.members.len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Members in species order; scores are always aligned with this order.
    pub fn genomes(&self) -> Vec<&CppnGenome> {
        self.species.iter().flat_map(|s| s.members.iter()).collect()
    }

    pub fn best(&self, scores: &[FitnessScore]) -> Result<(CppnGenome, FitnessScore), NeatError> {
        let genomes = self.genomes();
        self.check_scores(scores)?;
        let i = best_index(&genomes, scores).ok_or(NeatError::EmptyPopulation)?;
        Ok((genomes[i].clone(), scores[i]))
    }

    fn check_scores(&self, scores: &[FitnessScore]) -> Result<(), NeatError> {
        let n = self.len();
        if n == 0 {
            return Err(NeatError::EmptyPopulation);
        }
        if scores.len() != n {
            return Err(NeatError::ScoreCountMismatch {
                scores: scores.len(),
                genomes: n,
            });
        }
        Ok(())
    }

    /// Speciates the scored members, drops stagnant species (never the best
    /// one), keeps at most `species_count` species with `species_size` slots
    /// each, hands unused slots to the best species and refills every slot
    /// with elites or mutated offspring of the top-ranked members.
    pub fn next_generation(
        &self,
        scores: &[FitnessScore],
        p: &NeatParams,
    ) -> Result<Population, NeatError> {
        self.check_scores(scores)?;
        let genomes: Vec<CppnGenome> = self.genomes().into_iter().cloned().collect();
        let reps: Vec<(u64, &CppnGenome)> = self
            .species
            .iter()
            .map(|s| (s.id, &s.representative))
            .collect();
        let mut next_species_id = self.next_species_id;

        struct Group {
            id: u64,
            ranked: Vec<usize>,
            best: f64,
            stagnation: u32,
            best_total: f64,
        }
        let mut groups: Vec<Group> = Vec::new();
        let rep_ids: Vec<u64> = reps.iter().map(|r| r.0).collect();
        let rep_genomes: Vec<&CppnGenome> = reps.iter().map(|r| r.1).collect();
        for (slot, idxs) in speciate_against(&genomes, &rep_genomes, p) {
            if idxs.is_empty() {
                continue;
            }
            let id = match slot {
                Some(k) => rep_ids[k],
                None => {
                    next_species_id += 1;
                    next_species_id - 1
                }
            };
            let mut ranked = idxs;
            ranked.sort_by(|&a, &b| scores[b].total.total_cmp(&scores[a].total).then(a.cmp(&b)));
            let best = scores[ranked[0]].total;
            let previous = self.species.iter().find(|s| s.id == id);
            let (stagnation, best_total) = match previous.and_then(|s| s.best_total) {
                Some(prev_best) if best <= prev_best => {
                    (previous.map_or(0, |s| s.stagnation_counter) + 1, prev_best)
                }
                _ => (0, best),
            };
            groups.push(Group {
                id,
                ranked,
                best,
                stagnation,
                best_total,
            });
        }
        groups.sort_by(|a, b| b.best.total_cmp(&a.best).then(a.id.cmp(&b.id)));
        let mut kept: Vec<Group> = Vec::new();
        for (k, g) in groups.into_iter().enumerate() {
            if k > 0 && g.stagnation > p.stagnation_limit {
                continue;
            }
            if kept.len() < self.species_count {
                kept.push(g);
            }
        }

        let total = self.species_count * self.species_size;
        let mut slots: Vec<usize> = vec![self.species_size; kept.len()];
        slots[0] += total - self.species_size * kept.len();

        let mut innovations = self.innovations.clone();
        innovations.start_generation();
        let next_gen = self.generation + 1;
        let mut offspring_index = 0u64;
        let mut species = Vec::with_capacity(kept.len());
        for (g, &n_slots) in kept.iter().zip(&slots) {
            let mut members = Vec::with_capacity(n_slots);
            let elites = p.elitism_per_species.min(n_slots).min(g.ranked.len());
            members.extend(g.ranked[..elites].iter().map(|&i| genomes[i].clone()));
            let n_parents = ((g.ranked.len() as f64 * p.parent_fraction).ceil() as usize)
                .clamp(1, g.ranked.len());
            let parents = &g.ranked[..n_parents];
            while members.len() < n_slots {
                let mut rng = stream_rng(self.master_seed, next_gen, offspring_index);
                offspring_index += 1;
                let a = rng.random_range(0..parents.len());
                let base = if parents.len() > 1 && rng.random::<f64>() < p.crossover_rate {
                    let mut b = rng.random_range(0..parents.len() - 1);
                    if b >= a {
                        b += 1;
                    }
                    // `parents` is ranked, so the lower position is fitter
                    let (fit, other) = (parents[a.min(b)], parents[a.max(b)]);
                    crossover(&genomes[fit], &genomes[other], &mut rng)
                } else {
                    genomes[parents[a]].clone()
                };
                members.push(mutate(&base, p, &mut rng, &mut innovations));
            }
            species.push(Species {
                id: g.id,
                representative: genomes[g.ranked[0]].clone(),
                members,
                stagnation_counter: g.stagnation,
                best_total: Some(g.best_total),
            });
        }

        Ok(Population {
            species,
            generation: next_gen,
            innovations,
            master_seed: self.master_seed,
            species_count: self.species_count,
            species_size: self.species_size,
            channels: self.channels,
            next_species_id,
        })
    }
}

/// Groups genomes that start without representatives.
fn speciate(
    genomes: &[CppnGenome],
    reps: &[&CppnGenome],
    p: &NeatParams,
) -> Vec<(Option<CppnGenome>, Vec<usize>)> {
    speciate_against(genomes, reps, p)
        .into_iter()
        .filter(|(_, idxs)| !idxs.is_empty())
        .map(|(slot, idxs)| (slot.map(|k| reps[k].clone()), idxs))
        .collect()
}

/// Assigns each genome, in order, to the closest representative within the
/// compatibility threshold (existing representatives first, then the
/// founders of species opened earlier in this pass); otherwise it founds a
/// new species. Returns `(Some(rep index) | None, member indices)` per
/// species, existing ones first.
fn speciate_against(
    genomes: &[CppnGenome],
    reps: &[&CppnGenome],
    p: &NeatParams,
) -> Vec<(Option<usize>, Vec<usize>)> {
    let mut groups: Vec<(Option<usize>, Vec<usize>)> =
        (0..reps.len()).map(|k| (Some(k), Vec::new())).collect();
    let mut founders: Vec<usize> = Vec::new();
    for (i, g) in genomes.iter().enumerate() {
        let mut best: Option<(usize, f64)> = None;
        let candidates = reps
            .iter()
            .copied()
            .chain(founders.iter().map(|&f| &genomes[f]));
        for (k, rep) in candidates.enumerate() {
            let d = compatibility_distance(g, rep, p);
            if d < p.compatibility_threshold && best.is_none_or(|(_, bd)| d < bd) {
                best = Some((k, d));
            }
        }
        match best {
            Some((k, _)) => groups[k].1.push(i),
            None => {
                founders.push(i);
                groups.push((None, vec![i]));
            }
        }
    }
    groups
}
