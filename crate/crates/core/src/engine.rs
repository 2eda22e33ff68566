//! Population management: initialization, gene-pool optimal mixing, the
//! generation loop and the interleaved multistart scheduler.

use std::sync::Arc;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::Rng as _;
use rayon::prelude::*;
use serde::Serialize;
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::evaluator::{EvaluationBudget, FitnessContext, FitnessError, FitnessValue};
use crate::linkage::{BinningRule, Fos, LinkageError, LinkageModel, MeasureKind, SimilarityMatrix};
use crate::seed::{derive_seed, rng_from, Rng};
use crate::template::{ActivityMask, Genotype, Signature, Symbol, TemplateError};

/// Probability that a grow-method node is an operator.
pub const DEFAULT_P_OP: f64 = 0.5;
pub const IMS_BASE_SIZE: usize = 64;
pub const IMS_SUBGENERATIONS: usize = 10;
/// Hard cap on the number of populations an IMS run may create.
pub const IMS_MAX_POPULATIONS: usize = 24;

const INIT_STREAM: u64 = 1;
const LINKAGE_STREAM: u64 = 2;
const GOM_STREAM: u64 = 3;

#[derive(Debug, Error)]
pub enum EngineError {
    #[error("evaluation budget exhausted")]
    BudgetExhausted,
    #[error("population size must be at least 2, got {0}")]
    PopulationTooSmall(usize),
    #[error(transparent)]
    Linkage(#[from] LinkageError),
    #[error(transparent)]
    Template(#[from] TemplateError),
    #[error("fitness evaluation failed: {0}")]
    Fitness(FitnessError),
}

impl From<FitnessError> for EngineError {
    fn from(e: FitnessError) -> Self {
        match e {
            FitnessError::BudgetExhausted { .. } => EngineError::BudgetExhausted,
            FitnessError::Template(t) => EngineError::Template(t),
            other => EngineError::Fitness(other),
        }
    }
}

/// Settings shared by every population of a run.
#[derive(Debug, Clone)]
pub struct EngineOptions {
    pub measure: MeasureKind,
    pub binning: BinningRule,
    pub p_op: f64,
    /// Mix offspring on the rayon pool when the budget cannot run out
    /// within the step.
    pub parallel: bool,
    /// Stamp trace points with elapsed milliseconds. Off by default since it
    /// makes records differ between otherwise identical runs.
    pub wall_clock: bool,
}

impl Default for EngineOptions {
    fn default() -> Self {
        Self {
            measure: MeasureKind::Node,
            binning: BinningRule::default(),
            p_op: DEFAULT_P_OP,
            parallel: false,
            wall_clock: false,
        }
    }
}

/// Best-so-far bookkeeping over all evaluations of a run.
#[derive(Debug, Clone, Default)]
pub struct BestTracker {
    best: Option<(Genotype, FitnessValue)>,
    trace: Vec<TracePoint>,
    clock: Option<Instant>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TracePoint {
    pub evaluations: u64,
    pub r2: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub wall_ms: Option<u64>,
}

impl BestTracker {
    pub fn new(wall_clock: bool) -> Self {
        Self {
            clock: wall_clock.then(Instant::now),
            ..Self::default()
        }
    }

    fn best_fitness(&self) -> FitnessValue {
        self.best.as_ref().map_or(FitnessValue::WORST, |b| b.1)
    }

    /// Records a fitness reached after `evaluations` evaluations.
    fn note(&mut self, evaluations: u64, f: FitnessValue) {
        let improves = match self.trace.last() {
            None => true,
            Some(last) => f.r2 > last.r2,
        };
        if improves && !f.is_worst() {
            self.trace.push(TracePoint {
                evaluations,
                r2: f.r2,
                wall_ms: self.clock.map(|c| c.elapsed().as_millis() as u64),
            });
        }
    }

    fn offer(&mut self, g: &Genotype, f: FitnessValue) {
        if self.best.is_none() || f.is_better_than(&self.best_fitness()) {
            self.best = Some((g.clone(), f));
        }
    }

    pub fn best(&self) -> Option<&(Genotype, FitnessValue)> {
        self.best.as_ref()
    }

    pub fn trace(&self) -> &[TracePoint] {
        &self.trace
    }
}

/// One population with its linkage state and random streams.
#[derive(Debug, Clone)]
pub struct Population {
    pub genotypes: Vec<Genotype>,
    pub fitnesses: Vec<FitnessValue>,
    pub masks: Vec<ActivityMask>,
    pub generation: usize,
    pub linkage: LinkageModel,
    seed: u64,
    linkage_rng: Rng,
}

impl Population {
    pub fn len(&self) -> usize {
        self.genotypes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.genotypes.is_empty()
    }

    pub fn best_index(&self) -> usize {
        (0..self.len())
            .reduce(|a, b| {
                if self.fitnesses[b].is_better_than(&self.fitnesses[a]) {
                    b
                } else {
                    a
                }
            })
            .unwrap_or(0)
    }

    pub fn best_fitness(&self) -> FitnessValue {
        self.fitnesses
            .get(self.best_index())
            .copied()
            .unwrap_or(FitnessValue::WORST)
    }
}

fn random_terminal(rng: &mut Rng, features: usize, erc: (f64, f64)) -> (Symbol, f64) {
    let pick = rng.random_range(0..=features);
    if pick == features {
        (Symbol::Constant, erc.0 + rng.random::<f64>() * (erc.1 - erc.0))
    } else {
        (Symbol::Feature(pick as u16), 0.0)
    }
}

/// Builds individual `k` of a half-and-half population.
fn half_and_half_individual(ctx: &FitnessContext, k: usize, p_op: f64, rng: &mut Rng) -> Genotype {
    let t = &ctx.repr.template;
    let ops = &ctx.repr.ops;
    let features = ctx.train.x.features();
    let erc = ctx
        .train
        .y
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    let full = k % 2 == 0;
    let limit = 1 + (k / 2) % t.height();
    let n = t.node_count();
    let mut g = Genotype::filled(n, Symbol::Constant);
    let mut active = vec![false; n];
    active[0] = true;
    for i in 0..n {
        if i > 0 {
            let p = t.parent(i).expect("non-root");
            active[i] = active[p]
                && match g.symbols[p] {
                    Symbol::Op(id) => t.child_ordinal(i) < ops.get(id).expect("valid op").arity(),
                    _ => false,
                };
        }
        let d = t.depth(i);
        let (sym, c) = if active[i] {
            let as_op = d < limit && (full || rng.random::<f64>() < p_op);
            if as_op {
                (Symbol::Op(rng.random_range(0..ops.len()) as u8), 0.0)
            } else {
                random_terminal(rng, features, erc)
            }
        } else if t.is_leaf(i) {
            random_terminal(rng, features, erc)
        } else {
            let pick = rng.random_range(0..ops.len() + features + 1);
            if pick < ops.len() {
                (Symbol::Op(pick as u8), 0.0)
            } else {
                random_terminal(rng, features, erc)
            }
        };
        g.symbols[i] = sym;
        g.constants[i] = c;
    }
    g
}

/// Creates and evaluates a population of `size` with ramped half-and-half.
/// Individuals only depend on `seed`, never on the linkage measure.
pub fn init_half_and_half(
    size: usize,
    ctx: &FitnessContext,
    opts: &EngineOptions,
    seed: u64,
    budget: &EvaluationBudget,
    tracker: &mut BestTracker,
) -> Result<Population, EngineError> {
    if size < 2 {
        return Err(EngineError::PopulationTooSmall(size));
    }
    let mut rng = rng_from(derive_seed(seed, INIT_STREAM));
    let genotypes: Vec<Genotype> = (0..size)
        .map(|k| half_and_half_individual(ctx, k, opts.p_op, &mut rng))
        .collect();
    let mut fitnesses = Vec::with_capacity(size);
    let mut masks = Vec::with_capacity(size);
    for g in &genotypes {
        let f = ctx.fitness(g, budget)?;
        tracker.note(budget.used(), f);
        tracker.offer(g, f);
        fitnesses.push(f);
        masks.push(ctx.repr.activity(g)?);
    }
    Ok(Population {
        genotypes,
        fitnesses,
        masks,
        generation: 0,
        linkage: LinkageModel::new(opts.measure, opts.binning),
        seed,
        linkage_rng: rng_from(derive_seed(seed, LINKAGE_STREAM)),
    })
}

/// SHA-256 over symbols and constant bits of a population, as hex.
pub fn population_hash(genotypes: &[Genotype]) -> String {
    let mut h = Sha256::new();
    for g in genotypes {
        for (s, c) in g.symbols.iter().zip(&g.constants) {
            let (tag, v) = match *s {
                Symbol::Op(id) => (1u8, id as u64),
                Symbol::Feature(f) => (2, f as u64),
                Symbol::Constant => (3, c.to_bits()),
            };
            h.update([tag]);
            h.update(v.to_le_bytes());
        }
        h.update([0xff]);
    }
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

/// Source of the random decisions made while mixing one offspring.
pub trait Choices {
    /// Order in which the FOS subsets are visited.
    fn subset_order(&mut self, fos_len: usize) -> Vec<usize>;
    /// Donor for `offspring`, never `offspring` itself.
    fn donor(&mut self, offspring: usize, pop_size: usize) -> usize;
}

/// Choices drawn from a random stream.
pub struct RngChoices(pub Rng);

impl Choices for RngChoices {
    fn subset_order(&mut self, fos_len: usize) -> Vec<usize> {
        let mut order: Vec<usize> = (0..fos_len).collect();
        order.shuffle(&mut self.0);
        order
    }

    fn donor(&mut self, offspring: usize, pop_size: usize) -> usize {
        let d = self.0.random_range(0..pop_size - 1);
        if d >= offspring {
            d + 1
        } else {
            d
        }
    }
}

/// Replays a fixed transcript of choices.
#[derive(Debug, Clone, Default)]
pub struct ScriptedChoices {
    pub order: Vec<usize>,
    pub donors: std::collections::VecDeque<usize>,
}

impl Choices for ScriptedChoices {
    fn subset_order(&mut self, fos_len: usize) -> Vec<usize> {
        assert_eq!(self.order.len(), fos_len, "scripted order has the wrong length");
        self.order.clone()
    }

    fn donor(&mut self, offspring: usize, _pop_size: usize) -> usize {
        let d = self.donors.pop_front().expect("scripted donors exhausted");
        assert_ne!(d, offspring, "scripted donor equals the offspring");
        d
    }
}

/// What happened when one subset was mixed into one offspring.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SubsetApplication {
    pub offspring: usize,
    pub subset: usize,
    pub donor: usize,
    /// Some copied gene differs from the offspring's.
    pub genes_changed: bool,
    /// Recomputed from full signatures, independent of the fast check.
    pub signature_changed: bool,
    pub evaluated: bool,
    pub reverted: bool,
}

impl SubsetApplication {
    /// Genes changed only in introns.
    pub fn intron_only(&self) -> bool {
        self.genes_changed && !self.signature_changed
    }
}

#[derive(Debug, Clone, Default)]
pub struct GomTrace {
    pub applications: Vec<SubsetApplication>,
}

impl GomTrace {
    pub fn evaluations(&self) -> usize {
        self.applications.iter().filter(|a| a.evaluated).count()
    }
}

struct MixResult {
    genotype: Genotype,
    fitness: FitnessValue,
    mask: ActivityMask,
    /// Offspring-local evaluation count and fitness after each kept
    /// improvement.
    improvements: Vec<(u64, FitnessValue)>,
    evaluations: u64,
    exhausted: bool,
    log: Vec<SubsetApplication>,
}

#[allow(clippy::too_many_arguments)]
fn mix_offspring(
    ctx: &FitnessContext,
    parents: &Population,
    i: usize,
    fos: &Fos,
    budget: &EvaluationBudget,
    choices: &mut dyn Choices,
    record: bool,
) -> Result<MixResult, EngineError> {
    let mut o = parents.genotypes[i].clone();
    let mut fit = parents.fitnesses[i];
    let mut mask = parents.masks[i].clone();
    let mut improvements = Vec::new();
    let mut evaluations = 0u64;
    let mut log = Vec::new();
    let mut exhausted = false;
    let mut backup = o.clone();

    for s_idx in choices.subset_order(fos.len()) {
        let subset = &fos.subsets()[s_idx];
        let donor = choices.donor(i, parents.len());
        let d = &parents.genotypes[donor];
        let genes_changed = subset.iter().any(|&p| !o.same_gene(d, p));
        let active_changed = subset.iter().any(|&p| mask.is_active(p) && !o.same_gene(d, p));
        let old_sig: Option<Signature> = record.then(|| ctx.repr.signature_with(&o, &mask));
        for &p in subset {
            backup.symbols[p] = o.symbols[p];
            backup.constants[p] = o.constants[p];
        }
        o.copy_from(d, subset);

        let mut app = SubsetApplication {
            offspring: i,
            subset: s_idx,
            donor,
            genes_changed,
            signature_changed: false,
            evaluated: false,
            reverted: false,
        };
        if record {
            app.signature_changed = old_sig != Some(ctx.repr.signature(&o)?);
        }
        if active_changed {
            if budget.try_consume().is_err() {
                o.copy_from(&backup, subset);
                exhausted = true;
                break;
            }
            evaluations += 1;
            app.evaluated = true;
            let f = ctx.score(&o)?;
            if f.is_worse_than(&fit) {
                o.copy_from(&backup, subset);
                app.reverted = true;
            } else {
                if f.is_better_than(&fit) {
                    improvements.push((evaluations, f));
                }
                fit = f;
                mask = ctx.repr.activity(&o)?;
            }
        }
        if record {
            log.push(app);
        }
    }
    Ok(MixResult {
        genotype: o,
        fitness: fit,
        mask,
        improvements,
        evaluations,
        exhausted,
        log,
    })
}

/// Result of one GOM step.
#[derive(Debug, Clone, Default)]
pub struct StepReport {
    pub evaluations: u64,
    pub exhausted: bool,
    pub parallel: bool,
}

/// Mixes every solution with the given FOS and replaces the population
/// with the offspring. `choices(i)` supplies the decisions for offspring
/// `i`. When the budget runs out the step stops and every solution keeps
/// its latest accepted state.
#[allow(clippy::too_many_arguments)]
pub fn gom_step<C, F>(
    ctx: &FitnessContext,
    pop: &mut Population,
    fos: &Fos,
    budget: &EvaluationBudget,
    choices: F,
    parallel: bool,
    tracker: &mut BestTracker,
    trace: Option<&mut GomTrace>,
) -> Result<StepReport, EngineError>
where
    C: Choices,
    F: Fn(usize) -> C + Sync,
{
    let n = pop.len();
    let record = trace.is_some();
    let start = budget.used();
    let headroom = (n as u64).saturating_mul(fos.len() as u64);
    let run_parallel = parallel && budget.remaining() >= headroom;

    let results: Vec<MixResult> = if run_parallel {
        let parents = &*pop;
        (0..n)
            .into_par_iter()
            .map(|i| mix_offspring(ctx, parents, i, fos, budget, &mut choices(i), record))
            .collect::<Result<_, _>>()?
    } else {
        let mut out = Vec::with_capacity(n);
        for i in 0..n {
            let r = mix_offspring(ctx, pop, i, fos, budget, &mut choices(i), record)?;
            let stop = r.exhausted;
            out.push(r);
            if stop {
                break;
            }
        }
        out
    };

    let mut report = StepReport {
        parallel: run_parallel,
        ..StepReport::default()
    };
    let mut offset = start;
    let mut log = Vec::new();
    for (i, r) in results.into_iter().enumerate() {
        for (local, f) in &r.improvements {
            tracker.note(offset + local, *f);
        }
        tracker.offer(&r.genotype, r.fitness);
        offset += r.evaluations;
        report.evaluations += r.evaluations;
        report.exhausted |= r.exhausted;
        pop.genotypes[i] = r.genotype;
        pop.fitnesses[i] = r.fitness;
        pop.masks[i] = r.mask;
        log.extend(r.log);
    }
    if let Some(t) = trace {
        t.applications.extend(log);
    }
    Ok(report)
}

/// Per-generation summary.
#[derive(Debug, Clone)]
pub struct GenerationReport {
    pub generation: usize,
    pub fos: Arc<Fos>,
    pub similarity: Option<Arc<SimilarityMatrix>>,
    pub step: StepReport,
    pub converged: bool,
}

/// RNG stream used by offspring `i` in generation `g` of a population.
pub fn offspring_rng(pop_seed: u64, generation: usize, i: usize) -> Rng {
    let gen_seed = derive_seed(derive_seed(pop_seed, GOM_STREAM), generation as u64);
    rng_from(derive_seed(gen_seed, i as u64))
}

/// Learns linkage for the current population.
pub fn learn_linkage(ctx: &FitnessContext, pop: &mut Population) -> Result<crate::linkage::LearnedLinkage, EngineError> {
    Ok(pop
        .linkage
        .learn(&pop.genotypes, &pop.masks, &ctx.repr.template, &mut pop.linkage_rng)?)
}

/// Linkage learning followed by one GOM step.
pub fn run_generation(
    ctx: &FitnessContext,
    pop: &mut Population,
    opts: &EngineOptions,
    budget: &EvaluationBudget,
    tracker: &mut BestTracker,
    trace: Option<&mut GomTrace>,
) -> Result<GenerationReport, EngineError> {
    let learned = learn_linkage(ctx, pop)?;
    let (seed, generation) = (pop.seed, pop.generation);
    let step = gom_step(
        ctx,
        pop,
        &learned.fos,
        budget,
        |i| RngChoices(offspring_rng(seed, generation, i)),
        opts.parallel,
        tracker,
        trace,
    )?;
    pop.generation += 1;
    Ok(GenerationReport {
        generation: pop.generation,
        fos: learned.fos,
        similarity: learned.similarity,
        step,
        converged: has_converged(ctx, pop),
    })
}

/// Number of different active expressions in the population.
pub fn distinct_active(ctx: &FitnessContext, pop: &Population) -> usize {
    let mut sigs: Vec<Signature> = pop
        .genotypes
        .iter()
        .zip(&pop.masks)
        .map(|(g, m)| ctx.repr.signature_with(g, m))
        .collect();
    sigs.sort_unstable_by(|a, b| a.as_words().cmp(b.as_words()));
    sigs.dedup();
    sigs.len()
}

/// Whether every solution expresses the same active expression.
pub fn has_converged(ctx: &FitnessContext, pop: &Population) -> bool {
    let mut sigs = pop
        .genotypes
        .iter()
        .zip(&pop.masks)
        .map(|(g, m)| ctx.repr.signature_with(g, m));
    match sigs.next() {
        None => true,
        Some(first) => sigs.all(|s| s == first),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum TerminationReason {
    Converged,
    Dominated { by: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ImsEvent {
    PopulationCreated {
        population: usize,
        size: usize,
        evaluations: u64,
        best_r2: f64,
    },
    Generation {
        population: usize,
        size: usize,
        generation: usize,
        evaluations: u64,
        best_r2: f64,
    },
    Terminated {
        population: usize,
        size: usize,
        generation: usize,
        reason: TerminationReason,
        best_r2: f64,
        /// Distinct active expressions left in the population.
        distinct_active: usize,
    },
}

/// Outcome of a complete run.
#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub best: Option<(Genotype, FitnessValue)>,
    pub trace: Vec<TracePoint>,
    pub events: Vec<ImsEvent>,
    /// `(generation, matrix)` for every generation whose linkage was learned
    /// from a similarity matrix (fixed-size runs only).
    pub snapshots: Vec<(usize, Arc<SimilarityMatrix>)>,
    pub init_hash: String,
    pub evaluations: u64,
    pub generations: usize,
}

struct ImsSlot {
    pop: Population,
    alive: bool,
}

struct Ims<'a> {
    ctx: &'a FitnessContext,
    opts: &'a EngineOptions,
    budget: &'a EvaluationBudget,
    seed: u64,
    base: usize,
    slots: Vec<ImsSlot>,
    tracker: BestTracker,
    events: Vec<ImsEvent>,
    init_hash: String,
    generations: usize,
}

impl Ims<'_> {
    fn create(&mut self) -> Result<(), EngineError> {
        let k = self.slots.len();
        let size = self.base << k;
        let pop = init_half_and_half(
            size,
            self.ctx,
            self.opts,
            derive_seed(self.seed, 100 + k as u64),
            self.budget,
            &mut self.tracker,
        )?;
        if k == 0 {
            self.init_hash = population_hash(&pop.genotypes);
        }
        self.slots.push(ImsSlot { pop, alive: true });
        self.events.push(ImsEvent::PopulationCreated {
            population: k,
            size,
            evaluations: self.budget.used(),
            best_r2: self.slots[k].pop.best_fitness().r2,
        });
        Ok(())
    }

    /// Runs one generation of population `k`, then cascades to the next
    /// larger population every `IMS_SUBGENERATIONS` generations.
    fn step(&mut self, k: usize) -> Result<(), EngineError> {
        let report = run_generation(
            self.ctx,
            &mut self.slots[k].pop,
            self.opts,
            self.budget,
            &mut self.tracker,
            None,
        );
        let report = report?;
        self.generations += 1;
        let pop = &self.slots[k].pop;
        self.events.push(ImsEvent::Generation {
            population: k,
            size: pop.len(),
            generation: pop.generation,
            evaluations: self.budget.used(),
            best_r2: pop.best_fitness().r2,
        });
        if report.step.exhausted {
            return Err(EngineError::BudgetExhausted);
        }
        self.terminate();
        let cascade = !self.slots[k].alive || self.slots[k].pop.generation % IMS_SUBGENERATIONS == 0;
        if cascade {
            match (k + 1..self.slots.len()).find(|&j| self.slots[j].alive) {
                Some(next) => self.step(next)?,
                None if self.slots.len() < IMS_MAX_POPULATIONS => self.create()?,
                None => {}
            }
        }
        Ok(())
    }

    fn terminate(&mut self) {
        let n = self.slots.len();
        for j in 0..n {
            if !self.slots[j].alive {
                continue;
            }
            let reason = if has_converged(self.ctx, &self.slots[j].pop) {
                Some(TerminationReason::Converged)
            } else {
                let best = self.slots[j].pop.best_fitness();
                (j + 1..n)
                    .find(|&m| self.slots[m].alive && self.slots[m].pop.best_fitness().is_better_than(&best))
                    .map(|by| TerminationReason::Dominated { by })
            };
            if let Some(reason) = reason {
                let pop = &self.slots[j].pop;
                self.events.push(ImsEvent::Terminated {
                    population: j,
                    size: pop.len(),
                    generation: pop.generation,
                    reason,
                    best_r2: pop.best_fitness().r2,
                    distinct_active: distinct_active(self.ctx, pop),
                });
                self.slots[j].alive = false;
            }
        }
    }
}

/// Interleaved multistart run until the budget is spent. `max_generations`
/// optionally bounds the total number of generations over all populations.
pub fn run_ims(
    ctx: &FitnessContext,
    opts: &EngineOptions,
    budget: &EvaluationBudget,
    seed: u64,
    max_generations: Option<usize>,
) -> Result<RunOutcome, EngineError> {
    run_ims_with_base(ctx, opts, budget, seed, IMS_BASE_SIZE, max_generations)
}

pub fn run_ims_with_base(
    ctx: &FitnessContext,
    opts: &EngineOptions,
    budget: &EvaluationBudget,
    seed: u64,
    base: usize,
    max_generations: Option<usize>,
) -> Result<RunOutcome, EngineError> {
    let mut ims = Ims {
        ctx,
        opts,
        budget,
        seed,
        base,
        slots: Vec::new(),
        tracker: BestTracker::new(opts.wall_clock),
        events: Vec::new(),
        init_hash: String::new(),
        generations: 0,
    };
    let result = (|| {
        ims.create()?;
        loop {
            if budget.is_exhausted() || max_generations.is_some_and(|m| ims.generations >= m) {
                return Ok(());
            }
            match ims.slots.iter().position(|s| s.alive) {
                Some(k) => ims.step(k)?,
                None if ims.slots.len() < IMS_MAX_POPULATIONS => ims.create()?,
                None => return Ok(()),
            }
        }
    })();
    match result {
        Ok(()) | Err(EngineError::BudgetExhausted) => {}
        Err(e) => return Err(e),
    }
    Ok(RunOutcome {
        best: ims.tracker.best,
        trace: ims.tracker.trace,
        events: ims.events,
        snapshots: Vec::new(),
        init_hash: ims.init_hash,
        evaluations: budget.used(),
        generations: ims.generations,
    })
}

/// Single population of `size` run for `generations` generations, or until
/// it converges or the budget runs out. The similarity matrix is recorded
/// for generations `0..=generations`.
pub fn run_fixed(
    ctx: &FitnessContext,
    opts: &EngineOptions,
    budget: &EvaluationBudget,
    seed: u64,
    size: usize,
    generations: usize,
) -> Result<RunOutcome, EngineError> {
    let mut tracker = BestTracker::new(opts.wall_clock);
    let mut events = Vec::new();
    let mut snapshots = Vec::new();
    let pop_seed = derive_seed(seed, 100);
    let mut pop = match init_half_and_half(size, ctx, opts, pop_seed, budget, &mut tracker) {
        Ok(p) => p,
        Err(EngineError::BudgetExhausted) => {
            return Ok(RunOutcome {
                best: tracker.best,
                trace: tracker.trace,
                events,
                snapshots,
                init_hash: String::new(),
                evaluations: budget.used(),
                generations: 0,
            })
        }
        Err(e) => return Err(e),
    };
    let init_hash = population_hash(&pop.genotypes);
    events.push(ImsEvent::PopulationCreated {
        population: 0,
        size,
        evaluations: budget.used(),
        best_r2: pop.best_fitness().r2,
    });
    loop {
        let learned = learn_linkage(ctx, &mut pop)?;
        if let Some(s) = learned.similarity.clone() {
            snapshots.push((pop.generation, s));
        }
        if pop.generation >= generations || budget.is_exhausted() || (pop.generation > 0 && has_converged(ctx, &pop)) {
            break;
        }
        let (s, g) = (pop.seed, pop.generation);
        let step = gom_step(
            ctx,
            &mut pop,
            &learned.fos,
            budget,
            |i| RngChoices(offspring_rng(s, g, i)),
            opts.parallel,
            &mut tracker,
            None,
        )?;
        pop.generation += 1;
        events.push(ImsEvent::Generation {
            population: 0,
            size,
            generation: pop.generation,
            evaluations: budget.used(),
            best_r2: pop.best_fitness().r2,
        });
        if step.exhausted {
            break;
        }
    }
    Ok(RunOutcome {
        best: tracker.best,
        trace: tracker.trace,
        events,
        snapshots,
        init_hash,
        evaluations: budget.used(),
        generations: pop.generation,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataio::synth_problem;
    use crate::template::{OperatorSet, Representation, Template};

    fn context(height: usize) -> FitnessContext {
        let d = synth_problem("sin_plus_sqrt", 64, 0.0, 3).unwrap();
        let all: Vec<usize> = (0..d.rows()).collect();
        let repr = Representation::new(Template::new(height, 2).unwrap(), OperatorSet::extended()).unwrap();
        FitnessContext::new(repr, d.select(&all), false)
    }

    #[test]
    fn init_is_seeded_and_evaluated() {
        let ctx = context(4);
        let opts = EngineOptions::default();
        let budget = EvaluationBudget::unlimited();
        let mut tr = BestTracker::default();
        let a = init_half_and_half(64, &ctx, &opts, 9, &budget, &mut tr).unwrap();
        assert_eq!(a.len(), 64);
        assert!(a.genotypes.iter().all(|g| g.len() == 31));
        assert_eq!(budget.used(), 64);
        let other = EngineOptions {
            measure: MeasureKind::Random,
            ..EngineOptions::default()
        };
        let b = init_half_and_half(64, &ctx, &other, 9, &budget, &mut tr).unwrap();
        assert_eq!(a.genotypes, b.genotypes);
        assert!(init_half_and_half(1, &ctx, &opts, 9, &budget, &mut tr).is_err());
    }

    #[test]
    fn grow_without_operators_gives_terminals() {
        let ctx = context(1);
        let opts = EngineOptions {
            p_op: 0.0,
            ..EngineOptions::default()
        };
        let mut rng = rng_from(4);
        for k in (1..40).step_by(2) {
            let g = half_and_half_individual(&ctx, k, opts.p_op, &mut rng);
            assert!(!g.symbols[0].is_op());
            assert_eq!(ctx.repr.activity(&g).unwrap().count(), 1);
        }
    }

    #[test]
    fn full_individuals_reach_their_depth() {
        let ctx = context(3);
        let mut rng = rng_from(8);
        for k in (0..12).step_by(2) {
            let g = half_and_half_individual(&ctx, k, 0.5, &mut rng);
            let limit = 1 + (k / 2) % 3;
            let mask = ctx.repr.activity(&g).unwrap();
            let deepest = (0..g.len()).filter(|&i| mask.is_active(i)).map(|i| ctx.repr.template.depth(i)).max();
            assert_eq!(deepest, Some(limit));
        }
    }

    #[test]
    fn convergence_ignores_introns() {
        let ctx = context(2);
        let budget = EvaluationBudget::unlimited();
        let mut tr = BestTracker::default();
        let mut pop = init_half_and_half(4, &ctx, &EngineOptions::default(), 1, &budget, &mut tr).unwrap();
        assert!(!has_converged(&ctx, &pop) || pop.genotypes.windows(2).all(|w| w[0] == w[1]));
        let sin = ctx.repr.ops.id_of(crate::template::OpKind::Sin).unwrap();
        let mut g = Genotype::filled(7, Symbol::Feature(0));
        g.symbols[0] = Symbol::Op(sin);
        for k in 0..4 {
            let mut c = g.clone();
            c.symbols[2] = Symbol::Feature(k as u16 % 2);
            pop.masks[k] = ctx.repr.activity(&c).unwrap();
            pop.genotypes[k] = c;
        }
        assert!(has_converged(&ctx, &pop));
        pop.genotypes[3].symbols[1] = Symbol::Feature(1);
        assert!(!has_converged(&ctx, &pop));
    }

    #[test]
    fn population_hash_is_stable() {
        let g = vec![Genotype::filled(3, Symbol::Feature(0))];
        assert_eq!(population_hash(&g), population_hash(&g.clone()));
        assert_eq!(population_hash(&g).len(), 64);
        assert_ne!(population_hash(&g), population_hash(&[Genotype::filled(3, Symbol::Feature(1))]));
    }

    #[test]
    fn rng_donors_skip_self() {
        let mut c = RngChoices(rng_from(2));
        for _ in 0..200 {
            assert_ne!(c.donor(3, 4), 3);
            assert!(c.donor(0, 2) == 1);
        }
        let mut o = c.subset_order(10);
        o.sort_unstable();
        assert_eq!(o, (0..10).collect::<Vec<_>>());
    }
}
