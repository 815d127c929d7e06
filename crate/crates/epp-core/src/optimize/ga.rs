//! Generational genetic algorithm on the unit sphere: tournament selection
//! (3 participants), two-point crossover with probability 0.65, Gaussian
//! mutation with probability 0.05 per individual, elitism of one.

use nalgebra::DVector;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::{ConvergenceMonitor, Evaluator, Objective, OptimizerParams, StoppingRule};
use crate::error::Result;

const CROSSOVER_PROB: f64 = 0.65;
const MUTATION_PROB: f64 = 0.05;
const INITIAL_MUTATION_SD: f64 = 0.1;
// keeps the mutation walk fast enough to actually reach an optimum within
// the iteration budget once the noise scale has contracted
const MIN_MUTATION_SD: f64 = 2e-3;

/// Operator draw counters, used to verify the configured rates statistically.
#[derive(Debug, Default, Clone, Copy)]
pub(crate) struct GaStats {
    pub pair_draws: u64,
    pub crossovers: u64,
    pub mutation_draws: u64,
    pub mutations: u64,
}

pub(crate) struct GaOptimizer<'a, 'b, O: Objective + ?Sized> {
    evaluator: &'a mut Evaluator<'b, O>,
    rng: ChaCha8Rng,
    population: Vec<DVector<f64>>,
    fitness: Vec<f64>,
    r: usize,
    /// Mutation noise scale, adapted toward the productive step size: halved
    /// after every 3 stagnant iterations, doubled (up to the initial value)
    /// on improvement, so the search can refine a local optimum before the
    /// stopping rule fires.
    mutation_sd: f64,
    stagnant: usize,
    last_best: f64,
    pub(crate) stats: GaStats,
}

impl<'a, 'b, O: Objective + ?Sized> GaOptimizer<'a, 'b, O> {
    pub fn new(
        evaluator: &'a mut Evaluator<'b, O>,
        r: usize,
        size: usize,
        mut rng: ChaCha8Rng,
    ) -> Result<Self> {
        let size = size.max(2);
        let mut population = Vec::with_capacity(size);
        let mut fitness = Vec::with_capacity(size);
        for _ in 0..size {
            let u = super::random_unit(&mut rng, r);
            fitness.push(evaluator.eval(&u)?);
            population.push(u);
        }
        let last_best = evaluator.best_fitness();
        Ok(Self {
            evaluator,
            rng,
            population,
            fitness,
            r,
            mutation_sd: INITIAL_MUTATION_SD,
            stagnant: 0,
            last_best,
            stats: GaStats::default(),
        })
    }

    fn tournament(&mut self) -> usize {
        let mut best = self.rng.random_range(0..self.population.len());
        for _ in 0..2 {
            let challenger = self.rng.random_range(0..self.population.len());
            if self.fitness[challenger] > self.fitness[best] {
                best = challenger;
            }
        }
        best
    }

    fn two_point_crossover(&mut self, a: &DVector<f64>, b: &DVector<f64>) -> (DVector<f64>, DVector<f64>) {
        let mut c1 = a.clone();
        let mut c2 = b.clone();
        let mut lo = self.rng.random_range(0..self.r);
        let mut hi = self.rng.random_range(0..self.r);
        if lo > hi {
            std::mem::swap(&mut lo, &mut hi);
        }
        for k in lo..=hi {
            std::mem::swap(&mut c1[k], &mut c2[k]);
        }
        (c1, c2)
    }

    pub fn step(&mut self) -> Result<()> {
        let elite_idx = self
            .fitness
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
            .map(|(i, _)| i)
            .unwrap();
        let elite = self.population[elite_idx].clone();
        let elite_fitness = self.fitness[elite_idx];

        let size = self.population.len();
        let mut children: Vec<DVector<f64>> = Vec::with_capacity(size);
        while children.len() < size - 1 {
            let (ia, ib) = (self.tournament(), self.tournament());
            let pa = self.population[ia].clone();
            let pb = self.population[ib].clone();
            self.stats.pair_draws += 1;
            let (c1, c2) = if self.rng.random::<f64>() < CROSSOVER_PROB {
                self.stats.crossovers += 1;
                self.two_point_crossover(&pa, &pb)
            } else {
                (pa, pb)
            };
            children.push(c1);
            if children.len() < size - 1 {
                children.push(c2);
            }
        }

        for child in children.iter_mut() {
            self.stats.mutation_draws += 1;
            if self.rng.random::<f64>() < MUTATION_PROB {
                self.stats.mutations += 1;
                for k in 0..self.r {
                    child[k] += self.mutation_sd * self.rng.sample::<f64, _>(StandardNormal);
                }
            }
            let norm = child.norm();
            if norm > 1e-12 {
                *child /= norm;
            } else {
                *child = super::random_unit(&mut self.rng, self.r);
            }
        }

        let mut population = Vec::with_capacity(size);
        let mut fitness = Vec::with_capacity(size);
        population.push(elite);
        fitness.push(elite_fitness);
        for child in children {
            fitness.push(self.evaluator.eval(&child)?);
            population.push(child);
        }
        self.population = population;
        self.fitness = fitness;

        let best = self.evaluator.best_fitness();
        if best > self.last_best {
            self.last_best = best;
            self.stagnant = 0;
        } else {
            self.stagnant += 1;
            if self.stagnant % 2 == 0 {
                self.mutation_sd = (self.mutation_sd * 0.5).max(MIN_MUTATION_SD);
            }
        }
        Ok(())
    }
}

pub(crate) fn run<O: Objective + ?Sized>(
    evaluator: &mut Evaluator<O>,
    r: usize,
    params: &OptimizerParams,
    stop: &StoppingRule,
    rng: ChaCha8Rng,
) -> Result<(usize, bool)> {
    let mut ga = GaOptimizer::new(evaluator, r, params.individuals, rng)?;
    let mut monitor = ConvergenceMonitor::new(stop, ga.evaluator.best_fitness());
    for i in 1..=stop.maxiter {
        ga.step()?;
        if monitor.push(ga.evaluator.best_fitness()) {
            return Ok((i, true));
        }
    }
    Ok((stop.maxiter, false))
}
