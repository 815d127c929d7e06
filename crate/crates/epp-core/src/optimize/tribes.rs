//! Tribes: an adaptive particle swarm that sizes itself. The swarm starts as
//! one tribe of one particle; badly performing tribes spawn new random
//! particles into a fresh tribe, good tribes shed their worst member, and a
//! particle's move rule depends on its recent improvement history.

use nalgebra::DVector;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::{ConvergenceMonitor, Evaluator, Objective, StoppingRule};
use crate::error::Result;

const MAX_PARTICLES: usize = 40;

/// Cap on a shaman's own move scale. Shamans guard local optima; their
/// informer (the best other shaman) can be far away early on, and moves at
/// that distance would never refine the incumbent best. The cap contracts
/// while the shaman keeps failing to improve and resets on success.
const SHAMAN_LOCAL_SD: f64 = 0.1;
const SHAMAN_SD_DECAY: f64 = 0.6;
const SHAMAN_MIN_SD: f64 = 1e-4;

struct Particle {
    pbest_x: DVector<f64>,
    pbest_f: f64,
    improved_last: bool,
    improved_prev: bool,
    /// Consecutive moves without improving pbest.
    failures: u32,
}

struct Tribe {
    members: Vec<Particle>,
}

impl Tribe {
    fn shaman(&self) -> usize {
        let mut best = 0;
        for (i, m) in self.members.iter().enumerate() {
            if m.pbest_f > self.members[best].pbest_f {
                best = i;
            }
        }
        best
    }
}

fn spawn<O: Objective + ?Sized>(
    evaluator: &mut Evaluator<O>,
    rng: &mut ChaCha8Rng,
    r: usize,
) -> Result<Particle> {
    let x = super::random_unit(rng, r);
    let f = evaluator.eval(&x)?;
    Ok(Particle {
        pbest_x: x,
        pbest_f: f,
        improved_last: false,
        improved_prev: false,
        failures: 0,
    })
}

/// Undirected informing links: a clique within each tribe plus the clique of
/// tribe shamans. Adaptation runs every links/2 iterations.
fn link_count(tribes: &[Tribe]) -> usize {
    let within: usize = tribes.iter().map(|t| t.members.len() * (t.members.len() - 1) / 2).sum();
    let t = tribes.len();
    within + t * (t - 1) / 2
}

pub(crate) fn run<O: Objective + ?Sized>(
    evaluator: &mut Evaluator<O>,
    r: usize,
    stop: &StoppingRule,
    mut rng: ChaCha8Rng,
) -> Result<(usize, bool)> {
    let mut tribes = vec![Tribe {
        members: vec![spawn(evaluator, &mut rng, r)?],
    }];
    let mut monitor = ConvergenceMonitor::new(stop, evaluator.best_fitness());
    let mut next_adaptation = 1usize;

    for i in 1..=stop.maxiter {
        // shamans inform each other: each tribe's shaman follows the best
        // pbest among the OTHER shamans (so the global best keeps a finite
        // refinement scale instead of informing itself), everyone else
        // follows their own shaman
        let shaman_states: Vec<(f64, DVector<f64>)> = tribes
            .iter()
            .map(|t| {
                let s = t.shaman();
                (t.members[s].pbest_f, t.members[s].pbest_x.clone())
            })
            .collect();

        for t in 0..tribes.len() {
            let shaman = tribes[t].shaman();
            let tribe_best = tribes[t].members[shaman].pbest_x.clone();
            let other_shaman_best = shaman_states
                .iter()
                .enumerate()
                .filter(|&(s, _)| s != t)
                .max_by(|a, b| a.1 .0.partial_cmp(&b.1 .0).unwrap())
                .map(|(_, (_, x))| x.clone())
                .unwrap_or_else(|| tribe_best.clone());
            for m in 0..tribes[t].members.len() {
                let is_shaman = m == shaman;
                let informer = if is_shaman { &other_shaman_best } else { &tribe_best };
                let member = &tribes[t].members[m];
                let mut d = (&member.pbest_x - informer).norm();
                if is_shaman {
                    let local = (SHAMAN_LOCAL_SD
                        * SHAMAN_SD_DECAY.powi(member.failures.min(16) as i32))
                    .max(SHAMAN_MIN_SD);
                    d = if tribes.len() == 1 { local } else { d.min(local) };
                }
                let candidate = if d == 0.0 {
                    // already at its informer's best: nothing to move toward
                    member.pbest_x.clone()
                } else if member.improved_last && member.improved_prev {
                    // confident: Gaussian pivot between own best and informer
                    let center = (&member.pbest_x + informer) * 0.5;
                    let sd = d * 0.5;
                    DVector::from_fn(r, |k, _| {
                        center[k] + sd * rng.sample::<f64, _>(StandardNormal)
                    })
                } else {
                    // explore around own best at the informer-distance scale
                    DVector::from_fn(r, |k, _| {
                        member.pbest_x[k] + d * rng.sample::<f64, _>(StandardNormal)
                    })
                };
                let norm = candidate.norm();
                let candidate = if norm > 1e-12 {
                    candidate / norm
                } else {
                    super::random_unit(&mut rng, r)
                };
                let f = evaluator.eval(&candidate)?;
                let member = &mut tribes[t].members[m];
                member.improved_prev = member.improved_last;
                member.improved_last = f > member.pbest_f;
                if member.improved_last {
                    member.pbest_f = f;
                    member.pbest_x = candidate;
                    member.failures = 0;
                } else {
                    member.failures += 1;
                }
            }
        }

        next_adaptation = next_adaptation.saturating_sub(1);
        if next_adaptation == 0 {
            adapt(&mut tribes, evaluator, &mut rng, r)?;
            next_adaptation = (link_count(&tribes) / 2).max(1);
        }

        if monitor.push(evaluator.best_fitness()) {
            return Ok((i, true));
        }
    }
    Ok((stop.maxiter, false))
}

fn adapt<O: Objective + ?Sized>(
    tribes: &mut Vec<Tribe>,
    evaluator: &mut Evaluator<O>,
    rng: &mut ChaCha8Rng,
    r: usize,
) -> Result<()> {
    let mut total: usize = tribes.iter().map(|t| t.members.len()).sum();
    let mut newcomers = Vec::new();
    for tribe in tribes.iter_mut() {
        let improved = tribe.members.iter().filter(|m| m.improved_last).count();
        let good = 2 * improved > tribe.members.len();
        if good {
            if tribe.members.len() > 1 {
                let worst = tribe
                    .members
                    .iter()
                    .enumerate()
                    .min_by(|a, b| a.1.pbest_f.partial_cmp(&b.1.pbest_f).unwrap())
                    .map(|(i, _)| i)
                    .unwrap();
                tribe.members.remove(worst);
                total -= 1;
            }
        } else if total + newcomers.len() < MAX_PARTICLES {
            newcomers.push(spawn(evaluator, rng, r)?);
        }
    }
    if !newcomers.is_empty() {
        tribes.push(Tribe { members: newcomers });
    }
    Ok(())
}
