//! Particle swarm optimization with constriction-equivalent constants and a
//! cosine neighborhood: each particle is informed by the three swarm members
//! most aligned with its current position.

use nalgebra::DVector;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::{ConvergenceMonitor, Evaluator, Objective, OptimizerParams, StoppingRule};
use crate::error::Result;

const INERTIA: f64 = 0.7298;
const COGNITIVE: f64 = 1.4962;
const SOCIAL: f64 = 1.4962;
const NEIGHBORHOOD: usize = 3;
const MAX_VELOCITY_NORM: f64 = 1.0;

struct Particle {
    x: DVector<f64>,
    v: DVector<f64>,
    pbest_x: DVector<f64>,
    pbest_f: f64,
}

pub(crate) fn run<O: Objective + ?Sized>(
    evaluator: &mut Evaluator<O>,
    r: usize,
    params: &OptimizerParams,
    stop: &StoppingRule,
    mut rng: ChaCha8Rng,
) -> Result<(usize, bool)> {
    let size = params.particles.max(2);
    let mut swarm = Vec::with_capacity(size);
    for _ in 0..size {
        let x = super::random_unit(&mut rng, r);
        let f = evaluator.eval(&x)?;
        swarm.push(Particle {
            v: DVector::zeros(r),
            pbest_x: x.clone(),
            pbest_f: f,
            x,
        });
    }

    let mut monitor = ConvergenceMonitor::new(stop, evaluator.best_fitness());
    for i in 1..=stop.maxiter {
        // local best per particle from its cosine neighborhood, computed
        // against the positions at the start of the iteration
        let lbest: Vec<DVector<f64>> = (0..size)
            .map(|p| {
                let mut cosines: Vec<(usize, f64)> = (0..size)
                    .map(|q| (q, swarm[p].x.dot(&swarm[q].x).abs()))
                    .collect();
                cosines.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
                let best = cosines
                    .iter()
                    .take(NEIGHBORHOOD)
                    .max_by(|a, b| {
                        swarm[a.0]
                            .pbest_f
                            .partial_cmp(&swarm[b.0].pbest_f)
                            .unwrap()
                            .then(b.0.cmp(&a.0))
                    })
                    .map(|&(q, _)| q)
                    .unwrap();
                swarm[best].pbest_x.clone()
            })
            .collect();

        for (p, particle) in swarm.iter_mut().enumerate() {
            for k in 0..r {
                let r1: f64 = rng.random();
                let r2: f64 = rng.random();
                particle.v[k] = INERTIA * particle.v[k]
                    + COGNITIVE * r1 * (particle.pbest_x[k] - particle.x[k])
                    + SOCIAL * r2 * (lbest[p][k] - particle.x[k]);
            }
            let vnorm = particle.v.norm();
            if vnorm > MAX_VELOCITY_NORM {
                particle.v *= MAX_VELOCITY_NORM / vnorm;
            }
            particle.x += &particle.v;
            let norm = particle.x.norm();
            if norm > 1e-12 {
                particle.x /= norm;
            } else {
                particle.x = super::random_unit(&mut rng, r);
            }
            let f = evaluator.eval(&particle.x)?;
            if f > particle.pbest_f {
                particle.pbest_f = f;
                particle.pbest_x = particle.x.clone();
            }
        }

        if monitor.push(evaluator.best_fitness()) {
            return Ok((i, true));
        }
    }
    Ok((stop.maxiter, false))
}
