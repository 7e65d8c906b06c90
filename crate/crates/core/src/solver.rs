//! Runtime flow optimization with Adam.
//!
//! The graph and Laplacian are built once on the source cloud and stay fixed
//! for the whole run. The flow starts at zero and nearest-neighbor
//! correspondences are refreshed every iteration.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::graph::cloud_laplacian;
use crate::objective::{ChamferMode, EnergyBreakdown, Objective};
use crate::{Error, FlowField, PointCloud, Result, SparseSym, Vec3};

/// Abort when the total energy grows past this multiple of the initial one.
const DIVERGENCE_FACTOR: f64 = 1e6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverConfig {
    /// Laplacian regularizer weight.
    pub alpha: f64,
    /// Adam step size.
    pub lr: f64,
    pub iters: usize,
    /// Neighbors per vertex in the k-NN graph.
    pub k: usize,
    pub normalized_laplacian: bool,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Carried for reproducibility records; the solve itself draws no
    /// random numbers.
    pub seed: u64,
    pub chamfer_mode: ChamferMode,
    /// Multiplicative step-size decay per iteration; 1.0 keeps it constant.
    pub lr_decay: f64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            alpha: 10.0,
            lr: 0.1,
            iters: 1500,
            k: 50,
            normalized_laplacian: true,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            seed: 0,
            chamfer_mode: ChamferMode::Both,
            lr_decay: 1.0,
        }
    }
}

impl SolverConfig {
    /// Check parameter ranges that do not depend on the input clouds.
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidParameter(msg));
        if !(self.alpha >= 0.0 && self.alpha.is_finite()) {
            return bad(format!("alpha must be finite and >= 0, got {}", self.alpha));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad(format!("lr must be > 0, got {}", self.lr));
        }
        if self.iters == 0 {
            return bad("iters must be >= 1".into());
        }
        if self.k == 0 {
            return bad("k must be >= 1".into());
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return bad(format!(
                "Adam betas must lie in [0, 1), got {} and {}",
                self.beta1, self.beta2
            ));
        }
        if !(self.eps > 0.0) {
            return bad(format!("eps must be > 0, got {}", self.eps));
        }
        if !(self.lr_decay > 0.0 && self.lr_decay <= 1.0) {
            return bad(format!("lr_decay must lie in (0, 1], got {}", self.lr_decay));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct SolveReport {
    pub flow: FlowField,
    /// Energy at the start of each iteration; entry 0 is the zero-flow energy.
    pub loss_trace: Vec<EnergyBreakdown>,
    /// Energy of the returned flow.
    pub final_energy: EnergyBreakdown,
    /// Seconds.
    pub wall_time: f64,
    pub iterations_run: usize,
}

impl SolveReport {
    pub fn initial_energy(&self) -> EnergyBreakdown {
        self.loss_trace[0]
    }
}

/// Adam moments for a field of 3-vectors.
#[derive(Debug, Clone)]
pub struct AdamState {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub t: u64,
    pub m: Vec<Vec3>,
    pub v: Vec<Vec3>,
}

impl AdamState {
    pub fn new(n: usize, lr: f64, beta1: f64, beta2: f64, eps: f64) -> Self {
        Self {
            lr,
            beta1,
            beta2,
            eps,
            t: 0,
            m: vec![Vec3::zeros(); n],
            v: vec![Vec3::zeros(); n],
        }
    }

    pub fn from_config(n: usize, config: &SolverConfig) -> Self {
        Self::new(n, config.lr, config.beta1, config.beta2, config.eps)
    }

    /// Advance the moments with `grad` and return the bias-corrected update
    /// `lr * m_hat / (sqrt(v_hat) + eps)`. Parameters move by minus this.
    pub fn step(&mut self, grad: &[Vec3]) -> Vec<Vec3> {
        assert_eq!(grad.len(), self.m.len(), "gradient length");
        self.t += 1;
        let t = self.t as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        let (b1, b2, lr, eps) = (self.beta1, self.beta2, self.lr, self.eps);
        self.m
            .iter_mut()
            .zip(self.v.iter_mut())
            .zip(grad)
            .map(|((m, v), g)| {
                *m = *m * b1 + g * (1.0 - b1);
                *v = *v * b2 + g.component_mul(g) * (1.0 - b2);
                let m_hat = *m / c1;
                let v_hat = *v / c2;
                m_hat.zip_map(&v_hat, |mh, vh| lr * mh / (vh.sqrt() + eps))
            })
            .collect()
    }
}

/// Estimate the flow that carries `source` onto `target`.
pub fn solve(source: &PointCloud, target: &PointCloud, config: &SolverConfig) -> Result<SolveReport> {
    config.validate()?;
    if config.k >= source.len() {
        return Err(Error::invalid(format!(
            "k must be < number of source points (k = {}, n = {})",
            config.k,
            source.len()
        )));
    }
    let l = cloud_laplacian(source, config.k, config.normalized_laplacian)?;
    solve_with_laplacian(source, target, &l, config)
}

/// [`solve`] with a precomputed Laplacian; `config.k` and
/// `config.normalized_laplacian` are not consulted.
pub fn solve_with_laplacian(
    source: &PointCloud,
    target: &PointCloud,
    laplacian: &SparseSym,
    config: &SolverConfig,
) -> Result<SolveReport> {
    config.validate()?;
    let start = Instant::now();
    let n = source.len();
    let objective = Objective::new(source, target, laplacian, config.alpha, config.chamfer_mode)?;

    let mut flow: Vec<Vec3> = vec![Vec3::zeros(); n];
    let mut adam = AdamState::from_config(n, config);
    let mut trace = Vec::with_capacity(config.iters);
    let mut initial_total = None;

    for iter in 0..config.iters {
        let current = FlowField::from_vec_unchecked(flow);
        let (e, grad) = objective.energy_and_gradient(&current)?;
        flow = current.into_vectors();

        check_divergence(iter, &e, *initial_total.get_or_insert(e.total))?;
        trace.push(e);

        let update = adam.step(grad.vectors());
        for (f, u) in flow.iter_mut().zip(&update) {
            *f -= u;
        }
        adam.lr *= config.lr_decay;
    }

    let flow = FlowField::new(flow).map_err(|_| Error::Divergence {
        iteration: config.iters,
        reason: "non-finite flow".into(),
    })?;
    let final_energy = objective.energy(&flow)?;
    check_divergence(config.iters, &final_energy, trace[0].total)?;
    log::debug!(
        "solve: {} iterations, energy {:.6e} -> {:.6e}",
        config.iters,
        trace[0].total,
        final_energy.total
    );
    Ok(SolveReport {
        flow,
        loss_trace: trace,
        final_energy,
        wall_time: start.elapsed().as_secs_f64(),
        iterations_run: config.iters,
    })
}

fn check_divergence(iteration: usize, e: &EnergyBreakdown, initial: f64) -> Result<()> {
    if !e.total.is_finite() {
        return Err(Error::Divergence {
            iteration,
            reason: "non-finite energy".into(),
        });
    }
    if initial > 0.0 && e.total > DIVERGENCE_FACTOR * initial {
        return Err(Error::Divergence {
            iteration,
            reason: format!("energy {:.3e} exceeds {DIVERGENCE_FACTOR:e} x initial {initial:.3e}", e.total),
        });
    }
    Ok(())
}
