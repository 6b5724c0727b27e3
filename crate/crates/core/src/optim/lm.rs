use nalgebra::{Cholesky, DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{Mode, Network};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LmConfig {
    pub initial_damping: f64,
    pub increase: f64,
    pub decrease: f64,
    pub min_damping: f64,
    pub max_damping: f64,
    /// Damping adjustments tried per step before giving up.
    pub retry_cap: usize,
}

impl Default for LmConfig {
    fn default() -> Self {
        LmConfig {
            initial_damping: 1e-3,
            increase: 10.0,
            decrease: 0.1,
            min_damping: 1e-10,
            max_damping: 1e10,
            retry_cap: 5,
        }
    }
}

impl LmConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.min_damping > 0.0
            && self.min_damping <= self.max_damping
            && (self.min_damping..=self.max_damping).contains(&self.initial_damping)
            && self.increase > 1.0
            && self.decrease > 0.0
            && self.decrease < 1.0
            && self.retry_cap >= 1;
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid Levenberg-Marquardt settings {self:?}")))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LmState {
    pub config: LmConfig,
    pub damping: f64,
}

impl LmState {
    pub fn new(config: LmConfig) -> Result<Self> {
        config.validate()?;
        Ok(LmState {
            config,
            damping: config.initial_damping,
        })
    }

    fn raise(&mut self) {
        self.damping = (self.damping * self.config.increase).min(self.config.max_damping);
    }

    fn lower(&mut self) {
        self.damping = (self.damping * self.config.decrease).max(self.config.min_damping);
    }
}

/// A nonlinear least-squares problem `min 0.5 * |r(params)|^2`.
pub trait LeastSquares {
    fn param_count(&self) -> usize;
    fn residuals(&self, params: &[f64]) -> Result<Vec<f64>>;
    /// Residuals together with the Jacobian `d r_k / d params_j`.
    fn linearize(&self, params: &[f64]) -> Result<(Vec<f64>, DMatrix<f64>)>;
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LmStep {
    pub sse_before: f64,
    pub sse: f64,
    pub accepted: bool,
    pub attempts: usize,
}

fn sse(r: &[f64]) -> f64 {
    r.iter().map(|v| v * v).sum()
}

/// Normal-equation system for the damped step. Uses `JᵀJ` when there are
/// fewer parameters than residuals and the smaller `JJᵀ` otherwise; both give
/// the same step since `(JᵀJ + μI)⁻¹Jᵀ = Jᵀ(JJᵀ + μI)⁻¹`.
pub struct DampedSystem<'a> {
    jacobian: &'a DMatrix<f64>,
    residuals: DVector<f64>,
    gram: DMatrix<f64>,
    primal: bool,
}

impl<'a> DampedSystem<'a> {
    pub fn new(jacobian: &'a DMatrix<f64>, residuals: &[f64]) -> Self {
        let primal = jacobian.ncols() <= jacobian.nrows();
        let gram = if primal {
            jacobian.tr_mul(jacobian)
        } else {
            jacobian * jacobian.transpose()
        };
        DampedSystem {
            jacobian,
            residuals: DVector::from_column_slice(residuals),
            gram,
            primal,
        }
    }

    pub fn force_primal(jacobian: &'a DMatrix<f64>, residuals: &[f64]) -> Self {
        DampedSystem {
            jacobian,
            residuals: DVector::from_column_slice(residuals),
            gram: jacobian.tr_mul(jacobian),
            primal: true,
        }
    }

    /// `Δ` solving `(JᵀJ + μI)Δ = −Jᵀr`; `None` if the factorization fails.
    pub fn solve(&self, damping: f64) -> Option<DVector<f64>> {
        let mut a = self.gram.clone();
        for i in 0..a.nrows() {
            a[(i, i)] += damping;
        }
        let chol = Cholesky::new(a)?;
        let delta = if self.primal {
            -chol.solve(&self.jacobian.tr_mul(&self.residuals))
        } else {
            -self.jacobian.tr_mul(&chol.solve(&self.residuals))
        };
        delta.iter().all(|v| v.is_finite()).then_some(delta)
    }
}

/// One Levenberg-Marquardt step. Only steps that strictly lower the SSE are
/// accepted; after `retry_cap` rejected or failed attempts the step reports no
/// progress and `params` is left unchanged.
pub fn lm_step<P: LeastSquares + ?Sized>(problem: &P, params: &mut [f64], state: &mut LmState) -> Result<LmStep> {
    if params.len() != problem.param_count() {
        return Err(Error::Shape(format!(
            "problem has {} parameters, got {}",
            problem.param_count(),
            params.len()
        )));
    }
    let (r, j) = problem.linearize(params)?;
    let sse_before = sse(&r);
    if !sse_before.is_finite() {
        return Err(Error::NonFinite("residuals".into()));
    }
    if sse_before == 0.0 {
        return Ok(LmStep {
            sse_before,
            sse: sse_before,
            accepted: false,
            attempts: 0,
        });
    }
    let system = DampedSystem::new(&j, &r);
    let mut candidate = params.to_vec();
    for attempt in 1..=state.config.retry_cap {
        let Some(delta) = system.solve(state.damping) else {
            state.raise();
            continue;
        };
        for ((c, p), d) in candidate.iter_mut().zip(params.iter()).zip(delta.iter()) {
            *c = p + d;
        }
        let new_sse = sse(&problem.residuals(&candidate)?);
        if new_sse.is_finite() && new_sse < sse_before {
            params.copy_from_slice(&candidate);
            state.lower();
            return Ok(LmStep {
                sse_before,
                sse: new_sse,
                accepted: true,
                attempts: attempt,
            });
        }
        state.raise();
    }
    Ok(LmStep {
        sse_before,
        sse: sse_before,
        accepted: false,
        attempts: state.config.retry_cap,
    })
}

/// Residual Jacobian of a network over a batch: row `(sample, output)`,
/// sample-major, column per trainable parameter.
pub fn compute_jacobian(network: &Network, inputs: &Tensor) -> Result<DMatrix<f64>> {
    let outs = network.output_shape().size();
    let n = inputs.batch_size();
    if n == 0 {
        return Err(Error::Data("empty batch".into()));
    }
    let p = network.param_count();
    let mut jac = DMatrix::zeros(n * outs, p);
    let mut shape = inputs.shape().to_vec();
    shape[0] = 1;
    for i in 0..n {
        let x = Tensor::new(shape.clone(), inputs.row(i).to_vec())?;
        for o in 0..outs {
            let (_, cache) = network.forward(&x, Mode::Infer)?;
            let mut g = vec![0.0; outs];
            g[o] = 1.0;
            let grads = network.backward(cache, &Tensor::new(vec![1, outs], g)?)?;
            let row = i * outs + o;
            for (c, v) in grads.params.iter().enumerate() {
                jac[(row, c)] = *v;
            }
        }
    }
    Ok(jac)
}

/// Least-squares view of a network regressing `targets` (one row per sample).
pub struct NetworkFit<'a> {
    template: Network,
    inputs: &'a Tensor,
    targets: &'a [f64],
}

impl<'a> NetworkFit<'a> {
    pub fn new(network: &Network, inputs: &'a Tensor, targets: &'a [f64]) -> Result<Self> {
        if !network.architecture().is_dense_only() {
            return Err(Error::Config(
                "Levenberg-Marquardt training is restricted to dense networks".into(),
            ));
        }
        if inputs.batch_size() * network.output_shape().size() != targets.len() {
            return Err(Error::Shape(format!(
                "{} samples x {} outputs vs {} targets",
                inputs.batch_size(),
                network.output_shape().size(),
                targets.len()
            )));
        }
        Ok(NetworkFit {
            template: network.clone(),
            inputs,
            targets,
        })
    }

    fn with_params(&self, params: &[f64]) -> Result<Network> {
        let mut net = self.template.clone();
        net.set_trainable(params)?;
        Ok(net)
    }
}

impl LeastSquares for NetworkFit<'_> {
    fn param_count(&self) -> usize {
        self.template.param_count()
    }

    fn residuals(&self, params: &[f64]) -> Result<Vec<f64>> {
        let y = self.with_params(params)?.predict(self.inputs)?;
        Ok(y.values().iter().zip(self.targets).map(|(a, b)| a - b).collect())
    }

    fn linearize(&self, params: &[f64]) -> Result<(Vec<f64>, DMatrix<f64>)> {
        let net = self.with_params(params)?;
        let y = net.predict(self.inputs)?;
        let r = y.values().iter().zip(self.targets).map(|(a, b)| a - b).collect();
        Ok((r, compute_jacobian(&net, self.inputs)?))
    }
}
