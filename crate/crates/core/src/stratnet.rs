//! The strategy network: an MLP `λ₁ → x ∈ (0,1)^d` with tanh hidden layers
//! and a sigmoid output, trained by hand-written reverse mode and Adam.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::codec::{self, derived_rng};
use crate::domain::{size_objective, IdealPoint, Request, Strategy};
use crate::error::{Error, Result};
use crate::gp::{AcquisitionConfig, SurrogateModel};
use crate::scalarize::ScalarizerKind;

pub const DEFAULT_HIDDEN: usize = 64;
pub const DEFAULT_LR: f64 = 1e-3;
const BETA1: f64 = 0.9;
const BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

fn sigmoid(v: f64) -> f64 {
    1.0 / (1.0 + (-v).exp())
}

/// Offsets of each parameter block inside the flat vector.
#[derive(Debug, Clone, Copy)]
struct Layout {
    d: usize,
    h: usize,
}

impl Layout {
    fn w1(&self) -> usize {
        0
    }
    fn b1(&self) -> usize {
        self.h
    }
    fn w2(&self) -> usize {
        2 * self.h
    }
    fn b2(&self) -> usize {
        2 * self.h + self.h * self.h
    }
    fn w3(&self) -> usize {
        3 * self.h + self.h * self.h
    }
    fn b3(&self) -> usize {
        3 * self.h + self.h * self.h + self.d * self.h
    }
    fn len(&self) -> usize {
        self.b3() + self.d
    }
}

/// Activations retained by [`StratNet::forward`] for the backward pass.
#[derive(Debug, Clone)]
pub struct Tape {
    input: f64,
    h1: Vec<f64>,
    h2: Vec<f64>,
    out: Vec<f64>,
}

impl Tape {
    pub fn output(&self) -> &[f64] {
        &self.out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StratNet {
    layout_d: usize,
    hidden: usize,
    params: Vec<f64>,
    adam_m: Vec<f64>,
    adam_v: Vec<f64>,
    step: u64,
    lr: f64,
    seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StratNetSnapshot {
    /// `[1, hidden, hidden, d]`.
    pub architecture: Vec<usize>,
    pub lr: f64,
    pub seed: u64,
    pub step: u64,
    #[serde(with = "codec::b64")]
    pub params: Vec<f64>,
    #[serde(with = "codec::b64")]
    pub adam_m: Vec<f64>,
    #[serde(with = "codec::b64")]
    pub adam_v: Vec<f64>,
}

impl StratNet {
    /// Glorot-uniform weights, zero biases.
    pub fn new(d: usize, hidden: usize, lr: f64, seed: u64) -> Self {
        let layout = Layout { d, h: hidden };
        let mut params = vec![0.0; layout.len()];
        let mut rng = derived_rng(seed, 0, 0x4E45);
        let mut fill = |start: usize, fan_in: usize, fan_out: usize| {
            let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
            for p in &mut params[start..start + fan_in * fan_out] {
                *p = rng.random_range(-bound..bound);
            }
        };
        fill(layout.w1(), 1, hidden);
        fill(layout.w2(), hidden, hidden);
        fill(layout.w3(), hidden, d);
        Self::from_params(d, hidden, params, lr, seed)
    }

    /// All weights and biases zero.
    pub fn zeros(d: usize, hidden: usize, lr: f64) -> Self {
        let n = Layout { d, h: hidden }.len();
        Self::from_params(d, hidden, vec![0.0; n], lr, 0)
    }

    fn from_params(d: usize, hidden: usize, params: Vec<f64>, lr: f64, seed: u64) -> Self {
        let n = params.len();
        Self {
            layout_d: d,
            hidden,
            params,
            adam_m: vec![0.0; n],
            adam_v: vec![0.0; n],
            step: 0,
            lr,
            seed,
        }
    }

    fn layout(&self) -> Layout {
        Layout {
            d: self.layout_d,
            h: self.hidden,
        }
    }

    pub fn dim(&self) -> usize {
        self.layout_d
    }

    pub fn num_params(&self) -> usize {
        self.params.len()
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    pub fn learning_rate(&self) -> f64 {
        self.lr
    }

    pub fn set_learning_rate(&mut self, lr: f64) {
        self.lr = lr;
    }

    pub fn forward(&self, lam: &Request) -> (Strategy, Tape) {
        let Layout { d, h } = self.layout();
        let l = self.layout();
        let p = &self.params;
        let input = lam.lambda1();

        let h1: Vec<f64> = (0..h)
            .map(|j| (p[l.w1() + j] * input + p[l.b1() + j]).tanh())
            .collect();
        let h2: Vec<f64> = (0..h)
            .map(|j| {
                let row = &p[l.w2() + j * h..l.w2() + (j + 1) * h];
                let z: f64 = row.iter().zip(&h1).map(|(w, a)| w * a).sum();
                (z + p[l.b2() + j]).tanh()
            })
            .collect();
        let out: Vec<f64> = (0..d)
            .map(|j| {
                let row = &p[l.w3() + j * h..l.w3() + (j + 1) * h];
                let z: f64 = row.iter().zip(&h2).map(|(w, a)| w * a).sum();
                sigmoid(z + p[l.b3() + j])
            })
            .collect();
        let x = Strategy::new(out.clone()).expect("sigmoid output lies in [0, 1]");
        (x, Tape { input, h1, h2, out })
    }

    pub fn predict(&self, lam: &Request) -> Strategy {
        self.forward(lam).0
    }

    /// `∇_θ (upstreamᵀ x)` for the forward pass recorded in `tape`.
    pub fn backward(&self, tape: &Tape, upstream: &[f64]) -> Result<Vec<f64>> {
        let Layout { d, h } = self.layout();
        let l = self.layout();
        if upstream.len() != d || tape.out.len() != d || tape.h1.len() != h {
            return Err(Error::InvalidArgument(format!(
                "upstream of length {} does not match network output {d}",
                upstream.len()
            )));
        }
        let p = &self.params;
        let mut grad = vec![0.0; p.len()];

        let delta3: Vec<f64> = (0..d)
            .map(|j| upstream[j] * tape.out[j] * (1.0 - tape.out[j]))
            .collect();
        let mut back2 = vec![0.0; h];
        for j in 0..d {
            grad[l.b3() + j] = delta3[j];
            let row = l.w3() + j * h;
            for k in 0..h {
                grad[row + k] = delta3[j] * tape.h2[k];
                back2[k] += p[row + k] * delta3[j];
            }
        }
        let delta2: Vec<f64> = (0..h)
            .map(|k| back2[k] * (1.0 - tape.h2[k] * tape.h2[k]))
            .collect();
        let mut back1 = vec![0.0; h];
        for j in 0..h {
            grad[l.b2() + j] = delta2[j];
            let row = l.w2() + j * h;
            for k in 0..h {
                grad[row + k] = delta2[j] * tape.h1[k];
                back1[k] += p[row + k] * delta2[j];
            }
        }
        for k in 0..h {
            let delta1 = back1[k] * (1.0 - tape.h1[k] * tape.h1[k]);
            grad[l.b1() + k] = delta1;
            grad[l.w1() + k] = delta1 * tape.input;
        }
        Ok(grad)
    }

    /// One bias-corrected Adam update.
    pub fn apply_adam(&mut self, grad: &[f64]) {
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - BETA1.powi(t);
        let c2 = 1.0 - BETA2.powi(t);
        for i in 0..self.params.len() {
            self.adam_m[i] = BETA1 * self.adam_m[i] + (1.0 - BETA1) * grad[i];
            self.adam_v[i] = BETA2 * self.adam_v[i] + (1.0 - BETA2) * grad[i] * grad[i];
            let m_hat = self.adam_m[i] / c1;
            let v_hat = self.adam_v[i] / c2;
            self.params[i] -= self.lr * m_hat / (v_hat.sqrt() + ADAM_EPS);
        }
    }

    pub fn snapshot(&self) -> StratNetSnapshot {
        StratNetSnapshot {
            architecture: vec![1, self.hidden, self.hidden, self.layout_d],
            lr: self.lr,
            seed: self.seed,
            step: self.step,
            params: self.params.clone(),
            adam_m: self.adam_m.clone(),
            adam_v: self.adam_v.clone(),
        }
    }

    pub fn from_snapshot(s: &StratNetSnapshot) -> Result<Self> {
        let [1, h, h2, d] = s.architecture[..] else {
            return Err(Error::Checkpoint(format!("unsupported architecture {:?}", s.architecture)));
        };
        let n = Layout { d, h }.len();
        if h != h2 || d == 0 || s.params.len() != n || s.adam_m.len() != n || s.adam_v.len() != n {
            return Err(Error::Checkpoint(format!(
                "parameter blocks do not match architecture {:?}",
                s.architecture
            )));
        }
        Ok(Self {
            layout_d: d,
            hidden: h,
            params: s.params.clone(),
            adam_m: s.adam_m.clone(),
            adam_v: s.adam_v.clone(),
            step: s.step,
            lr: s.lr,
            seed: s.seed,
        })
    }
}

/// Everything a gradient step needs besides the network itself.
#[derive(Debug, Clone, Copy)]
pub struct StepContext<'a> {
    pub model: &'a SurrogateModel,
    pub acquisition: &'a AcquisitionConfig,
    pub ideal: &'a IdealPoint,
    pub scalarizer: ScalarizerKind,
}

impl StepContext<'_> {
    /// Scalarized surrogate loss `ĝ(x | λ)`, plus `∂ĝ/∂x`.
    pub fn loss_and_input_grad(&self, x: &Strategy, lam: &Request) -> (f64, Vec<f64>) {
        let d = x.dim();
        let f1 = size_objective(x);
        let (f2_hat, g2) = self.model.acquire(x.values(), self.acquisition);
        let (value, w1, w2) = self.scalarizer.value_and_weights((f1, f2_hat), lam, self.ideal);
        let g1 = -1.0 / d as f64;
        let upstream = g2.iter().map(|g| w1 * g1 + w2 * g).collect();
        (value, upstream)
    }
}

/// Sum over `requests` of `∇_θ ĝ`, and the mean loss.
pub fn batch_gradient(net: &StratNet, ctx: &StepContext, requests: &[Request]) -> Result<(f64, Vec<f64>)> {
    let mut total = vec![0.0; net.num_params()];
    let mut loss = 0.0;
    for lam in requests {
        let (x, tape) = net.forward(lam);
        let (value, upstream) = ctx.loss_and_input_grad(&x, lam);
        let g = net.backward(&tape, &upstream)?;
        if !value.is_finite() || g.iter().any(|v| !v.is_finite()) {
            return Err(Error::NumericalFailure(format!(
                "non-finite gradient at lambda = {:?}",
                lam.lambda()
            )));
        }
        for (t, v) in total.iter_mut().zip(&g) {
            *t += v;
        }
        loss += value;
    }
    Ok((loss / requests.len().max(1) as f64, total))
}

/// One update on a fixed request batch; returns the batch-mean loss before the step.
pub fn training_step_with(net: &mut StratNet, ctx: &StepContext, requests: &[Request]) -> Result<f64> {
    let (loss, grad) = batch_gradient(net, ctx, requests)?;
    net.apply_adam(&grad);
    Ok(loss)
}

/// Samples `k` requests uniformly and applies one update.
pub fn training_step<R: Rng + ?Sized>(
    net: &mut StratNet,
    ctx: &StepContext,
    k: usize,
    rng: &mut R,
) -> Result<f64> {
    if k == 0 {
        return Err(Error::InvalidArgument("at least one request per step is required".into()));
    }
    let requests: Vec<Request> = (0..k).map(|_| crate::domain::sample_request(rng)).collect();
    training_step_with(net, ctx, &requests)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn req(l: f64) -> Request {
        Request::new(l).unwrap()
    }

    #[test]
    fn parameter_count_matches_architecture() {
        for d in [1, 4, 12] {
            let net = StratNet::new(d, 64, 1e-3, 0);
            assert_eq!(net.num_params(), 64 + 64 + 64 * 64 + 64 + d * 64 + d);
        }
    }

    #[test]
    fn zero_network_outputs_half() {
        let net = StratNet::zeros(5, 64, 1e-3);
        for l in [0.0, 0.3, 1.0] {
            assert_eq!(net.predict(&req(l)).values(), &[0.5; 5]);
        }
    }

    #[test]
    fn forward_is_deterministic() {
        let net = StratNet::new(6, 64, 1e-3, 3);
        let a = net.predict(&req(0.3));
        let b = net.predict(&req(0.3));
        assert_eq!(a, b);
        assert_eq!(StratNet::new(6, 64, 1e-3, 3), net);
    }

    #[test]
    fn zero_gradient_step_leaves_output_unchanged() {
        let mut net = StratNet::new(4, 64, 1e-3, 1);
        let before = net.predict(&req(0.3));
        net.apply_adam(&vec![0.0; net.num_params()]);
        assert_eq!(net.predict(&req(0.3)), before);
    }

    #[test]
    fn zero_upstream_gives_zero_gradient() {
        let net = StratNet::new(3, 64, 1e-3, 2);
        let (_, tape) = net.forward(&req(0.6));
        let g = net.backward(&tape, &[0.0; 3]).unwrap();
        assert!(g.iter().all(|&v| v == 0.0));
        assert!(net.backward(&tape, &[0.0; 2]).is_err());
    }

    fn dot_output(net: &StratNet, lam: &Request, up: &[f64]) -> f64 {
        net.predict(lam).values().iter().zip(up).map(|(a, b)| a * b).sum()
    }

    #[test]
    fn backward_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let base = StratNet::new(4, 16, 1e-3, 9);
        let lam = req(0.37);
        let up: Vec<f64> = (0..4).map(|_| rng.random_range(-1.0..1.0)).collect();
        let (_, tape) = base.forward(&lam);
        let g = base.backward(&tape, &up).unwrap();
        for _ in 0..20 {
            let i = rng.random_range(0..base.num_params());
            let h = 1e-6;
            let mut plus = base.clone();
            plus.params_mut()[i] += h;
            let mut minus = base.clone();
            minus.params_mut()[i] -= h;
            let num = (dot_output(&plus, &lam, &up) - dot_output(&minus, &lam, &up)) / (2.0 * h);
            let err = (g[i] - num).abs() / num.abs().max(1e-6);
            assert!(err < 1e-5 || (g[i] - num).abs() < 1e-10, "param {i}: {} vs {num}", g[i]);
        }
    }

    #[test]
    fn unit_upstream_gives_jacobian_row() {
        let net = StratNet::new(3, 16, 1e-3, 4);
        let lam = req(0.8);
        for out in 0..3 {
            let mut up = [0.0; 3];
            up[out] = 1.0;
            let (_, tape) = net.forward(&lam);
            let g = net.backward(&tape, &up).unwrap();
            for i in [0, 20, 40, 300, net.num_params() - 1 - (2 - out)] {
                let h = 1e-6;
                let mut plus = net.clone();
                plus.params_mut()[i] += h;
                let mut minus = net.clone();
                minus.params_mut()[i] -= h;
                let num = (plus.predict(&lam).values()[out] - minus.predict(&lam).values()[out]) / (2.0 * h);
                assert!((g[i] - num).abs() <= 1e-5 * num.abs().max(1e-5), "out {out} param {i}");
            }
        }
    }

    #[test]
    fn adam_first_step_moves_against_gradient_by_lr() {
        let mut net = StratNet::zeros(2, 4, 0.01);
        let mut g = vec![0.0; net.num_params()];
        g[0] = 3.0;
        g[1] = -0.5;
        net.apply_adam(&g);
        assert!((net.params()[0] + 0.01).abs() < 1e-9);
        assert!((net.params()[1] - 0.01).abs() < 1e-9);
        assert_eq!(net.params()[2], 0.0);
    }

    #[test]
    fn snapshot_round_trip() {
        let mut net = StratNet::new(3, 8, 1e-3, 6);
        let mut g = vec![0.1; net.num_params()];
        g[3] = -2.0;
        net.apply_adam(&g);
        let json = serde_json::to_string(&net.snapshot()).unwrap();
        let back = StratNet::from_snapshot(&serde_json::from_str(&json).unwrap()).unwrap();
        assert_eq!(back, net);
        let mut bad = net.snapshot();
        bad.params.pop();
        assert!(StratNet::from_snapshot(&bad).is_err());
    }
}
