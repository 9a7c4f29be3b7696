//! Central-difference gradient checking.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Uniform};

use crate::error::Result;
use crate::tensor::{activation, Activation, Tensor};
use crate::train::graph::{GradStore, ParamStore};
use crate::train::ops::{activation_backward, linear_backward, linear_forward};

#[derive(Clone, Debug)]
pub struct GradCheck {
    /// `‖analytic − numeric‖ / ‖numeric‖` per tensor over the checked entries.
    pub per_tensor: Vec<(String, f64)>,
    pub max_rel_error: f64,
}

impl GradCheck {
    pub fn passes(&self, tol: f64) -> bool {
        self.max_rel_error <= tol
    }

    fn from_parts(parts: Vec<(String, f64, f64)>) -> Self {
        let per_tensor: Vec<(String, f64)> = parts
            .into_iter()
            .map(|(n, diff, norm)| (n, diff.sqrt() / norm.sqrt().max(1e-12)))
            .collect();
        let max_rel_error = per_tensor.iter().map(|p| p.1).fold(0.0, f64::max);
        Self {
            per_tensor,
            max_rel_error,
        }
    }
}

/// Entries checked for a tensor of `len` elements: all when `limit` is zero
/// or large enough, else an even stride.
fn checked_indices(len: usize, limit: usize) -> Vec<usize> {
    if limit == 0 || len <= limit {
        (0..len).collect()
    } else {
        (0..limit).map(|i| i * len / limit).collect()
    }
}

/// Compares `analytic` against central differences of `loss` over f64
/// parameters.
pub fn finite_diff_check(
    params: &[(String, Vec<f64>)],
    analytic: &[Vec<f64>],
    loss: impl Fn(&[Vec<f64>]) -> f64,
    eps: f64,
    limit: usize,
) -> GradCheck {
    let mut work: Vec<Vec<f64>> = params.iter().map(|p| p.1.clone()).collect();
    let mut parts = Vec::new();
    for (t, (name, values)) in params.iter().enumerate() {
        let (mut diff, mut norm) = (0.0, 0.0);
        for i in checked_indices(values.len(), limit) {
            work[t][i] = values[i] + eps;
            let up = loss(&work);
            work[t][i] = values[i] - eps;
            let down = loss(&work);
            work[t][i] = values[i];
            let numeric = (up - down) / (2.0 * eps);
            diff += (analytic[t][i] - numeric).powi(2);
            norm += numeric * numeric;
        }
        parts.push((name.clone(), diff, norm));
    }
    GradCheck::from_parts(parts)
}

/// The same check over an f32 parameter store, with the loss evaluated by
/// the f32 training path. Only tensors present in `analytic` are checked.
pub fn finite_diff_check_store(
    params: &ParamStore,
    analytic: &GradStore,
    loss: impl Fn(&ParamStore) -> f64,
    eps: f32,
    limit: usize,
) -> GradCheck {
    let mut work = params.clone();
    let mut parts = Vec::new();
    for (name, grad) in analytic {
        let (mut diff, mut norm) = (0.0, 0.0);
        for i in checked_indices(grad.len(), limit) {
            let orig = params[name].data()[i];
            work.get_mut(name).expect("same keys").data_mut()[i] = orig + eps;
            let up = loss(&work);
            work.get_mut(name).expect("same keys").data_mut()[i] = orig - eps;
            let down = loss(&work);
            work.get_mut(name).expect("same keys").data_mut()[i] = orig;
            let h = f64::from(orig + eps) - f64::from(orig - eps);
            let numeric = (up - down) / h;
            diff += (f64::from(grad.data()[i]) - numeric).powi(2);
            norm += numeric * numeric;
        }
        parts.push((name.clone(), diff, norm));
    }
    GradCheck::from_parts(parts)
}

/// Projector (`fc1 → gelu_tanh → fc2`) followed by one BitLinear on its
/// continuous latent path, scored by `½‖y − target‖²`.
#[derive(Clone, Debug)]
pub struct SurrogateFragment {
    pub features: Tensor,
    pub fc1_w: Tensor,
    pub fc1_b: Tensor,
    pub fc2_w: Tensor,
    pub fc2_b: Tensor,
    pub lin_w: Tensor,
    pub target: Tensor,
}

pub const FRAGMENT_PARAMS: [&str; 5] = [
    "fc1.weight",
    "fc1.bias",
    "fc2.weight",
    "fc2.bias",
    "bitlinear.weight",
];

impl SurrogateFragment {
    pub fn random(n: usize, d_in: usize, hidden: usize, d_out: usize, o: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let u = Uniform::new(-1.0f32, 1.0).expect("valid range");
        let mut t = |shape: &[usize], s: f32| Tensor::from_fn(shape, |_| u.sample(&mut rng) * s);
        Self {
            features: t(&[n, d_in], 1.0),
            fc1_w: t(&[hidden, d_in], 1.0 / (d_in as f32).sqrt()),
            fc1_b: t(&[hidden], 0.1),
            fc2_w: t(&[d_out, hidden], 1.0 / (hidden as f32).sqrt()),
            fc2_b: t(&[d_out], 0.1),
            lin_w: t(&[o, d_out], 1.0 / (d_out as f32).sqrt()),
            target: t(&[n, o], 1.0),
        }
    }

    pub fn params(&self) -> [&Tensor; 5] {
        [
            &self.fc1_w,
            &self.fc1_b,
            &self.fc2_w,
            &self.fc2_b,
            &self.lin_w,
        ]
    }

    /// Loss and analytic gradients in [`FRAGMENT_PARAMS`] order.
    pub fn loss_and_grads(&self) -> Result<(f64, [Tensor; 5])> {
        let h1 = linear_forward(&self.features, &self.fc1_w, Some(&self.fc1_b))?;
        let a = activation(&h1, Activation::GeluTanh);
        let p = linear_forward(&a, &self.fc2_w, Some(&self.fc2_b))?;
        let y = linear_forward(&p, &self.lin_w, None)?;
        let mut g = y.clone();
        let mut loss = 0.0f64;
        for (gv, t) in g.data_mut().iter_mut().zip(self.target.data()) {
            *gv -= t;
            loss += 0.5 * f64::from(*gv) * f64::from(*gv);
        }
        let gl = linear_backward(&p, &self.lin_w, &g, true, false)?;
        let g2 = linear_backward(&a, &self.fc2_w, &gl.dx, true, true)?;
        let dh1 = activation_backward(&h1, &g2.dx, Activation::GeluTanh)?;
        let g1 = linear_backward(&self.features, &self.fc1_w, &dh1, true, true)?;
        Ok((
            loss,
            [
                g1.dw.expect("requested"),
                g1.db.expect("requested"),
                g2.dw.expect("requested"),
                g2.db.expect("requested"),
                gl.dw.expect("requested"),
            ],
        ))
    }
}
