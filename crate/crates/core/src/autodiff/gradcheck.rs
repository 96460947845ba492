//! Central finite-difference verification of reverse-mode gradients.

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::graph::{Graph, NodeId};
use super::params::ParamStore;
use super::tensor::Tensor;
use crate::error::Result;

pub const FD_STEP: f64 = 1e-6;
/// Tensors larger than this are checked on a random subset of this many elements.
pub const MAX_CHECKED: usize = 256;
/// Target for `sum |w_i * y_i|` of the projected objective. The relative
/// error floor is absolute (1e-8), so the objective's scale has to be pinned
/// for it to mean anything; at this scale f64 roundoff in the differences
/// stays near 1e-13.
pub const OBJECTIVE_SCALE: f64 = 1e-3;

/// Anything owning parameter stores that a graph builder reads from.
pub trait HasParams<T> {
    fn param_stores(&self) -> Vec<&ParamStore<T>>;
    fn param_stores_mut(&mut self) -> Vec<&mut ParamStore<T>>;
}

impl<T> HasParams<T> for () {
    fn param_stores(&self) -> Vec<&ParamStore<T>> {
        Vec::new()
    }
    fn param_stores_mut(&mut self) -> Vec<&mut ParamStore<T>> {
        Vec::new()
    }
}

impl<T> HasParams<T> for ParamStore<T> {
    fn param_stores(&self) -> Vec<&ParamStore<T>> {
        vec![self]
    }
    fn param_stores_mut(&mut self) -> Vec<&mut ParamStore<T>> {
        vec![self]
    }
}

#[derive(Clone, Debug, Default)]
pub struct GradCheckReport {
    /// Largest relative error per checked tensor, inputs first (`input<i>`).
    pub entries: Vec<(String, f64)>,
    pub elements: usize,
}

impl GradCheckReport {
    pub fn max_rel_err(&self) -> f64 {
        self.entries.iter().map(|e| e.1).fold(0.0, f64::max)
    }
}

pub fn rel_err(fd: f64, ad: f64) -> f64 {
    (fd - ad).abs() / fd.abs().max(ad.abs()).max(1e-8)
}

/// Compares autodiff gradients of `build` against central differences.
///
/// `build` receives the graph, the model and one variable node per entry of
/// `inputs`, and returns any node; it is reduced to a scalar with fixed
/// random weights drawn from `seed`, scaled to [`OBJECTIVE_SCALE`]. Every element of
/// every input and parameter is perturbed, or a random subset of
/// [`MAX_CHECKED`] for larger tensors.
pub fn grad_check<M, F>(model: &mut M, inputs: &[Tensor<f64>], seed: u64, build: F) -> Result<GradCheckReport>
where
    M: HasParams<f64>,
    F: Fn(&mut Graph<f64>, &mut M, &[NodeId]) -> Result<NodeId>,
{
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut projection: Option<Tensor<f64>> = None;

    let mut eval = |model: &mut M, inputs: &[Tensor<f64>], rng: &mut ChaCha8Rng, grads: bool| -> Result<(f64, Vec<Vec<f64>>, Vec<Vec<Option<Vec<f64>>>>)> {
        let mut g = Graph::new();
        let ids: Vec<NodeId> = inputs.iter().map(|t| g.variable(t.clone())).collect();
        let out = build(&mut g, model, &ids)?;
        let shape = g.shape(out);
        let weights = projection
            .get_or_insert_with(|| {
                let mut u = Tensor::from_fn(shape, |_| rng.gen_range(-1.0..1.0));
                let mass: f64 = u.data().iter().zip(g.value(out).data()).map(|(a, b)| (a * b).abs()).sum();
                if mass > 0.0 {
                    u.data_mut().iter_mut().for_each(|v| *v *= OBJECTIVE_SCALE / mass);
                }
                u
            })
            .clone();
        let w = g.input(weights);
        let prod = g.mul(out, w)?;
        let root = g.sum(prod);
        let value = g.scalar(root);
        if !grads {
            return Ok((value, Vec::new(), Vec::new()));
        }
        let gr = g.backward(root)?;
        let gin = ids
            .iter()
            .zip(inputs)
            .map(|(&id, t)| gr.wrt(id).map_or_else(|| vec![0.0; t.len()], <[f64]>::to_vec))
            .collect();
        let gp = model
            .param_stores()
            .into_iter()
            .map(|s| gr.for_store(s).into_iter().map(|o| o.map(<[f64]>::to_vec)).collect())
            .collect();
        Ok((value, gin, gp))
    };

    let (_, grad_in, grad_params) = eval(model, inputs, &mut rng, true)?;
    let mut report = GradCheckReport::default();
    let pick = |len: usize, rng: &mut ChaCha8Rng| -> Vec<usize> {
        if len <= MAX_CHECKED {
            (0..len).collect()
        } else {
            sample(rng, len, MAX_CHECKED).into_vec()
        }
    };

    let mut work = inputs.to_vec();
    for (i, analytic) in grad_in.iter().enumerate() {
        let mut worst = 0.0f64;
        for k in pick(work[i].len(), &mut rng) {
            let orig = work[i].data()[k];
            work[i].data_mut()[k] = orig + FD_STEP;
            let plus = eval(model, &work, &mut rng, false)?.0;
            work[i].data_mut()[k] = orig - FD_STEP;
            let minus = eval(model, &work, &mut rng, false)?.0;
            work[i].data_mut()[k] = orig;
            worst = worst.max(rel_err((plus - minus) / (2.0 * FD_STEP), analytic[k]));
            report.elements += 1;
        }
        report.entries.push((format!("input{i}"), worst));
    }

    for (s, store_grads) in grad_params.iter().enumerate() {
        for (p, analytic) in store_grads.iter().enumerate() {
            let (name, len) = {
                let store = &model.param_stores()[s];
                let param = &store.params()[p];
                (param.name.clone(), param.value.len())
            };
            let mut worst = 0.0f64;
            for k in pick(len, &mut rng) {
                let orig = model.param_stores()[s].params()[p].value.data()[k];
                set_param(model, s, p, k, orig + FD_STEP);
                let plus = eval(model, &work, &mut rng, false)?.0;
                set_param(model, s, p, k, orig - FD_STEP);
                let minus = eval(model, &work, &mut rng, false)?.0;
                set_param(model, s, p, k, orig);
                let ad = analytic.as_ref().map_or(0.0, |g| g[k]);
                worst = worst.max(rel_err((plus - minus) / (2.0 * FD_STEP), ad));
                report.elements += 1;
            }
            report.entries.push((name, worst));
        }
    }
    Ok(report)
}

fn set_param<M: HasParams<f64>>(model: &mut M, s: usize, p: usize, k: usize, v: f64) {
    model.param_stores_mut()[s].params_mut()[p].value.data_mut()[k] = v;
}
