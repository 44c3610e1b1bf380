//! Forward and reverse passes over a [`NetworkGraph`].

use super::graph::{LayerKind, NetworkGraph};
use super::params::{bias_key, bn_key, weight_key, Gradients, ParameterStore};
use crate::error::{Error, Result};
use crate::ops::{self, BnCache, BnState, Mode};
use crate::tensor::{concat_channels, Real, Tensor};

/// Activations of every layer, kept for the backward pass.
#[derive(Debug, Clone)]
pub struct ForwardPass<T> {
    pub activations: Vec<Tensor<T>>,
    bn_caches: Vec<Option<BnCache>>,
    mode: Mode,
}

impl<T: Real> ForwardPass<T> {
    pub fn logits(&self) -> &Tensor<T> {
        self.activations.last().expect("graph has an output")
    }

    pub fn into_logits(mut self) -> Tensor<T> {
        self.activations.pop().expect("graph has an output")
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }
}

fn bn_state<T: Real>(params: &ParameterStore<T>, layer: &str) -> Result<BnState<T>> {
    Ok(BnState {
        gamma: params.get(&bn_key(layer, "gamma"))?.clone(),
        beta: params.get(&bn_key(layer, "beta"))?.clone(),
        running_mean: params.get(&bn_key(layer, "running_mean"))?.clone(),
        running_var: params.get(&bn_key(layer, "running_var"))?.clone(),
    })
}

type RunningUpdate<T> = (String, Tensor<T>, Tensor<T>);

fn run<T: Real>(
    graph: &NetworkGraph,
    params: &ParameterStore<T>,
    batch: &Tensor<T>,
    mode: Mode,
) -> Result<(ForwardPass<T>, Vec<RunningUpdate<T>>)> {
    let cfg = &graph.config;
    let s = batch.shape5()?;
    if s.c != 1 || s.h != cfg.patch || s.w != cfg.patch || s.d != cfg.bands {
        return Err(Error::Shape(format!(
            "batch {:?} does not match (n, 1, {}, {}, {})",
            batch.shape(),
            cfg.patch,
            cfg.patch,
            cfg.bands
        ))
        .in_layer("input"));
    }

    let mut acts: Vec<Tensor<T>> = Vec::with_capacity(graph.layers.len());
    let mut caches = Vec::with_capacity(graph.layers.len());
    let mut updates = Vec::new();
    for l in &graph.layers {
        let x = |k: usize| &acts[l.inputs[k]];
        let mut cache = None;
        let out = (|| -> Result<Tensor<T>> {
            match &l.kind {
                LayerKind::Input => Ok(batch.clone()),
                LayerKind::Conv(spec) => {
                    let w = params.get(&weight_key(&l.name))?;
                    let b = if spec.has_bias {
                        Some(params.get(&bias_key(&l.name))?)
                    } else {
                        None
                    };
                    ops::conv3d_forward(x(0), w, b, spec)
                }
                LayerKind::BatchNorm(spec) => {
                    let mut st = bn_state(params, &l.name)?;
                    let (y, c) = ops::batchnorm_forward(x(0), &mut st, spec, mode)?;
                    cache = Some(c);
                    if mode == Mode::Train {
                        updates.push((l.name.clone(), st.running_mean, st.running_var));
                    }
                    Ok(y)
                }
                LayerKind::Relu => Ok(x(0).relu()),
                LayerKind::Concat => {
                    let parts: Vec<&Tensor<T>> = l.inputs.iter().map(|&i| &acts[i]).collect();
                    concat_channels(&parts)
                }
                LayerKind::GlobalAvgPool => ops::global_avg_pool(x(0)),
                LayerKind::FullyConnected { .. } => ops::fully_connected_forward(
                    x(0),
                    params.get(&weight_key(&l.name))?,
                    Some(params.get(&bias_key(&l.name))?),
                ),
            }
        })()
        .map_err(|e| e.in_layer(&l.name))?;
        acts.push(out);
        caches.push(cache);
    }
    Ok((
        ForwardPass {
            activations: acts,
            bn_caches: caches,
            mode,
        },
        updates,
    ))
}

/// Forward pass. In training mode batch-norm running statistics in
/// `params` are updated.
pub fn forward<T: Real>(
    graph: &NetworkGraph,
    params: &mut ParameterStore<T>,
    batch: &Tensor<T>,
    mode: Mode,
) -> Result<ForwardPass<T>> {
    let (pass, updates) = run(graph, params, batch, mode)?;
    for (name, mean, var) in updates {
        *params.get_mut(&bn_key(&name, "running_mean"))? = mean;
        *params.get_mut(&bn_key(&name, "running_var"))? = var;
    }
    Ok(pass)
}

/// Inference-mode logits; `params` is left untouched.
pub fn predict<T: Real>(graph: &NetworkGraph, params: &ParameterStore<T>, batch: &Tensor<T>) -> Result<Tensor<T>> {
    Ok(run(graph, params, batch, Mode::Infer)?.0.into_logits())
}

/// Gradients of every trainable parameter, plus the gradient w.r.t. each
/// layer's output (index-aligned with the graph) for inspection.
#[derive(Debug, Clone)]
pub struct BackwardPass<T> {
    pub params: Gradients<T>,
    pub layer_grads: Vec<Option<Tensor<T>>>,
}

fn accumulate<T: Real>(slot: &mut Option<Tensor<T>>, g: Tensor<T>) -> Result<()> {
    match slot {
        Some(acc) => acc.add_assign(&g),
        None => {
            *slot = Some(g);
            Ok(())
        }
    }
}

/// Reverse traversal of the DAG starting from `grad_logits` (shape of the logits).
pub fn backward<T: Real>(
    graph: &NetworkGraph,
    params: &ParameterStore<T>,
    pass: &ForwardPass<T>,
    grad_logits: &Tensor<T>,
) -> Result<BackwardPass<T>> {
    if grad_logits.shape() != pass.logits().shape() {
        return Err(Error::Shape(format!(
            "loss gradient {:?} does not match logits {:?}",
            grad_logits.shape(),
            pass.logits().shape()
        )));
    }
    let acts = &pass.activations;
    let mut grads: Vec<Option<Tensor<T>>> = vec![None; graph.layers.len()];
    grads[graph.output()] = Some(grad_logits.clone());
    let mut pgrads = Gradients::new();

    for (i, l) in graph.layers.iter().enumerate().rev() {
        let Some(g) = grads[i].clone() else { continue };
        let x = |k: usize| &acts[l.inputs[k]];
        let mut upstream: Vec<(usize, Tensor<T>)> = Vec::new();
        (|| -> Result<()> {
            match &l.kind {
                LayerKind::Input => {}
                LayerKind::Conv(spec) => {
                    let w = params.get(&weight_key(&l.name))?;
                    let cg = ops::conv3d_backward(&g, x(0), w, spec)?;
                    pgrads.insert(weight_key(&l.name), cg.weights);
                    if let Some(b) = cg.bias {
                        pgrads.insert(bias_key(&l.name), b);
                    }
                    upstream.push((l.inputs[0], cg.input));
                }
                LayerKind::BatchNorm(_) => {
                    let cache = pass.bn_caches[i]
                        .as_ref()
                        .ok_or_else(|| Error::Config("missing batch-norm cache".into()))?;
                    let gamma = params.get(&bn_key(&l.name, "gamma"))?;
                    let bg = ops::batchnorm_backward(&g, cache, gamma)?;
                    pgrads.insert(bn_key(&l.name, "gamma"), bg.gamma);
                    pgrads.insert(bn_key(&l.name, "beta"), bg.beta);
                    upstream.push((l.inputs[0], bg.input));
                }
                LayerKind::Relu => upstream.push((l.inputs[0], ops::relu_backward(&g, x(0))?)),
                LayerKind::Concat => {
                    let mut start = 0;
                    for &j in &l.inputs {
                        let c = acts[j].shape()[1];
                        upstream.push((j, g.slice_channels(start, c)?));
                        start += c;
                    }
                }
                LayerKind::GlobalAvgPool => {
                    upstream.push((l.inputs[0], ops::global_avg_pool_backward(&g, x(0).shape())?))
                }
                LayerKind::FullyConnected { .. } => {
                    let fg = ops::fully_connected_backward(&g, x(0), params.get(&weight_key(&l.name))?)?;
                    pgrads.insert(weight_key(&l.name), fg.weights);
                    pgrads.insert(bias_key(&l.name), fg.bias);
                    upstream.push((l.inputs[0], fg.input));
                }
            }
            Ok(())
        })()
        .map_err(|e| e.in_layer(&l.name))?;
        for (j, gj) in upstream {
            accumulate(&mut grads[j], gj)?;
        }
    }

    // Layers never reached (zero paths) still get explicit zero gradients.
    for (k, t) in &params.tensors {
        if super::params::is_trainable(k) && !pgrads.contains_key(k) {
            pgrads.insert(k.clone(), Tensor::zeros(t.shape()));
        }
    }
    Ok(BackwardPass {
        params: pgrads,
        layer_grads: grads,
    })
}
