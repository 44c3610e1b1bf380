//! Central finite-difference checks for every differentiable primitive and
//! a small end-to-end network. Each check returns the worst relative error.

use ldwnet_core::loss::{loss_multiclass, LossConfig};
use ldwnet_core::network::{backward, build_network, forward, init_parameters, is_trainable, NetworkConfig};
use ldwnet_core::ops::{
    batchnorm_backward, batchnorm_forward, conv3d_backward, conv3d_forward, fully_connected_backward,
    fully_connected_forward, global_avg_pool, global_avg_pool_backward, relu_backward, BatchNormSpec,
    BnState, Conv3dSpec, Mode,
};
use ldwnet_core::Tensor;
use rand::seq::SliceRandom;
use rand::Rng;

use super::{central_diff, dot, random_tensor, rel_err, rng};

pub const STEP: f64 = 1e-6;

fn t(shape: &[usize], data: &[f64]) -> Tensor<f64> {
    Tensor::from_vec(shape, data.to_vec()).unwrap()
}

/// Largest error over all coordinates of `x` for the scalar objective `f`.
fn sweep(x: &[f64], analytic: &[f64], mut f: impl FnMut(&[f64]) -> f64) -> f64 {
    let mut x = x.to_vec();
    let mut worst: f64 = 0.0;
    for i in 0..x.len() {
        let num = central_diff(&mut x, i, STEP, &mut f);
        worst = worst.max(rel_err(num, analytic[i]));
    }
    worst
}

pub fn conv_specs() -> Vec<(Conv3dSpec, [usize; 5])> {
    vec![
        (Conv3dSpec::new(2, 3, [2, 3, 2]), [2, 2, 4, 4, 3]),
        (Conv3dSpec::new(1, 4, [1, 1, 3]).with_stride([1, 1, 2]), [2, 1, 3, 3, 8]),
        (Conv3dSpec::new(6, 6, [1, 1, 1]).with_groups(3), [2, 6, 3, 2, 2]),
        (Conv3dSpec::depthwise(3, [3, 3, 3], [1, 1, 1]), [2, 3, 3, 4, 3]),
        (Conv3dSpec::depthwise(2, [3, 3, 4], [1, 1, 0]), [1, 2, 3, 3, 4]),
        (Conv3dSpec::new(4, 2, [3, 2, 2]).with_groups(2).with_stride([2, 1, 2]).with_padding([1, 0, 1]), [1, 4, 5, 3, 4]),
    ]
}

pub fn conv(spec: &Conv3dSpec, shape: [usize; 5], seed: u64) -> f64 {
    let mut r = rng(seed);
    let spec = spec.with_bias(true);
    let x = random_tensor(&mut r, &shape);
    let w = random_tensor(&mut r, &spec.weight_shape());
    let b = random_tensor(&mut r, &[spec.out_channels]);
    let y = conv3d_forward(&x, &w, Some(&b), &spec).unwrap();
    let g = random_tensor(&mut r, y.shape());
    let grads = conv3d_backward(&g, &x, &w, &spec).unwrap();
    let obj = |x: &Tensor<f64>, w: &Tensor<f64>, b: &Tensor<f64>| {
        dot(conv3d_forward(x, w, Some(b), &spec).unwrap().data(), g.data())
    };
    let ex = sweep(x.data(), grads.input.data(), |v| obj(&t(x.shape(), v), &w, &b));
    let ew = sweep(w.data(), grads.weights.data(), |v| obj(&x, &t(w.shape(), v), &b));
    let eb = sweep(b.data(), grads.bias.as_ref().unwrap().data(), |v| obj(&x, &w, &t(b.shape(), v)));
    ex.max(ew).max(eb)
}

pub fn batchnorm(seed: u64) -> f64 {
    let mut r = rng(seed);
    let spec = BatchNormSpec::new(3);
    let x = random_tensor(&mut r, &[2, 3, 2, 2, 3]);
    let mut st = BnState::<f64>::new(3);
    st.gamma = random_tensor(&mut r, &[3]);
    st.beta = random_tensor(&mut r, &[3]);
    let g = random_tensor(&mut r, x.shape());
    let (_, cache) = batchnorm_forward(&x, &mut st.clone(), &spec, Mode::Train).unwrap();
    let grads = batchnorm_backward(&g, &cache, &st.gamma).unwrap();
    let obj = |x: &Tensor<f64>, gamma: &Tensor<f64>, beta: &Tensor<f64>| {
        let mut s = st.clone();
        s.gamma = gamma.clone();
        s.beta = beta.clone();
        dot(batchnorm_forward(x, &mut s, &spec, Mode::Train).unwrap().0.data(), g.data())
    };
    let ex = sweep(x.data(), grads.input.data(), |v| obj(&t(x.shape(), v), &st.gamma, &st.beta));
    let eg = sweep(st.gamma.data(), grads.gamma.data(), |v| obj(&x, &t(&[3], v), &st.beta));
    let eb = sweep(st.beta.data(), grads.beta.data(), |v| obj(&x, &st.gamma, &t(&[3], v)));

    // Inference mode: a fixed affine map per channel.
    let mut inf = st.clone();
    inf.running_mean = random_tensor(&mut r, &[3]);
    inf.running_var = Tensor::from_vec(&[3], vec![0.5, 1.5, 2.0]).unwrap();
    let (_, icache) = batchnorm_forward(&x, &mut inf.clone(), &spec, Mode::Infer).unwrap();
    let igrads = batchnorm_backward(&g, &icache, &inf.gamma).unwrap();
    let ei = sweep(x.data(), igrads.input.data(), |v| {
        dot(
            batchnorm_forward(&t(x.shape(), v), &mut inf.clone(), &spec, Mode::Infer).unwrap().0.data(),
            g.data(),
        )
    });
    ex.max(eg).max(eb).max(ei)
}

pub fn relu(seed: u64) -> f64 {
    let mut r = rng(seed);
    // Keep every input away from the kink.
    let data: Vec<f64> = (0..60)
        .map(|_| {
            let v: f64 = r.gen_range(0.01..1.0);
            if r.gen_bool(0.5) { v } else { -v }
        })
        .collect();
    let x = t(&[2, 3, 2, 5, 1], &data);
    let g = random_tensor(&mut r, x.shape());
    let gx = relu_backward(&g, &x).unwrap();
    sweep(x.data(), gx.data(), |v| dot(t(x.shape(), v).relu().data(), g.data()))
}

pub fn pool(seed: u64) -> f64 {
    let mut r = rng(seed);
    let x = random_tensor(&mut r, &[2, 3, 2, 3, 2]);
    let g = random_tensor(&mut r, &[2, 3]);
    let gx = global_avg_pool_backward(&g, x.shape()).unwrap();
    sweep(x.data(), gx.data(), |v| dot(global_avg_pool(&t(x.shape(), v)).unwrap().data(), g.data()))
}

pub fn dense(seed: u64) -> f64 {
    let mut r = rng(seed);
    let x = random_tensor(&mut r, &[3, 5]);
    let w = random_tensor(&mut r, &[5, 4]);
    let b = random_tensor(&mut r, &[4]);
    let g = random_tensor(&mut r, &[3, 4]);
    let grads = fully_connected_backward(&g, &x, &w).unwrap();
    let obj = |x: &Tensor<f64>, w: &Tensor<f64>, b: &Tensor<f64>| {
        dot(fully_connected_forward(x, w, Some(b)).unwrap().data(), g.data())
    };
    let ex = sweep(x.data(), grads.input.data(), |v| obj(&t(x.shape(), v), &w, &b));
    let ew = sweep(w.data(), grads.weights.data(), |v| obj(&x, &t(w.shape(), v), &b));
    let eb = sweep(b.data(), grads.bias.data(), |v| obj(&x, &w, &t(b.shape(), v)));
    ex.max(ew).max(eb)
}

pub fn loss(cfg: &LossConfig, seed: u64) -> f64 {
    let mut r = rng(seed);
    let logits = random_tensor(&mut r, &[6, 4]).scale(2.0);
    let labels: Vec<usize> = (0..6).map(|_| r.gen_range(0..4)).collect();
    let out = loss_multiclass(&logits, &labels, cfg).unwrap();
    sweep(logits.data(), out.grad.data(), |v| {
        loss_multiclass(&t(&[6, 4], v), &labels, cfg).unwrap().loss
    })
}

/// Focal loss with γ = 2 through the full network in training mode. At
/// least `min_params` scalars are probed, covering every trainable tensor.
pub fn end_to_end(patch: usize, bands: usize, classes: usize, min_params: usize, seed: u64) -> (f64, usize) {
    let graph = build_network(&NetworkConfig::new(patch, bands, classes)).unwrap();
    let mut params = init_parameters::<f64>(&graph, seed);
    let mut r = rng(seed + 1);
    // Non-trivial BN scale/shift so their gradients are exercised too.
    for (k, v) in params.tensors.iter_mut() {
        if k.ends_with(".gamma") || k.ends_with(".beta") || k.ends_with(".bias") {
            for e in v.data_mut() {
                *e += r.gen_range(-0.3..0.3);
            }
        }
    }
    let x = random_tensor(&mut r, &[3, 1, patch, patch, bands]);
    let labels: Vec<usize> = (0..3).map(|i| i % classes).collect();
    let cfg = LossConfig::focal(vec![0.6], 2.0);

    let objective = |p: &ldwnet_core::ParameterStore<f64>| {
        let mut p = p.clone();
        let pass = forward(&graph, &mut p, &x, Mode::Train).unwrap();
        loss_multiclass(pass.logits(), &labels, &cfg).unwrap()
    };
    let mut p0 = params.clone();
    let pass = forward(&graph, &mut p0, &x, Mode::Train).unwrap();
    let out = loss_multiclass(pass.logits(), &labels, &cfg).unwrap();
    let grads = backward(&graph, &params, &pass, &out.grad).unwrap().params;

    let keys: Vec<String> = params.tensors.keys().filter(|k| is_trainable(k)).cloned().collect();
    let mut probes: Vec<(String, usize)> = keys.iter().map(|k| (k.clone(), 0)).collect();
    let mut all: Vec<(String, usize)> = keys
        .iter()
        .flat_map(|k| (1..params.tensors[k].numel()).map(move |i| (k.clone(), i)))
        .collect();
    all.shuffle(&mut r);
    let extra = min_params.saturating_sub(probes.len());
    probes.extend(all.into_iter().take(extra));

    let mut worst: f64 = 0.0;
    for (k, i) in &probes {
        let orig = params.tensors[k].data()[*i];
        params.tensors.get_mut(k).unwrap().data_mut()[*i] = orig + STEP;
        let up = objective(&params).loss;
        params.tensors.get_mut(k).unwrap().data_mut()[*i] = orig - STEP;
        let down = objective(&params).loss;
        params.tensors.get_mut(k).unwrap().data_mut()[*i] = orig;
        let num = (up - down) / (2.0 * STEP);
        worst = worst.max(rel_err(num, grads[k].data()[*i]));
    }
    (worst, probes.len())
}
