use super::{DecoderWeights, Gradients, Real};

/// First/second moment accumulators with bias-corrected updates.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState<T> {
    pub m: Gradients<T>,
    pub v: Gradients<T>,
    pub t: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl<T: Real> AdamState<T> {
    pub fn new(w: &DecoderWeights<T>) -> Self {
        Self {
            m: Gradients::zeros_like(w),
            v: Gradients::zeros_like(w),
            t: 0,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// One Adam update of `w` in place; increments `state.t`.
pub fn adam_step<T: Real>(w: &mut DecoderWeights<T>, state: &mut AdamState<T>, grads: &Gradients<T>, lr: f64) {
    state.t += 1;
    let t = state.t as i32;
    let bc1 = 1.0 - state.beta1.powi(t);
    let bc2 = 1.0 - state.beta2.powi(t);
    let (b1, b2) = (T::from_f64_lossy(state.beta1), T::from_f64_lossy(state.beta2));
    let (ob1, ob2) = (T::from_f64_lossy(1.0 - state.beta1), T::from_f64_lossy(1.0 - state.beta2));
    let step = T::from_f64_lossy(lr / bc1);
    let inv_bc2 = T::from_f64_lossy(1.0 / bc2);
    let eps = T::from_f64_lossy(state.eps);

    let update = |p: &mut [T], g: &[T], m: &mut [T], v: &mut [T]| {
        for i in 0..p.len() {
            m[i] = b1 * m[i] + ob1 * g[i];
            v[i] = b2 * v[i] + ob2 * g[i] * g[i];
            p[i] = p[i] - step * m[i] / ((v[i] * inv_bc2).sqrt() + eps);
        }
    };
    for (li, layer) in w.layers.iter_mut().enumerate() {
        let g = &grads.layers[li];
        let m = &mut state.m.layers[li];
        let v = &mut state.v.layers[li];
        update(&mut layer.weight, &g.weight, &mut m.weight, &mut v.weight);
        update(&mut layer.bias, &g.bias, &mut m.bias, &mut v.bias);
    }
}
