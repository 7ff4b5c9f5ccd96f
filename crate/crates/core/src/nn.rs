//! Dense ReLU networks in `f64`: forward pass, exact backprop, softmax
//! cross-entropy, and SGD with global gradient-norm clipping.

use crate::error::{Error, Result};
use crate::rng::rng_from_seed;
use ndarray::{Array1, Array2, ArrayView2, Axis, Zip};
use rand::Rng;

const CHECKPOINT_MAGIC: &[u8; 4] = b"WSNN";
const CHECKPOINT_VERSION: u32 = 1;

/// One affine layer; `weights` is `inputs × outputs` so a batch maps as `X·W + b`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub weights: Array2<f64>,
    pub bias: Array1<f64>,
}

impl Dense {
    fn zeros(inputs: usize, outputs: usize) -> Self {
        Self {
            weights: Array2::zeros((inputs, outputs)),
            bias: Array1::zeros(outputs),
        }
    }
}

/// Gradients with the same shapes as a [`DenseNet`]'s parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientSet {
    pub layers: Vec<Dense>,
}

impl GradientSet {
    pub fn zeros_like(net: &DenseNet) -> Self {
        Self {
            layers: net
                .layers
                .iter()
                .map(|l| Dense::zeros(l.weights.nrows(), l.weights.ncols()))
                .collect(),
        }
    }

    /// L2 norm over every gradient entry.
    pub fn global_norm(&self) -> f64 {
        self.layers
            .iter()
            .map(|l| l.weights.iter().chain(l.bias.iter()).map(|g| g * g).sum::<f64>())
            .sum::<f64>()
            .sqrt()
    }

    pub fn scale(&mut self, s: f64) {
        for l in &mut self.layers {
            l.weights.mapv_inplace(|g| g * s);
            l.bias.mapv_inplace(|g| g * s);
        }
    }

    pub fn is_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.weights.iter().chain(l.bias.iter()).all(|g| g.is_finite()))
    }

    /// Rescales so the global norm is at most `clip_norm`; returns the norm before clipping.
    pub fn clip(&mut self, clip_norm: f64) -> Result<f64> {
        let norm = self.global_norm();
        if !norm.is_finite() {
            return Err(Error::NonFinite(format!("gradient norm is {norm}")));
        }
        if norm > clip_norm {
            self.scale(clip_norm / norm);
        }
        Ok(norm)
    }
}

/// Fully connected network: ReLU between layers, raw logits at the output.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseNet {
    layers: Vec<Dense>,
}

/// Activations of every layer from one forward pass; `acts[0]` is the input.
pub struct Trace {
    acts: Vec<Array2<f64>>,
}

impl Trace {
    pub fn output(&self) -> &Array2<f64> {
        self.acts.last().unwrap()
    }

    pub fn into_output(mut self) -> Array2<f64> {
        self.acts.pop().unwrap()
    }
}

impl DenseNet {
    /// Glorot-uniform weights, zero biases.
    pub fn new(sizes: &[usize], seed: u64) -> Result<Self> {
        let mut net = Self::zeros(sizes)?;
        let mut rng = rng_from_seed(seed);
        for l in &mut net.layers {
            let (fan_in, fan_out) = l.weights.dim();
            let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
            l.weights.mapv_inplace(|_| rng.random_range(-limit..limit));
        }
        Ok(net)
    }

    pub fn zeros(sizes: &[usize]) -> Result<Self> {
        if sizes.len() < 2 || sizes.contains(&0) {
            return Err(Error::Shape(format!(
                "need at least two non-zero layer sizes, got {sizes:?}"
            )));
        }
        Ok(Self {
            layers: sizes.windows(2).map(|w| Dense::zeros(w[0], w[1])).collect(),
        })
    }

    pub fn from_layers(layers: Vec<Dense>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::Shape("network has no layers".into()));
        }
        for (i, l) in layers.iter().enumerate() {
            if l.bias.len() != l.weights.ncols() {
                return Err(Error::Shape(format!("layer {i}: bias does not match weight columns")));
            }
            if i > 0 && layers[i - 1].weights.ncols() != l.weights.nrows() {
                return Err(Error::Shape(format!(
                    "layer {i}: input width does not match previous output"
                )));
            }
        }
        Ok(Self { layers })
    }

    pub fn sizes(&self) -> Vec<usize> {
        let mut s = vec![self.layers[0].weights.nrows()];
        s.extend(self.layers.iter().map(|l| l.weights.ncols()));
        s
    }

    pub fn input_width(&self) -> usize {
        self.layers[0].weights.nrows()
    }

    pub fn output_width(&self) -> usize {
        self.layers.last().unwrap().weights.ncols()
    }

    pub fn layers(&self) -> &[Dense] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Dense] {
        &mut self.layers
    }

    pub fn is_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.weights.iter().chain(l.bias.iter()).all(|v| v.is_finite()))
    }

    pub fn forward(&self, x: ArrayView2<f64>) -> Result<Array2<f64>> {
        Ok(self.forward_trace(x)?.into_output())
    }

    pub fn forward_trace(&self, x: ArrayView2<f64>) -> Result<Trace> {
        if x.ncols() != self.input_width() {
            return Err(Error::Shape(format!(
                "feature width {} does not match input layer {}",
                x.ncols(),
                self.input_width()
            )));
        }
        let mut acts = Vec::with_capacity(self.layers.len() + 1);
        acts.push(x.to_owned());
        let last = self.layers.len() - 1;
        for (i, l) in self.layers.iter().enumerate() {
            let mut z = acts[i].dot(&l.weights);
            z += &l.bias;
            if i < last {
                z.mapv_inplace(|v| v.max(0.0));
            }
            acts.push(z);
        }
        Ok(Trace { acts })
    }

    /// Backpropagates `d_out` (gradient of the loss w.r.t. the logits).
    pub fn backward(&self, trace: &Trace, d_out: Array2<f64>) -> GradientSet {
        let mut grads = Vec::with_capacity(self.layers.len());
        let mut delta = d_out;
        for (i, l) in self.layers.iter().enumerate().rev() {
            let input = &trace.acts[i];
            let dw = input.t().dot(&delta);
            let db = delta.sum_axis(Axis(0));
            if i > 0 {
                let mut prev = delta.dot(&l.weights.t());
                Zip::from(&mut prev).and(input).for_each(|d, &a| {
                    if a <= 0.0 {
                        *d = 0.0;
                    }
                });
                delta = prev;
            }
            grads.push(Dense { weights: dw, bias: db });
        }
        grads.reverse();
        GradientSet { layers: grads }
    }

    /// Mean softmax cross-entropy over samples whose target is not `ignore_label`,
    /// with its exact gradient.
    pub fn loss_and_grad(&self, x: ArrayView2<f64>, targets: &[u16], ignore_label: u16) -> Result<(f64, GradientSet)> {
        if targets.len() != x.nrows() {
            return Err(Error::Shape(format!(
                "{} targets for {} samples",
                targets.len(),
                x.nrows()
            )));
        }
        let trace = self.forward_trace(x)?;
        let (loss, d_out) = softmax_cross_entropy(trace.output(), targets, ignore_label)?;
        Ok((loss, self.backward(&trace, d_out)))
    }

    /// Clips `grads` to `clip_norm` and applies `params -= lr * grads`.
    ///
    /// Returns the global gradient norm before clipping. Non-finite gradients
    /// are rejected and leave the network untouched.
    pub fn clip_and_step(&mut self, grads: &GradientSet, lr: f64, clip_norm: f64) -> Result<f64> {
        let mut g = grads.clone();
        let norm = g.clip(clip_norm)?;
        self.apply_update(&g, lr)?;
        Ok(norm)
    }

    fn apply_update(&mut self, update: &GradientSet, lr: f64) -> Result<()> {
        if update.layers.len() != self.layers.len() {
            return Err(Error::Shape("gradient set does not match network".into()));
        }
        for (l, g) in self.layers.iter_mut().zip(&update.layers) {
            if l.weights.dim() != g.weights.dim() || l.bias.len() != g.bias.len() {
                return Err(Error::Shape("gradient set does not match network".into()));
            }
        }
        for (l, g) in self.layers.iter_mut().zip(&update.layers) {
            l.weights.scaled_add(-lr, &g.weights);
            l.bias.scaled_add(-lr, &g.bias);
        }
        Ok(())
    }

    /// Makes `self` a bit-exact copy of `src`'s parameters.
    pub fn copy_params_from(&mut self, src: &DenseNet) -> Result<()> {
        if self.sizes() != src.sizes() {
            return Err(Error::Shape(format!(
                "cannot copy {:?} into {:?}",
                src.sizes(),
                self.sizes()
            )));
        }
        self.layers.clone_from(&src.layers);
        Ok(())
    }

    /// Header (magic, version, layer count, sizes as `u32`) followed by each
    /// layer's weights (row-major) and bias as little-endian `f64`.
    pub fn to_checkpoint(&self) -> Vec<u8> {
        let sizes = self.sizes();
        let mut out = Vec::new();
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        out.extend_from_slice(&(sizes.len() as u32).to_le_bytes());
        for s in &sizes {
            out.extend_from_slice(&(*s as u32).to_le_bytes());
        }
        for l in &self.layers {
            for v in l.weights.iter().chain(l.bias.iter()) {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_checkpoint(bytes: &[u8]) -> Result<Self> {
        let bad = |m: &str| Error::Checkpoint(m.to_string());
        let mut pos = 0usize;
        let mut take = |n: usize| -> Result<&[u8]> {
            let s = bytes.get(pos..pos + n).ok_or_else(|| bad("truncated"))?;
            pos += n;
            Ok(s)
        };
        if take(4)? != CHECKPOINT_MAGIC {
            return Err(bad("bad magic"));
        }
        let u32_at = |b: &[u8]| u32::from_le_bytes(b.try_into().unwrap());
        let version = u32_at(take(4)?);
        if version != CHECKPOINT_VERSION {
            return Err(Error::Checkpoint(format!("unsupported version {version}")));
        }
        let count = u32_at(take(4)?) as usize;
        if !(2..=64).contains(&count) {
            return Err(bad("implausible layer count"));
        }
        let mut sizes = Vec::with_capacity(count);
        for _ in 0..count {
            sizes.push(u32_at(take(4)?) as usize);
        }
        let mut net = Self::zeros(&sizes)?;
        for l in &mut net.layers {
            for v in l.weights.iter_mut().chain(l.bias.iter_mut()) {
                *v = f64::from_le_bytes(take(8)?.try_into().unwrap());
            }
        }
        if pos != bytes.len() {
            return Err(bad("trailing bytes"));
        }
        Ok(net)
    }
}

/// Log-sum-exp stabilized cross-entropy. Returns the mean loss over
/// non-ignored rows and `d loss / d logits`.
pub fn softmax_cross_entropy(logits: &Array2<f64>, targets: &[u16], ignore_label: u16) -> Result<(f64, Array2<f64>)> {
    let counted = targets.iter().filter(|&&t| t != ignore_label).count();
    if counted == 0 {
        return Err(Error::AllIgnored);
    }
    let classes = logits.ncols();
    let mut grad = Array2::zeros(logits.raw_dim());
    let mut total = 0.0;
    let inv = 1.0 / counted as f64;
    for (i, (row, &t)) in logits.outer_iter().zip(targets).enumerate() {
        if t == ignore_label {
            continue;
        }
        let t = usize::from(t);
        if t >= classes {
            return Err(Error::Shape(format!("target {t} at row {i} exceeds {classes} classes")));
        }
        let m = row.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        let sum: f64 = row.iter().map(|v| (v - m).exp()).sum();
        let lse = m + sum.ln();
        total += lse - row[t];
        for (k, v) in row.iter().enumerate() {
            grad[[i, k]] = (v - lse).exp() * inv;
        }
        grad[[i, t]] -= inv;
    }
    Ok((total * inv, grad))
}

/// Plain SGD with optional momentum on clipped gradients.
#[derive(Debug, Clone)]
pub struct Sgd {
    pub lr: f64,
    pub clip_norm: f64,
    pub momentum: f64,
    velocity: Option<GradientSet>,
}

impl Sgd {
    pub fn new(lr: f64, clip_norm: f64, momentum: f64) -> Self {
        assert!(lr > 0.0 && clip_norm > 0.0, "lr and clip_norm must be positive");
        Self {
            lr,
            clip_norm,
            momentum,
            velocity: None,
        }
    }

    pub fn step(&mut self, net: &mut DenseNet, grads: &GradientSet) -> Result<f64> {
        if self.momentum == 0.0 {
            return net.clip_and_step(grads, self.lr, self.clip_norm);
        }
        let mut g = grads.clone();
        let norm = g.clip(self.clip_norm)?;
        let v = match self.velocity.take() {
            Some(mut v) => {
                for (vl, gl) in v.layers.iter_mut().zip(&g.layers) {
                    vl.weights.mapv_inplace(|x| x * self.momentum);
                    vl.weights += &gl.weights;
                    vl.bias.mapv_inplace(|x| x * self.momentum);
                    vl.bias += &gl.bias;
                }
                v
            }
            None => g,
        };
        net.apply_update(&v, self.lr)?;
        self.velocity = Some(v);
        Ok(norm)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand::Rng;

    #[test]
    fn identity_layer() {
        let net = DenseNet::from_layers(vec![Dense {
            weights: Array2::eye(3),
            bias: Array1::zeros(3),
        }])
        .unwrap();
        let x = array![[1.0, -2.0, 3.5], [0.0, 4.0, -1.0]];
        assert_eq!(net.forward(x.view()).unwrap(), x);
    }

    #[test]
    fn zero_weights_give_bias() {
        let net = DenseNet::from_layers(vec![Dense {
            weights: Array2::zeros((2, 3)),
            bias: array![0.5, -1.0, 2.0],
        }])
        .unwrap();
        let out = net.forward(array![[7.0, -3.0]].view()).unwrap();
        assert_eq!(out, array![[0.5, -1.0, 2.0]]);
    }

    #[test]
    fn two_layer_by_hand() {
        // h = relu([1, 2]·[[1, -1], [0.5, 1]] + [0, 0.5]) = relu([2, 1.5]) = [2, 1.5]
        // y = [2, 1.5]·[[1], [-2]] + [0.25] = 2 - 3 + 0.25 = -0.75
        let net = DenseNet::from_layers(vec![
            Dense {
                weights: array![[1.0, -1.0], [0.5, 1.0]],
                bias: array![0.0, 0.5],
            },
            Dense {
                weights: array![[1.0], [-2.0]],
                bias: array![0.25],
            },
        ])
        .unwrap();
        assert_eq!(net.forward(array![[1.0, 2.0]].view()).unwrap(), array![[-0.75]]);
        // First hidden unit clipped: [-1, 1.5] -> relu -> [0, 1.5]; y = -3 + 0.25
        assert_eq!(net.forward(array![[-1.0, 0.0]].view()).unwrap(), array![[-2.75]]);
    }

    #[test]
    fn width_mismatch() {
        let net = DenseNet::new(&[3, 4, 2], 0).unwrap();
        assert!(matches!(
            net.forward(Array2::zeros((1, 2)).view()),
            Err(Error::Shape(_))
        ));
    }

    #[test]
    fn uniform_softmax_loss() {
        let (loss, grad) = softmax_cross_entropy(&array![[0.0, 0.0]], &[0], 255).unwrap();
        assert!((loss - 2f64.ln()).abs() < 1e-15);
        assert_eq!(grad, array![[-0.5, 0.5]]);
        let (loss, _) = softmax_cross_entropy(&array![[1000.0, 0.0]], &[0], 255).unwrap();
        assert!(loss.abs() < 1e-300);
    }

    #[test]
    fn ignored_samples() {
        let logits = array![[0.0, 0.0], [5.0, -3.0]];
        let (loss, grad) = softmax_cross_entropy(&logits, &[255, 1], 255).unwrap();
        assert!((loss - (8.0 + (1.0 + (-8f64).exp()).ln())).abs() < 1e-12);
        assert_eq!(grad.row(0).to_vec(), vec![0.0, 0.0]);
        assert!(matches!(
            softmax_cross_entropy(&logits, &[255, 255], 255),
            Err(Error::AllIgnored)
        ));
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut rng = crate::rng::rng_from_seed(99);
        let net = DenseNet::new(&[4, 6, 5, 3], 17).unwrap();
        let x = Array2::from_shape_fn((7, 4), |_| rng.random_range(-1.0..1.0));
        let t: Vec<u16> = (0..7).map(|i| (i % 3) as u16).collect();
        let (_, g) = net.loss_and_grad(x.view(), &t, 255).unwrap();
        let h = 1e-5;
        let loss_at = |n: &DenseNet| n.loss_and_grad(x.view(), &t, 255).unwrap().0;
        for li in 0..3 {
            for idx in 0..net.layers[li].weights.len() {
                let mut p = net.clone();
                let mut m = net.clone();
                p.layers[li].weights.as_slice_mut().unwrap()[idx] += h;
                m.layers[li].weights.as_slice_mut().unwrap()[idx] -= h;
                let fd = (loss_at(&p) - loss_at(&m)) / (2.0 * h);
                let an = g.layers[li].weights.as_slice().unwrap()[idx];
                assert!(
                    (fd - an).abs() <= 1e-4 * fd.abs().max(an.abs()).max(1e-6),
                    "{fd} vs {an}"
                );
            }
        }
    }

    #[test]
    fn scalar_clip() {
        let mut net = DenseNet::zeros(&[1, 1]).unwrap();
        let mut g = GradientSet::zeros_like(&net);
        g.layers[0].weights[[0, 0]] = 200.0;
        let norm = net.clip_and_step(&g, 0.1, 100.0).unwrap();
        assert_eq!(norm, 200.0);
        assert_eq!(net.layers()[0].weights[[0, 0]], -10.0);
        assert_eq!(net.layers()[0].bias[0], 0.0);
    }

    #[test]
    fn unclipped_step() {
        let mut net = DenseNet::zeros(&[1, 1]).unwrap();
        let mut g = GradientSet::zeros_like(&net);
        g.layers[0].weights[[0, 0]] = 3.0;
        g.layers[0].bias[0] = 4.0;
        assert_eq!(net.clip_and_step(&g, 0.5, 100.0).unwrap(), 5.0);
        assert_eq!(net.layers()[0].weights[[0, 0]], -1.5);
        assert_eq!(net.layers()[0].bias[0], -2.0);
    }

    #[test]
    fn non_finite_rejected() {
        let mut net = DenseNet::new(&[2, 2], 1).unwrap();
        let before = net.clone();
        let mut g = GradientSet::zeros_like(&net);
        g.layers[0].bias[1] = f64::NAN;
        assert!(matches!(net.clip_and_step(&g, 0.1, 100.0), Err(Error::NonFinite(_))));
        assert_eq!(net, before);
    }

    #[test]
    fn copy_params() {
        let src = DenseNet::new(&[3, 5, 2], 1).unwrap();
        let mut dst = DenseNet::new(&[3, 5, 2], 2).unwrap();
        dst.copy_params_from(&src).unwrap();
        let x = array![[0.3, -0.2, 0.9]];
        assert_eq!(src.forward(x.view()).unwrap(), dst.forward(x.view()).unwrap());
        dst.copy_params_from(&src).unwrap();
        assert_eq!(dst, src);

        let mut src2 = src.clone();
        src2.layers_mut()[0].bias[0] += 1.0;
        assert_eq!(dst, src);

        let mut wrong = DenseNet::new(&[3, 4, 2], 0).unwrap();
        assert!(matches!(wrong.copy_params_from(&src), Err(Error::Shape(_))));
    }

    #[test]
    fn checkpoint_round_trip() {
        let net = DenseNet::new(&[6, 8, 5], 4).unwrap();
        let bytes = net.to_checkpoint();
        assert_eq!(&bytes[..4], b"WSNN");
        assert_eq!(DenseNet::from_checkpoint(&bytes).unwrap(), net);
        assert!(DenseNet::from_checkpoint(&bytes[..bytes.len() - 1]).is_err());
        let mut bad = bytes.clone();
        bad[4] = 9;
        assert!(DenseNet::from_checkpoint(&bad).is_err());
    }

    #[test]
    fn momentum_zero_matches_plain_step() {
        let mut a = DenseNet::new(&[2, 3, 2], 8).unwrap();
        let mut b = a.clone();
        let x = array![[0.5, -1.0], [1.0, 2.0]];
        let mut opt = Sgd::new(0.05, 100.0, 0.0);
        for _ in 0..3 {
            let (_, g) = a.loss_and_grad(x.view(), &[0, 1], 255).unwrap();
            opt.step(&mut a, &g).unwrap();
            let (_, g) = b.loss_and_grad(x.view(), &[0, 1], 255).unwrap();
            b.clip_and_step(&g, 0.05, 100.0).unwrap();
        }
        assert_eq!(a, b);
    }
}
