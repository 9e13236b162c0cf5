use rand::Rng;

use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Activation {
    Relu,
    Tanh,
    Identity,
}

impl Activation {
    pub fn name(self) -> &'static str {
        match self {
            Activation::Relu => "relu",
            Activation::Tanh => "tanh",
            Activation::Identity => "identity",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "relu" => Some(Activation::Relu),
            "tanh" => Some(Activation::Tanh),
            "identity" => Some(Activation::Identity),
            _ => None,
        }
    }

    #[inline]
    fn apply<T: Scalar>(self, z: T) -> T {
        match self {
            Activation::Relu => z.max(T::zero()),
            Activation::Tanh => z.tanh(),
            Activation::Identity => z,
        }
    }

    /// Derivative expressed through the activation output `y`.
    #[inline]
    fn slope<T: Scalar>(self, y: T) -> T {
        match self {
            Activation::Relu => {
                if y > T::zero() {
                    T::one()
                } else {
                    T::zero()
                }
            }
            Activation::Tanh => T::one() - y * y,
            Activation::Identity => T::one(),
        }
    }
}

/// Dense feed-forward network with all weights in one flat vector.
///
/// Layer `l` stores its `out × in` weight matrix row-major, then its bias.
/// The version counter changes on every mutation so caches taken before an
/// update are detected. Equality ignores it.
#[derive(Debug, Clone)]
pub struct MlpParams<T> {
    sizes: Vec<usize>,
    acts: Vec<Activation>,
    params: Vec<T>,
    offsets: Vec<usize>,
    version: u64,
}

impl<T: PartialEq> PartialEq for MlpParams<T> {
    fn eq(&self, other: &Self) -> bool {
        self.sizes == other.sizes && self.acts == other.acts && self.params == other.params
    }
}

/// Activations of a batched forward pass, input first.
#[derive(Debug, Clone, PartialEq)]
pub struct Cache<T> {
    pub batch: usize,
    pub layers: Vec<Vec<T>>,
    version: u64,
}

impl<T> Cache<T> {
    /// Network output, `batch × out` row-major.
    pub fn output(&self) -> &[T] {
        self.layers.last().map_or(&[], Vec::as_slice)
    }
}

/// Dot product with four independent accumulators so the loop vectorizes.
#[inline]
fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    let mut acc = [T::zero(); 4];
    let ca = a.chunks_exact(4);
    let cb = b.chunks_exact(4);
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        acc[0] += x[0] * y[0];
        acc[1] += x[1] * y[1];
        acc[2] += x[2] * y[2];
        acc[3] += x[3] * y[3];
    }
    let tail = ra.iter().zip(rb).fold(T::zero(), |s, (&x, &y)| s + x * y);
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

fn layer_offsets(sizes: &[usize]) -> Vec<usize> {
    let mut off = vec![0];
    for w in sizes.windows(2) {
        let last = *off.last().unwrap();
        off.push(last + w[0] * w[1] + w[1]);
    }
    off
}

impl<T: Scalar> MlpParams<T> {
    pub fn zeros(sizes: &[usize], acts: &[Activation]) -> Result<Self> {
        if sizes.len() < 2 || acts.len() != sizes.len() - 1 || sizes.contains(&0) {
            return Err(Error::Shape(format!(
                "{} layer sizes with {} activations",
                sizes.len(),
                acts.len()
            )));
        }
        let offsets = layer_offsets(sizes);
        Ok(Self {
            sizes: sizes.to_vec(),
            acts: acts.to_vec(),
            params: vec![T::zero(); *offsets.last().unwrap()],
            offsets,
            version: 0,
        })
    }

    /// Uniform fan-in initialization (bound `sqrt(6/fan_in)` before rectifiers,
    /// `sqrt(1/fan_in)` otherwise), zero biases; the last layer's weights are
    /// further scaled by `last_scale`.
    pub fn init<R: Rng + ?Sized>(
        sizes: &[usize],
        acts: &[Activation],
        last_scale: f64,
        rng: &mut R,
    ) -> Result<Self> {
        let mut net = Self::zeros(sizes, acts)?;
        let layers = net.layer_count();
        for l in 0..layers {
            let fan_in = sizes[l] as f64;
            let mut bound = match acts[l] {
                Activation::Relu => (6.0 / fan_in).sqrt(),
                _ => (1.0 / fan_in).sqrt(),
            };
            if l + 1 == layers {
                bound *= last_scale;
            }
            let start = net.offsets[l];
            let n_w = sizes[l] * sizes[l + 1];
            for w in &mut net.params[start..start + n_w] {
                *w = T::lit(rng.random_range(-1.0..=1.0) * bound);
            }
        }
        Ok(net)
    }

    pub fn from_flat(sizes: &[usize], acts: &[Activation], params: Vec<T>) -> Result<Self> {
        let mut net = Self::zeros(sizes, acts)?;
        if params.len() != net.params.len() {
            return Err(Error::Shape(format!(
                "{} parameters for an architecture needing {}",
                params.len(),
                net.params.len()
            )));
        }
        if params.iter().any(|p| !p.is_finite()) {
            return Err(Error::Numerical("non-finite parameter".into()));
        }
        net.params = params;
        Ok(net)
    }

    #[inline]
    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    #[inline]
    pub fn activations(&self) -> &[Activation] {
        &self.acts
    }

    #[inline]
    pub fn layer_count(&self) -> usize {
        self.acts.len()
    }

    #[inline]
    pub fn input_dim(&self) -> usize {
        self.sizes[0]
    }

    #[inline]
    pub fn output_dim(&self) -> usize {
        *self.sizes.last().unwrap()
    }

    #[inline]
    pub fn param_count(&self) -> usize {
        self.params.len()
    }

    #[inline]
    pub fn params(&self) -> &[T] {
        &self.params
    }

    #[inline]
    pub fn version(&self) -> u64 {
        self.version
    }

    /// Mutable access to the flat parameters; bumps the version.
    pub fn params_mut(&mut self) -> &mut [T] {
        self.version += 1;
        &mut self.params
    }

    /// `(weights, bias)` of layer `l`.
    pub fn layer(&self, l: usize) -> (&[T], &[T]) {
        let (i, o) = (self.sizes[l], self.sizes[l + 1]);
        let s = self.offsets[l];
        (&self.params[s..s + i * o], &self.params[s + i * o..s + i * o + o])
    }

    /// Batched forward pass over `batch` rows of `input` (row-major).
    pub fn forward_batch(&self, input: &[T], batch: usize) -> Result<Cache<T>> {
        if input.len() != batch * self.input_dim() {
            return Err(Error::Shape(format!(
                "input of length {} for batch {batch} × {}",
                input.len(),
                self.input_dim()
            )));
        }
        let mut layers = Vec::with_capacity(self.layer_count() + 1);
        layers.push(input.to_vec());
        for l in 0..self.layer_count() {
            let out = self.layer_forward(l, &layers[l], batch);
            layers.push(out);
        }
        Ok(Cache {
            batch,
            layers,
            version: self.version,
        })
    }

    fn layer_forward(&self, l: usize, x: &[T], batch: usize) -> Vec<T> {
        let (i, o) = (self.sizes[l], self.sizes[l + 1]);
        let (w, b) = self.layer(l);
        let act = self.acts[l];
        let mut out = Vec::with_capacity(batch * o);
        for r in 0..batch {
            let xr = &x[r * i..(r + 1) * i];
            for k in 0..o {
                let wk = &w[k * i..(k + 1) * i];
                let z = b[k] + dot(wk, xr);
                out.push(act.apply(z));
            }
        }
        out
    }

    /// Single-input forward pass.
    pub fn forward(&self, input: &[T]) -> Result<(Vec<T>, Cache<T>)> {
        let cache = self.forward_batch(input, 1)?;
        Ok((cache.output().to_vec(), cache))
    }

    /// Inference without a cache, reusing two scratch buffers.
    pub fn predict_into(&self, input: &[T], out: &mut Vec<T>, scratch: &mut Vec<T>) -> Result<()> {
        if input.len() != self.input_dim() {
            return Err(Error::Shape(format!("input of length {} for {}", input.len(), self.input_dim())));
        }
        out.clear();
        out.extend_from_slice(input);
        for l in 0..self.layer_count() {
            std::mem::swap(out, scratch);
            let (i, o) = (self.sizes[l], self.sizes[l + 1]);
            let (w, b) = self.layer(l);
            let act = self.acts[l];
            out.clear();
            for k in 0..o {
                let wk = &w[k * i..(k + 1) * i];
                let z = b[k] + dot(wk, scratch);
                out.push(act.apply(z));
            }
        }
        Ok(())
    }

    /// Reverse pass. Adds parameter gradients into `grads` and returns the
    /// gradient with respect to the input (`batch × in`).
    pub fn backward_into(&self, cache: &Cache<T>, out_grad: &[T], grads: &mut [T]) -> Result<Vec<T>> {
        if cache.version != self.version {
            return Err(Error::Contract(format!(
                "cache from parameter version {} used with version {}",
                cache.version, self.version
            )));
        }
        if cache.layers.len() != self.layer_count() + 1 || cache.layers[0].len() != cache.batch * self.input_dim() {
            return Err(Error::Contract("cache does not match this network".into()));
        }
        let batch = cache.batch;
        if out_grad.len() != batch * self.output_dim() {
            return Err(Error::Shape(format!(
                "output gradient of length {} for batch {batch} × {}",
                out_grad.len(),
                self.output_dim()
            )));
        }
        if grads.len() != self.param_count() {
            return Err(Error::Shape("gradient buffer does not match parameter count".into()));
        }
        let mut delta: Vec<T> = out_grad.to_vec();
        for l in (0..self.layer_count()).rev() {
            let (i, o) = (self.sizes[l], self.sizes[l + 1]);
            let y = &cache.layers[l + 1];
            let x = &cache.layers[l];
            let act = self.acts[l];
            for (d, &yv) in delta.iter_mut().zip(y) {
                *d *= act.slope(yv);
            }
            let s = self.offsets[l];
            let (gw, gb) = grads[s..s + i * o + o].split_at_mut(i * o);
            let w = &self.params[s..s + i * o];
            let mut dx = vec![T::zero(); batch * i];
            for r in 0..batch {
                let xr = &x[r * i..(r + 1) * i];
                let dxr = &mut dx[r * i..(r + 1) * i];
                for k in 0..o {
                    let d = delta[r * o + k];
                    if d == T::zero() {
                        continue;
                    }
                    gb[k] += d;
                    let gwk = &mut gw[k * i..(k + 1) * i];
                    let wk = &w[k * i..(k + 1) * i];
                    for j in 0..i {
                        gwk[j] += d * xr[j];
                        dxr[j] += d * wk[j];
                    }
                }
            }
            delta = dx;
        }
        Ok(delta)
    }

    /// Input gradient only; parameter gradients are not formed.
    pub fn input_grad(&self, cache: &Cache<T>, out_grad: &[T]) -> Result<Vec<T>> {
        if cache.version != self.version {
            return Err(Error::Contract(format!(
                "cache from parameter version {} used with version {}",
                cache.version, self.version
            )));
        }
        let batch = cache.batch;
        if out_grad.len() != batch * self.output_dim() || cache.layers.len() != self.layer_count() + 1 {
            return Err(Error::Shape("output gradient does not match cache".into()));
        }
        let mut delta: Vec<T> = out_grad.to_vec();
        for l in (0..self.layer_count()).rev() {
            let (i, o) = (self.sizes[l], self.sizes[l + 1]);
            let act = self.acts[l];
            for (d, &yv) in delta.iter_mut().zip(&cache.layers[l + 1]) {
                *d *= act.slope(yv);
            }
            let (w, _) = self.layer(l);
            let mut dx = vec![T::zero(); batch * i];
            for r in 0..batch {
                let dxr = &mut dx[r * i..(r + 1) * i];
                for k in 0..o {
                    let d = delta[r * o + k];
                    if d == T::zero() {
                        continue;
                    }
                    for (x, &wv) in dxr.iter_mut().zip(&w[k * i..(k + 1) * i]) {
                        *x += d * wv;
                    }
                }
            }
            delta = dx;
        }
        Ok(delta)
    }

    /// Parameter and input gradients of `out_grad · output` for one cached pass.
    pub fn backward(&self, cache: &Cache<T>, out_grad: &[T]) -> Result<(Vec<T>, Vec<T>)> {
        let mut g = vec![T::zero(); self.param_count()];
        let dx = self.backward_into(cache, out_grad, &mut g)?;
        Ok((g, dx))
    }

    /// Polyak averaging: `self ← tau·online + (1 − tau)·self`.
    pub fn soft_update_from(&mut self, online: &Self, tau: T) -> Result<()> {
        if online.sizes != self.sizes {
            return Err(Error::Shape("soft update between different architectures".into()));
        }
        let keep = T::one() - tau;
        for (t, &o) in self.params_mut().iter_mut().zip(&online.params) {
            *t = tau * o + keep * *t;
        }
        Ok(())
    }

    pub fn copy_from(&mut self, other: &Self) -> Result<()> {
        self.soft_update_from(other, T::one())
    }
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    /// Plain nested-loop reference, written without the flat layout helpers.
    fn oracle_forward(net: &MlpParams<f64>, x: &[f64]) -> Vec<f64> {
        let mut h = x.to_vec();
        let mut off = 0;
        for (l, act) in net.activations().iter().enumerate() {
            let (i, o) = (net.sizes()[l], net.sizes()[l + 1]);
            let p = net.params();
            let mut next = vec![0.0; o];
            for k in 0..o {
                let mut z = p[off + i * o + k];
                for j in 0..i {
                    z += p[off + k * i + j] * h[j];
                }
                next[k] = match act {
                    Activation::Relu => z.max(0.0),
                    Activation::Tanh => z.tanh(),
                    Activation::Identity => z,
                };
            }
            off += i * o + o;
            h = next;
        }
        h
    }

    pub(crate) fn random_net(seed: u64, sizes: &[usize], acts: &[Activation]) -> MlpParams<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut net = MlpParams::init(sizes, acts, 1.0, &mut rng).unwrap();
        for p in net.params_mut() {
            *p += rng.random_range(-0.1..0.1);
        }
        net
    }

    /// Max relative error between analytic and central-difference gradients of `sum(c ⊙ out)`.
    pub(crate) fn fd_check(net: &MlpParams<f64>, x: &[f64], batch: usize, c: &[f64]) -> f64 {
        let cache = net.forward_batch(x, batch).unwrap();
        let (g, dx) = net.backward(&cache, c).unwrap();
        let f = |n: &MlpParams<f64>, x: &[f64]| -> f64 {
            let out = n.forward_batch(x, batch).unwrap();
            out.output().iter().zip(c).map(|(a, b)| a * b).sum()
        };
        let h = 1e-5;
        let mut worst: f64 = 0.0;
        let mut rel = |a: f64, n: f64| {
            let e = (a - n).abs() / (a.abs().max(n.abs()).max(1e-3));
            worst = worst.max(e);
        };
        for i in 0..net.param_count() {
            let mut p = net.clone();
            p.params_mut()[i] += h;
            let mut m = net.clone();
            m.params_mut()[i] -= h;
            rel(g[i], (f(&p, x) - f(&m, x)) / (2.0 * h));
        }
        for j in 0..x.len() {
            let mut xp = x.to_vec();
            xp[j] += h;
            let mut xm = x.to_vec();
            xm[j] -= h;
            rel(dx[j], (f(net, &xp) - f(net, &xm)) / (2.0 * h));
        }
        worst
    }

    #[test]
    fn zero_weights_output_bias() {
        let mut net = MlpParams::<f64>::zeros(&[3, 2], &[Activation::Identity]).unwrap();
        net.params_mut()[6] = 0.5;
        net.params_mut()[7] = -1.5;
        let (y, _) = net.forward(&[1.0, 2.0, 3.0]).unwrap();
        assert_eq!(y, vec![0.5, -1.5]);
    }

    #[test]
    fn identity_layer_passes_input() {
        let mut net = MlpParams::<f64>::zeros(&[3, 3], &[Activation::Identity]).unwrap();
        for k in 0..3 {
            net.params_mut()[k * 3 + k] = 1.0;
        }
        let (y, _) = net.forward(&[0.3, -2.0, 7.0]).unwrap();
        assert_eq!(y, vec![0.3, -2.0, 7.0]);
    }

    #[test]
    fn matches_reference_forward() {
        let net = random_net(5, &[4, 8, 2], &[Activation::Relu, Activation::Tanh]);
        let x = [0.2, -0.7, 1.3, 0.05];
        let (y, _) = net.forward(&x).unwrap();
        let want = oracle_forward(&net, &x);
        for (a, b) in y.iter().zip(&want) {
            assert!((a - b).abs() < 1e-12);
        }
        let (mut out, mut scratch) = (Vec::new(), Vec::new());
        net.predict_into(&x, &mut out, &mut scratch).unwrap();
        assert_eq!(out, y);
    }

    #[test]
    fn quadratic_hand_derivative() {
        // f(x) = (w x)^2 with w = 2, x = 3
        let net = MlpParams::<f64>::from_flat(&[1, 1], &[Activation::Identity], vec![2.0, 0.0]).unwrap();
        let (y, cache) = net.forward(&[3.0]).unwrap();
        let (g, _) = net.backward(&cache, &[2.0 * y[0]]).unwrap();
        assert_eq!(g[0], 36.0);
    }

    #[test]
    fn zero_output_grad_gives_zero_gradients() {
        let net = random_net(1, &[3, 5, 2], &[Activation::Relu, Activation::Identity]);
        let (_, cache) = net.forward(&[1.0, 2.0, 3.0]).unwrap();
        let (g, dx) = net.backward(&cache, &[0.0, 0.0]).unwrap();
        assert!(g.iter().chain(&dx).all(|&v| v == 0.0));
        let (_, cache) = net.forward(&[1.0, 2.0, 3.0]).unwrap();
        let (_, dx) = net.backward(&cache, &[0.4, -1.0]).unwrap();
        assert_eq!(net.input_grad(&cache, &[0.4, -1.0]).unwrap(), dx);
    }

    #[test]
    fn stale_cache_is_rejected() {
        let mut net = random_net(1, &[2, 2], &[Activation::Tanh]);
        let (_, cache) = net.forward(&[1.0, 2.0]).unwrap();
        net.params_mut()[0] += 1.0;
        assert!(matches!(net.backward(&cache, &[1.0, 1.0]), Err(Error::Contract(_))));
        assert!(net.forward(&[1.0]).is_err());
    }

    #[test]
    fn soft_update_rules() {
        let online = MlpParams::<f64>::from_flat(&[1, 1], &[Activation::Identity], vec![1.0, 1.0]).unwrap();
        let mut target = MlpParams::<f64>::zeros(&[1, 1], &[Activation::Identity]).unwrap();
        target.soft_update_from(&online, 0.0).unwrap();
        assert_eq!(target.params(), &[0.0, 0.0]);
        target.soft_update_from(&online, 0.01).unwrap();
        assert_eq!(target.params(), &[0.01, 0.01]);
        target.soft_update_from(&online, 1.0).unwrap();
        assert_eq!(target.params(), online.params());
    }

    #[test]
    fn f32_forward_agrees_with_f64() {
        let net = random_net(9, &[3, 4, 1], &[Activation::Relu, Activation::Identity]);
        let n32 = MlpParams::<f32>::from_flat(
            net.sizes(),
            net.activations(),
            net.params().iter().map(|&p| p as f32).collect(),
        )
        .unwrap();
        let (a, _) = net.forward(&[0.1, 0.2, 0.3]).unwrap();
        let (b, _) = n32.forward(&[0.1, 0.2, 0.3]).unwrap();
        assert!((a[0] - b[0] as f64).abs() < 1e-5);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn gradients_match_finite_differences(seed in any::<u64>(), batch in 1usize..4) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let net = random_net(seed, &[4, 6, 5, 3], &[Activation::Relu, Activation::Tanh, Activation::Identity]);
            let x: Vec<f64> = (0..4 * batch).map(|_| rng.random_range(-1.0..1.0)).collect();
            let c: Vec<f64> = (0..3 * batch).map(|_| rng.random_range(-1.0..1.0)).collect();
            prop_assert!(fd_check(&net, &x, batch, &c) < 1e-4);
        }
    }
}
