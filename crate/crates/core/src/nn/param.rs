use rand::Rng;

use super::real::Real;

/// A named weight array with its accumulated gradient. Non-trainable
/// parameters (normalisation statistics) carry no gradient and are skipped
/// by the optimiser but still saved in checkpoints.
#[derive(Debug, Clone, PartialEq)]
pub struct Param<R> {
    pub shape: Vec<usize>,
    pub value: Vec<R>,
    pub grad: Vec<R>,
    pub trainable: bool,
}

impl<R: Real> Param<R> {
    pub fn new(shape: &[usize], value: Vec<R>) -> Self {
        assert_eq!(shape.iter().product::<usize>(), value.len());
        Self {
            shape: shape.to_vec(),
            grad: vec![R::ZERO; value.len()],
            value,
            trainable: true,
        }
    }

    pub fn filled(shape: &[usize], v: R) -> Self {
        Self::new(shape, vec![v; shape.iter().product()])
    }

    pub fn buffer(shape: &[usize], v: R) -> Self {
        Self {
            trainable: false,
            grad: Vec::new(),
            ..Self::filled(shape, v)
        }
    }

    /// Uniform on `[-bound, bound]`.
    pub fn uniform<G: Rng + ?Sized>(shape: &[usize], bound: f64, rng: &mut G) -> Self {
        let n = shape.iter().product();
        let value = (0..n).map(|_| R::from_f64(rng.random_range(-bound..=bound))).collect();
        Self::new(shape, value)
    }

    pub fn len(&self) -> usize {
        self.value.len()
    }

    pub fn is_empty(&self) -> bool {
        self.value.is_empty()
    }

    pub fn zero_grad(&mut self) {
        self.grad.iter_mut().for_each(|g| *g = R::ZERO);
    }
}

/// Anything owning parameters; visits them depth-first with dotted names.
pub trait Module<R: Real> {
    fn visit(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param<R>));

    fn zero_grad(&mut self) {
        self.visit("", &mut |_, p| p.zero_grad());
    }

    fn param_count(&mut self) -> usize {
        let mut n = 0;
        self.visit("", &mut |_, p| {
            if p.trainable {
                n += p.len()
            }
        });
        n
    }
}

/// SHA-256 over every parameter name and value, buffers included.
pub fn parameter_digest<R: Real>(module: &mut dyn Module<R>) -> String {
    use sha2::{Digest, Sha256};
    let mut hasher = Sha256::new();
    module.visit("", &mut |name, p| {
        hasher.update(name.as_bytes());
        for v in &p.value {
            hasher.update(v.to_f64().to_le_bytes());
        }
    });
    hasher.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

pub(crate) fn join(prefix: &str, name: &str) -> String {
    if prefix.is_empty() {
        name.to_string()
    } else {
        format!("{prefix}.{name}")
    }
}

/// Adam with bias correction.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub step: u64,
    /// First and second moments per trainable parameter, in visit order.
    pub moments: Vec<(Vec<f64>, Vec<f64>)>,
}

impl Adam {
    pub fn new(lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            moments: Vec::new(),
        }
    }

    pub fn step<R: Real, M: Module<R> + ?Sized>(&mut self, module: &mut M) {
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        let (b1, b2, lr, eps) = (self.beta1, self.beta2, self.lr, self.eps);
        let moments = &mut self.moments;
        let mut i = 0;
        module.visit("", &mut |_, p| {
            if !p.trainable {
                return;
            }
            if moments.len() <= i {
                moments.push((vec![0.0; p.len()], vec![0.0; p.len()]));
            }
            let (m, v) = &mut moments[i];
            for j in 0..p.len() {
                let g = p.grad[j].to_f64();
                m[j] = b1 * m[j] + (1.0 - b1) * g;
                v[j] = b2 * v[j] + (1.0 - b2) * g * g;
                let update = lr * (m[j] / c1) / ((v[j] / c2).sqrt() + eps);
                p.value[j] = R::from_f64(p.value[j].to_f64() - update);
            }
            i += 1;
        });
    }
}
