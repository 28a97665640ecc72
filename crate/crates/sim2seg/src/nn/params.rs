use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::graph::{Graph, Grads, Var};
use super::tensor::{Shape, Tensor};

#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    pub name: String,
    pub value: Tensor,
}

/// The named parameters of one network, in creation order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamSet {
    params: Vec<Param>,
}

impl ParamSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, name: impl Into<String>, value: Tensor) -> usize {
        let name = name.into();
        assert!(self.index_of(&name).is_none(), "duplicate parameter {name}");
        self.params.push(Param { name, value });
        self.params.len() - 1
    }

    /// Weights drawn from N(0, std).
    pub fn normal<R: Rng + ?Sized>(&mut self, name: impl Into<String>, shape: Shape, std: f32, rng: &mut R) -> usize {
        let dist = Normal::new(0.0f32, std).expect("valid std");
        let n = shape.iter().product();
        let data = (0..n).map(|_| dist.sample(rng)).collect();
        self.push(name, Tensor::from_vec(shape, data))
    }

    pub fn zeros(&mut self, name: impl Into<String>, shape: Shape) -> usize {
        self.push(name, Tensor::zeros(shape))
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Param> {
        self.params.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Param> {
        self.params.iter_mut()
    }

    pub fn get(&self, i: usize) -> &Param {
        &self.params[i]
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.params.iter().position(|p| p.name == name)
    }

    pub fn num_elements(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    pub fn all_finite(&self) -> bool {
        self.params.iter().all(|p| p.value.all_finite())
    }

    /// Insert every parameter into `g` as a leaf.
    pub fn bind(&self, g: &mut Graph, trainable: bool) -> Vec<Var> {
        self.params.iter().map(|p| g.leaf(p.value.clone(), trainable)).collect()
    }

    /// Gradients of bound parameters, `None` where a parameter did not contribute.
    pub fn collect_grads(grads: &mut Grads, bound: &[Var]) -> Vec<Option<Tensor>> {
        bound.iter().map(|&v| grads.take(v)).collect()
    }
}

/// Adaptive-moment optimizer state for one [`ParamSet`].
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub beta1: f32,
    pub beta2: f32,
    pub eps: f32,
    pub t: u64,
    pub m: Vec<Tensor>,
    pub v: Vec<Tensor>,
}

impl Adam {
    pub fn new(params: &ParamSet, beta1: f32) -> Self {
        let zeros: Vec<Tensor> = params.iter().map(|p| Tensor::zeros(p.value.shape())).collect();
        Self {
            beta1,
            beta2: 0.999,
            eps: 1e-8,
            t: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }

    pub fn step(&mut self, params: &mut ParamSet, grads: &[Option<Tensor>], lr: f32) {
        assert_eq!(grads.len(), params.len());
        self.t += 1;
        let bc1 = 1.0 - (self.beta1 as f64).powi(self.t as i32);
        let bc2 = 1.0 - (self.beta2 as f64).powi(self.t as i32);
        let step = (lr as f64 / bc1) as f32;
        let bc2_sqrt = bc2.sqrt() as f32;
        for (i, p) in params.iter_mut().enumerate() {
            let Some(g) = &grads[i] else {
                continue;
            };
            let (m, v) = (self.m[i].data_mut(), self.v[i].data_mut());
            for (((w, &gi), mi), vi) in p.value.data_mut().iter_mut().zip(g.data()).zip(m.iter_mut()).zip(v.iter_mut()) {
                *mi = self.beta1 * *mi + (1.0 - self.beta1) * gi;
                *vi = self.beta2 * *vi + (1.0 - self.beta2) * gi * gi;
                *w -= step * *mi / (vi.sqrt() / bc2_sqrt + self.eps);
            }
        }
    }
}

/// Constant rate for the first half of training, then linear decay toward zero.
pub fn linear_decay_lr(base: f32, iteration: u64, total: u64) -> f32 {
    let keep = total / 2;
    if iteration < keep {
        return base;
    }
    let decay = (total - keep).max(1);
    base * (1.0 - (iteration - keep) as f32 / (decay + 1) as f32)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn adam_minimizes_a_quadratic() {
        let mut ps = ParamSet::new();
        ps.push("x", Tensor::from_vec([1, 1, 1, 2], vec![3.0, -2.0]));
        let mut opt = Adam::new(&ps, 0.5);
        for _ in 0..2000 {
            let mut g = Graph::new();
            let b = ps.bind(&mut g, true);
            let l = g.mse_const(b[0], 1.0);
            let mut grads = g.backward(l);
            let gs = ParamSet::collect_grads(&mut grads, &b);
            opt.step(&mut ps, &gs, 0.01);
        }
        for v in ps.get(0).value.data() {
            assert!((v - 1.0).abs() < 1e-2, "{v}");
        }
    }

    #[test]
    fn first_adam_step_moves_by_lr() {
        let mut ps = ParamSet::new();
        ps.push("x", Tensor::scalar(0.0));
        let mut opt = Adam::new(&ps, 0.5);
        opt.step(&mut ps, &[Some(Tensor::scalar(4.0))], 2e-4);
        assert!((ps.get(0).value.item() + 2e-4).abs() < 1e-9);
    }

    #[test]
    fn normal_init_is_seeded_and_small() {
        let mk = || {
            let mut rng = ChaCha8Rng::seed_from_u64(3);
            let mut ps = ParamSet::new();
            ps.normal("w", [64, 64, 3, 3], 0.02, &mut rng);
            ps
        };
        let (a, b) = (mk(), mk());
        assert_eq!(a, b);
        let d = a.get(0).value.data();
        assert!(d.iter().all(|v| v.abs() < 0.12));
        let mean = d.iter().sum::<f32>() / d.len() as f32;
        let std = (d.iter().map(|v| (v - mean).powi(2)).sum::<f32>() / d.len() as f32).sqrt();
        assert!((std - 0.02).abs() < 0.001);
    }

    #[test]
    fn lr_schedule() {
        assert_eq!(linear_decay_lr(1.0, 0, 100), 1.0);
        assert_eq!(linear_decay_lr(1.0, 49, 100), 1.0);
        assert!(linear_decay_lr(1.0, 99, 100) < 0.05);
        assert!(linear_decay_lr(1.0, 99, 100) > 0.0);
    }
}
