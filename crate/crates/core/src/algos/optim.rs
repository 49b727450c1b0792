use crate::numkit::Tensor;

/// Adam with per-slot learning rates.
#[derive(Clone, Debug)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    t: i32,
}

impl Adam {
    pub fn new(params: &[Tensor]) -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            m: params.iter().map(|p| vec![0.0; p.len()]).collect(),
            v: params.iter().map(|p| vec![0.0; p.len()]).collect(),
            t: 0,
        }
    }

    /// Updates the slots listed in `slots` in place; `lrs[k]` applies to slot `slots[k]`.
    pub fn step(&mut self, params: &mut [Tensor], grads: &[Tensor], slots: &[usize], lrs: &[f64]) {
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t);
        let c2 = 1.0 - self.beta2.powi(self.t);
        for (&s, &lr) in slots.iter().zip(lrs) {
            let (m, v) = (&mut self.m[s], &mut self.v[s]);
            for ((p, g), (mi, vi)) in params[s]
                .data_mut()
                .iter_mut()
                .zip(grads[s].data())
                .zip(m.iter_mut().zip(v.iter_mut()))
            {
                *mi = self.beta1 * *mi + (1.0 - self.beta1) * g;
                *vi = self.beta2 * *vi + (1.0 - self.beta2) * g * g;
                let mhat = *mi / c1;
                let vhat = *vi / c2;
                *p -= lr * mhat / (vhat.sqrt() + self.eps);
            }
        }
    }
}

/// Global L2 norm over the listed slots.
pub fn grad_norm(grads: &[Tensor], slots: &[usize]) -> f64 {
    slots.iter().map(|&s| grads[s].frobenius_sq()).sum::<f64>().sqrt()
}

/// Rescales the listed slots so their global norm is at most `max_norm`.
/// Returns the norm before clipping.
pub fn clip_grad_norm(grads: &mut [Tensor], slots: &[usize], max_norm: f64) -> f64 {
    let norm = grad_norm(grads, slots);
    if norm > max_norm && norm > 0.0 {
        let scale = max_norm / norm;
        for &s in slots {
            grads[s].data_mut().iter_mut().for_each(|g| *g *= scale);
        }
    }
    norm
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_step_moves_by_lr() {
        // With bias correction the first Adam step is lr·sign(g) (up to eps).
        let mut p = vec![Tensor::vector(vec![1.0, -2.0])];
        let g = vec![Tensor::vector(vec![0.3, -5.0])];
        let mut opt = Adam::new(&p);
        opt.step(&mut p, &g, &[0], &[0.1]);
        assert!((p[0].data()[0] - 0.9).abs() < 1e-7);
        assert!((p[0].data()[1] + 1.9).abs() < 1e-7);
    }

    #[test]
    fn minimizes_quadratic() {
        let mut p = vec![Tensor::vector(vec![3.0, -4.0])];
        let mut opt = Adam::new(&p);
        for _ in 0..2000 {
            let g = vec![Tensor::vector(p[0].data().iter().map(|x| 2.0 * x).collect())];
            opt.step(&mut p, &g, &[0], &[0.05]);
        }
        assert!(p[0].data().iter().all(|x| x.abs() < 1e-3));
    }

    #[test]
    fn untouched_slots_stay() {
        let mut p = vec![Tensor::vector(vec![1.0]), Tensor::vector(vec![1.0])];
        let g = vec![Tensor::vector(vec![1.0]), Tensor::vector(vec![1.0])];
        let mut opt = Adam::new(&p);
        opt.step(&mut p, &g, &[1], &[0.1]);
        assert_eq!(p[0].data(), &[1.0]);
    }

    #[test]
    fn clipping() {
        let mut g = vec![Tensor::vector(vec![3.0]), Tensor::vector(vec![4.0])];
        let n = clip_grad_norm(&mut g, &[0, 1], 0.5);
        assert_eq!(n, 5.0);
        assert!((grad_norm(&g, &[0, 1]) - 0.5).abs() < 1e-15);
        let n = clip_grad_norm(&mut g, &[0, 1], 1.0);
        assert!((n - 0.5).abs() < 1e-15);
    }
}
