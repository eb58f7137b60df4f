use super::{Gradients, ParamStore, Real, TensorError};

/// Adam with bias-corrected moments.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    first: Vec<Vec<f64>>,
    second: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new<T: Real>(store: &ParamStore<T>, lr: f64) -> Self {
        let zeros: Vec<Vec<f64>> = store.ids().map(|id| vec![0.0; store.get(id).len()]).collect();
        Self { lr, beta1: 0.9, beta2: 0.999, eps: 1e-8, step: 0, first: zeros.clone(), second: zeros }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn moments(&self) -> (&[Vec<f64>], &[Vec<f64>]) {
        (&self.first, &self.second)
    }

    pub(crate) fn from_parts(lr: f64, beta1: f64, beta2: f64, eps: f64, step: u64, first: Vec<Vec<f64>>, second: Vec<Vec<f64>>) -> Self {
        Self { lr, beta1, beta2, eps, step, first, second }
    }

    /// Applies one update at learning rate `lr` (the schedule's value for
    /// this step). Parameters without a gradient are left untouched but
    /// still count toward the shared step counter.
    pub fn step<T: Real>(&mut self, store: &mut ParamStore<T>, grads: &Gradients<T>, lr: f64) -> Result<(), TensorError> {
        if grads.len() != store.len() || self.first.len() != store.len() {
            return Err(TensorError::Shape(format!(
                "adam: {} params, {} grads, {} moment slots",
                store.len(),
                grads.len(),
                self.first.len()
            )));
        }
        self.lr = lr;
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        for id in store.ids().collect::<Vec<_>>() {
            let Some(g) = grads.get(id) else { continue };
            let p = store.get_mut(id);
            if g.shape() != p.shape() {
                return Err(TensorError::Shape(format!("adam: grad {:?} vs param {:?}", g.shape(), p.shape())));
            }
            let (m, v) = (&mut self.first[id.index()], &mut self.second[id.index()]);
            for (((pi, &gi), mi), vi) in p.data_mut().iter_mut().zip(g.data()).zip(m.iter_mut()).zip(v.iter_mut()) {
                let gi = gi.as_f64();
                *mi = self.beta1 * *mi + (1.0 - self.beta1) * gi;
                *vi = self.beta2 * *vi + (1.0 - self.beta2) * gi * gi;
                let update = lr * (*mi / bc1) / ((*vi / bc2).sqrt() + self.eps);
                *pi = T::from_f64(pi.as_f64() - update);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensornet::{Tape, Tensor};

    #[test]
    fn first_step_moves_by_lr() {
        let mut store: ParamStore<f64> = ParamStore::new();
        let id = store.add("p", Tensor::from_vec(&[4], vec![0.5, -1.0, 2.0, 0.0]).unwrap());
        let before = store.get(id).clone();
        let mut grads = Gradients::zeros_like(&store);
        grads.get_mut(id).unwrap().data_mut().copy_from_slice(&[0.3, -2.0, 1e-3, 5.0]);
        let lr = 1e-4;
        let mut adam = Adam::new(&store, lr);
        adam.step(&mut store, &grads, lr).unwrap();
        for ((a, b), g) in store.get(id).data().iter().zip(before.data()).zip([0.3, -2.0, 1e-3, 5.0]) {
            let delta = a - b;
            assert_eq!(delta.signum(), -f64::signum(g));
            assert!(delta.abs() <= lr && delta.abs() >= 0.999 * lr, "{delta}");
        }
    }

    #[test]
    fn zero_gradient_is_noop() {
        let mut store: ParamStore<f32> = ParamStore::new();
        let id = store.add("p", Tensor::from_vec(&[2], vec![1.0, 2.0]).unwrap());
        let grads = Gradients::zeros_like(&store);
        let mut adam = Adam::new(&store, 1e-3);
        adam.step(&mut store, &grads, 1e-3).unwrap();
        assert_eq!(store.get(id).data(), &[1.0, 2.0]);
    }

    #[test]
    fn descends_quadratic() {
        // loss = mean((p - 3)^2)
        let mut store: ParamStore<f64> = ParamStore::new();
        let id = store.add("p", Tensor::from_vec(&[1, 3], vec![0.0, 1.0, -2.0]).unwrap());
        let loss_at = |store: &ParamStore<f64>| {
            let mut tape = Tape::new();
            let p = tape.param(store, id);
            let l = tape.mse(p, &[3.0; 3]).unwrap();
            (tape.value(l).item(), tape.backward(l, store).unwrap())
        };
        let mut adam = Adam::new(&store, 0.1);
        let (l0, g) = loss_at(&store);
        adam.step(&mut store, &g, 0.1).unwrap();
        let (l1, g) = loss_at(&store);
        adam.step(&mut store, &g, 0.1).unwrap();
        let (l2, _) = loss_at(&store);
        assert!(l1 < l0 && l2 < l1);
    }
}
