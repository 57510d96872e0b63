use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    Sgd,
    Adam,
}

const BETA1: f64 = 0.9;
const BETA2: f64 = 0.999;
const EPS: f64 = 1e-8;

/// Per-tensor optimizer state, applied to `f32` parameters in a fixed
/// order.
#[derive(Debug, Clone)]
pub struct Optimizer {
    kind: OptimizerKind,
    lr: f64,
    step: u64,
    first: Vec<Vec<f32>>,
    second: Vec<Vec<f32>>,
}

impl Optimizer {
    pub fn new(kind: OptimizerKind, lr: f64, sizes: &[usize]) -> Self {
        let moments = || match kind {
            OptimizerKind::Sgd => Vec::new(),
            OptimizerKind::Adam => sizes.iter().map(|&n| vec![0.0; n]).collect(),
        };
        Optimizer {
            kind,
            lr,
            step: 0,
            first: moments(),
            second: moments(),
        }
    }

    pub fn update(&mut self, params: Vec<&mut [f32]>, grads: Vec<&[f32]>) {
        assert_eq!(params.len(), grads.len(), "parameter/gradient tensor count");
        self.step += 1;
        match self.kind {
            OptimizerKind::Sgd => {
                let lr = self.lr as f32;
                for (p, g) in params.into_iter().zip(grads) {
                    for (x, &d) in p.iter_mut().zip(g) {
                        *x -= lr * d;
                    }
                }
            }
            OptimizerKind::Adam => {
                let t = self.step as i32;
                let c1 = 1.0 - BETA1.powi(t);
                let c2 = 1.0 - BETA2.powi(t);
                let step = (self.lr * c2.sqrt() / c1) as f32;
                let (b1, b2, eps) = (BETA1 as f32, BETA2 as f32, (EPS * c2.sqrt()) as f32);
                for (i, (p, g)) in params.into_iter().zip(grads).enumerate() {
                    let (m, v) = (&mut self.first[i], &mut self.second[i]);
                    for j in 0..p.len() {
                        let d = g[j];
                        m[j] = b1 * m[j] + (1.0 - b1) * d;
                        v[j] = b2 * v[j] + (1.0 - b2) * d * d;
                        p[j] -= step * m[j] / (v[j].sqrt() + eps);
                    }
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sgd_step() {
        let mut p = vec![1.0f32, -2.0];
        let mut o = Optimizer::new(OptimizerKind::Sgd, 0.5, &[2]);
        o.update(vec![&mut p[..]], vec![&[2.0, -2.0][..]]);
        assert_eq!(p, vec![0.0, -1.0]);
    }

    #[test]
    fn adam_first_step_moves_by_lr() {
        let mut p = vec![1.0f32, 1.0];
        let mut o = Optimizer::new(OptimizerKind::Adam, 0.1, &[2]);
        o.update(vec![&mut p[..]], vec![&[3.0, -0.01][..]]);
        assert!((p[0] - 0.9).abs() < 1e-6);
        assert!((p[1] - 1.1).abs() < 1e-5);
    }
}
