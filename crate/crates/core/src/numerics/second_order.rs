//! Input gradients emitted as graph nodes, so they can be differentiated again.
//!
//! Only the op set of a dense ReLU/sigmoid network is supported. Every
//! adjoint is expressed with first-order primitives (ReLU masks become
//! constants), which makes the second derivative exact away from ReLU kinks.

use super::graph::{Graph, Op, Var};
use super::{NumericsError, Tensor};

impl Graph {
    /// Builds `∂output/∂input` on the tape and returns it as a node shaped
    /// like `input`. `output` must be scalar.
    pub fn input_gradient(&mut self, output: Var, input: Var) -> Result<Var, NumericsError> {
        if !self.value(output).is_scalar() {
            return Err(NumericsError::NonScalarLoss {
                node: format!("{}#{}", self.nodes[output.0].op.name(), output.0),
                shape: self.shape(output).to_vec(),
            });
        }
        let mut depends = vec![false; output.0 + 1];
        depends[input.0] = true;
        for i in input.0 + 1..=output.0 {
            depends[i] = self.input_vars(i).iter().any(|v| v.0 <= output.0 && depends[v.0]);
        }
        if !depends[output.0] {
            let shape = self.shape(input).to_vec();
            return Ok(self.constant(Tensor::zeros(&shape)));
        }

        let mut adj: Vec<Option<Var>> = vec![None; output.0 + 1];
        let seed = Tensor::scalar(1.0).reshaped(self.shape(output))?;
        adj[output.0] = Some(self.constant(seed));

        for i in (input.0 + 1..=output.0).rev() {
            if !depends[i] {
                continue;
            }
            let Some(d) = adj[i] else { continue };
            let op = self.nodes[i].op.clone();
            let node_name = format!("{}#{}", op.name(), i);
            let dep = |v: Var| depends[v.0];
            let mut contributions: Vec<(Var, Var)> = Vec::new();
            match op {
                Op::Sum(x) => {
                    let ones = self.constant(Tensor::ones(self.shape(x)));
                    contributions.push((x, self.scale(ones, d)?));
                }
                Op::Mean(x) => {
                    let n = self.value(x).len() as f64;
                    let ones = self.constant(Tensor::ones(self.shape(x)));
                    let s = self.scale(ones, d)?;
                    contributions.push((x, self.affine(s, 1.0 / n, 0.0)));
                }
                Op::Sigmoid(x) => {
                    let y = Var(i);
                    let one_minus = self.affine(y, -1.0, 1.0);
                    let slope = self.mul(y, one_minus)?;
                    contributions.push((x, self.mul(d, slope)?));
                }
                Op::Relu(x) => {
                    let mask = self.value(x).map(|v| if v > 0.0 { 1.0 } else { 0.0 });
                    let mask = self.constant(mask);
                    contributions.push((x, self.mul(d, mask)?));
                }
                Op::AddBias { x, bias } => {
                    if dep(bias) {
                        return Err(NumericsError::UnsupportedSecondOrder { node: node_name });
                    }
                    contributions.push((x, d));
                }
                Op::Add(a, b) => {
                    contributions.push((a, d));
                    contributions.push((b, d));
                }
                Op::Sub(a, b) => {
                    contributions.push((a, d));
                    if dep(b) {
                        contributions.push((b, self.affine(d, -1.0, 0.0)));
                    }
                }
                Op::Affine { x, mul } => contributions.push((x, self.affine(d, mul, 0.0))),
                Op::Scale { x, s } => {
                    if dep(s) {
                        return Err(NumericsError::UnsupportedSecondOrder { node: node_name });
                    }
                    contributions.push((x, self.scale(d, s)?));
                }
                Op::Mul(a, b) => {
                    if dep(a) && dep(b) {
                        return Err(NumericsError::UnsupportedSecondOrder { node: node_name });
                    }
                    if dep(a) {
                        contributions.push((a, self.mul(d, b)?));
                    }
                    if dep(b) {
                        contributions.push((b, self.mul(d, a)?));
                    }
                }
                Op::MatMul { a, b, ta, tb } => {
                    if dep(a) && dep(b) {
                        return Err(NumericsError::UnsupportedSecondOrder { node: node_name });
                    }
                    if dep(a) {
                        let da = if ta {
                            self.matmul_t(b, d, tb, true)?
                        } else {
                            self.matmul_t(d, b, false, !tb)?
                        };
                        contributions.push((a, da));
                    }
                    if dep(b) {
                        let db = if tb {
                            self.matmul_t(d, a, true, ta)?
                        } else {
                            self.matmul_t(a, d, !ta, false)?
                        };
                        contributions.push((b, db));
                    }
                }
                Op::Reshape(x) => {
                    let shape = self.shape(x).to_vec();
                    contributions.push((x, self.reshape(d, &shape)?));
                }
                _ => return Err(NumericsError::UnsupportedSecondOrder { node: node_name }),
            }
            for (target, g) in contributions {
                if !depends[target.0] {
                    continue;
                }
                adj[target.0] = Some(match adj[target.0] {
                    Some(prev) => self.add(prev, g)?,
                    None => g,
                });
            }
        }
        match adj[input.0] {
            Some(g) => Ok(g),
            None => {
                let shape = self.shape(input).to_vec();
                Ok(self.constant(Tensor::zeros(&shape)))
            }
        }
    }

    fn input_vars(&self, i: usize) -> Vec<Var> {
        self.nodes[i].op.inputs()
    }
}
