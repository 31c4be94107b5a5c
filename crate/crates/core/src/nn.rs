//! Small parameterised building blocks shared by the models.

use std::cell::RefCell;

use rand::Rng;

use crate::tensor::{BnStats, Param, Result, Tape, Tensor, Var};

/// Affine map `x W + b`.
#[derive(Clone, Debug)]
pub struct Linear {
    pub w: Param,
    pub b: Param,
}

#[derive(Copy, Clone, Debug)]
pub struct LinearVars {
    pub w: Var,
    pub b: Var,
}

impl Linear {
    pub fn new<R: Rng>(rng: &mut R, name: &str, in_dim: usize, out_dim: usize) -> Self {
        Linear {
            w: Param::new(format!("{name}.w"), Tensor::glorot(rng, in_dim, out_dim)),
            b: Param::new(format!("{name}.b"), Tensor::zeros(&[out_dim])),
        }
    }

    pub fn bind<'p>(&'p self, tape: &mut Tape<'p>) -> LinearVars {
        LinearVars {
            w: tape.param(&self.w),
            b: tape.param(&self.b),
        }
    }

    pub fn forward(tape: &mut Tape<'_>, vars: &LinearVars, x: Var) -> Result<Var> {
        let y = tape.matmul(x, vars.w)?;
        tape.add(y, vars.b)
    }

    pub fn visit<'a>(&'a self, out: &mut Vec<&'a Param>) {
        out.push(&self.w);
        out.push(&self.b);
    }

    pub fn visit_mut<'a>(&'a mut self, out: &mut Vec<&'a mut Param>) {
        out.push(&mut self.w);
        out.push(&mut self.b);
    }
}

/// Two-layer perceptron with a ReLU between the layers.
#[derive(Clone, Debug)]
pub struct Mlp {
    pub l1: Linear,
    pub l2: Linear,
}

#[derive(Copy, Clone, Debug)]
pub struct MlpVars {
    pub l1: LinearVars,
    pub l2: LinearVars,
}

impl Mlp {
    pub fn new<R: Rng>(
        rng: &mut R,
        name: &str,
        in_dim: usize,
        hidden: usize,
        out_dim: usize,
    ) -> Self {
        Mlp {
            l1: Linear::new(rng, &format!("{name}.l1"), in_dim, hidden),
            l2: Linear::new(rng, &format!("{name}.l2"), hidden, out_dim),
        }
    }

    pub fn bind<'p>(&'p self, tape: &mut Tape<'p>) -> MlpVars {
        MlpVars {
            l1: self.l1.bind(tape),
            l2: self.l2.bind(tape),
        }
    }

    pub fn forward(tape: &mut Tape<'_>, vars: &MlpVars, x: Var) -> Result<Var> {
        let h = Linear::forward(tape, &vars.l1, x)?;
        let h = tape.relu(h)?;
        Linear::forward(tape, &vars.l2, h)
    }

    pub fn visit<'a>(&'a self, out: &mut Vec<&'a Param>) {
        self.l1.visit(out);
        self.l2.visit(out);
    }

    pub fn visit_mut<'a>(&'a mut self, out: &mut Vec<&'a mut Param>) {
        self.l1.visit_mut(out);
        self.l2.visit_mut(out);
    }
}

/// Batch normalisation with learnable scale/shift and running statistics
/// (momentum folds batch stats in during training; eval normalises by the
/// running values).
#[derive(Clone, Debug)]
pub struct BatchNorm {
    pub gamma: Param,
    pub beta: Param,
    stats: RefCell<BnStats>,
    pub momentum: f64,
    pub eps: f64,
}

#[derive(Copy, Clone, Debug)]
pub struct BatchNormVars {
    pub gamma: Var,
    pub beta: Var,
}

impl BatchNorm {
    pub fn new(name: &str, features: usize) -> Self {
        BatchNorm {
            gamma: Param::new(format!("{name}.gamma"), Tensor::full(&[features], 1.0)),
            beta: Param::new(format!("{name}.beta"), Tensor::zeros(&[features])),
            stats: RefCell::new(BnStats::new(features)),
            momentum: 0.1,
            eps: 1e-5,
        }
    }

    pub fn bind<'p>(&'p self, tape: &mut Tape<'p>) -> BatchNormVars {
        BatchNormVars {
            gamma: tape.param(&self.gamma),
            beta: tape.param(&self.beta),
        }
    }

    pub fn forward(
        &self,
        tape: &mut Tape<'_>,
        vars: &BatchNormVars,
        x: Var,
        train: bool,
    ) -> Result<Var> {
        let mut stats = self.stats.borrow_mut();
        tape.batch_norm(
            x,
            vars.gamma,
            vars.beta,
            &mut stats,
            train,
            self.momentum,
            self.eps,
        )
    }

    pub fn visit<'a>(&'a self, out: &mut Vec<&'a Param>) {
        out.push(&self.gamma);
        out.push(&self.beta);
    }

    pub fn visit_mut<'a>(&'a mut self, out: &mut Vec<&'a mut Param>) {
        out.push(&mut self.gamma);
        out.push(&mut self.beta);
    }
}
