use rand::Rng;

use crate::nn::{init, Graph, ParamId, ParamStore, Tensor, Var};

#[derive(Clone, Debug)]
pub struct Conv {
    pub w: ParamId,
    pub b: Option<ParamId>,
    pub stride: usize,
    pub pad: usize,
}

impl Conv {
    /// He-normal weights (`std = None`) or normal with the given std; zero
    /// bias.
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        store: &mut ParamStore,
        rng: &mut impl Rng,
        name: &str,
        cin: usize,
        cout: usize,
        k: usize,
        stride: usize,
        bias: bool,
        std: Option<f64>,
    ) -> Self {
        let shape = [cout, cin, k, k];
        let w = match std {
            None => init::he_normal(rng, &shape, cin * k * k),
            Some(s) => init::normal(rng, &shape, s),
        };
        let w = store.add(format!("{name}.weight"), w);
        let b = bias.then(|| store.add(format!("{name}.bias"), Tensor::zeros(&[cout])));
        Self { w, b, stride, pad: k / 2 }
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Var {
        let w = g.param(store, self.w);
        let b = self.b.map(|b| g.param(store, b));
        g.conv2d(x, w, b, self.stride, self.pad)
    }
}

#[derive(Clone, Debug)]
pub struct Linear {
    pub w: ParamId,
    pub b: Option<ParamId>,
}

impl Linear {
    pub fn new(store: &mut ParamStore, rng: &mut impl Rng, name: &str, din: usize, dout: usize, bias: bool, std: f64) -> Self {
        let w = store.add(format!("{name}.weight"), init::normal(rng, &[dout, din], std));
        let b = bias.then(|| store.add(format!("{name}.bias"), Tensor::zeros(&[dout])));
        Self { w, b }
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Var {
        let w = g.param(store, self.w);
        let b = self.b.map(|b| g.param(store, b));
        g.linear(x, w, b)
    }
}
