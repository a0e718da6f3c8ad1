//! Single-layer top-down feature pyramid with bias-free projections.

use rand::Rng;

use super::layers::Conv;
use crate::nn::{Graph, ParamStore, Var};
use crate::{Error, Result};

#[derive(Clone, Debug)]
pub struct Fpn {
    lateral: Vec<Conv>,
    output: Vec<Conv>,
    in_channels: Vec<usize>,
    pub channels: usize,
}

impl Fpn {
    pub fn new(store: &mut ParamStore, rng: &mut impl Rng, in_channels: &[usize], channels: usize, levels: &[usize]) -> Self {
        let lateral = in_channels
            .iter()
            .zip(levels)
            .map(|(&c, l)| Conv::new(store, rng, &format!("fpn.lateral.p{l}"), c, channels, 1, 1, false, None))
            .collect();
        let output = levels
            .iter()
            .map(|l| Conv::new(store, rng, &format!("fpn.output.p{l}"), channels, channels, 3, 1, false, None))
            .collect();
        Self {
            lateral,
            output,
            in_channels: in_channels.to_vec(),
            channels,
        }
    }

    /// C maps (finest first) -> P maps with `channels` channels each.
    pub fn forward(&self, g: &mut Graph, store: &ParamStore, c: &[Var]) -> Result<Vec<Var>> {
        if c.len() != self.lateral.len() {
            return Err(Error::Config(format!("fpn expects {} inputs, got {}", self.lateral.len(), c.len())));
        }
        for (i, (&v, &want)) in c.iter().zip(&self.in_channels).enumerate() {
            let got = g.value(v).dims3().0;
            if got != want {
                return Err(Error::Config(format!("fpn input {i}: {got} channels, expected {want}")));
            }
        }
        let n = c.len();
        let mut merged = vec![None; n];
        let mut above: Option<Var> = None;
        for i in (0..n).rev() {
            let lat = self.lateral[i].forward(g, store, c[i]);
            let m = match above {
                None => lat,
                Some(a) => {
                    let (_, h, w) = g.value(lat).dims3();
                    let up = g.upsample(a, h, w);
                    g.add(lat, up)
                }
            };
            merged[i] = Some(m);
            above = Some(m);
        }
        Ok(merged
            .into_iter()
            .zip(&self.output)
            .map(|(m, conv)| conv.forward(g, store, m.unwrap()))
            .collect())
    }
}
