//! Linear model over fixed input vectors. Small enough for brute-force
//! reference computations in tests and benchmarks.

use crate::noise::init_noise_params;
use crate::rng::{self, Prng};
use crate::tensor::{BoundParams, Graph, ParamStore, Tensor, Var};

use super::{affine_head, glorot, HeadOutput, TypingModel};

#[derive(Clone, Debug)]
pub struct LinearProbe {
    /// One input row per item.
    pub inputs: Tensor,
    pub params: ParamStore,
    pub use_relu: bool,
}

impl LinearProbe {
    pub fn new(inputs: Tensor, n_types: usize, use_relu: bool, use_noise: bool, seed: u64) -> Self {
        let mut rng: Prng = rng::stream(seed, rng::streams::INIT);
        let mut params = ParamStore::new();
        params.insert("head.w", glorot(&mut rng, inputs.cols(), n_types));
        params.insert("head.b", Tensor::row(vec![0.0; n_types]));
        if use_noise {
            init_noise_params(&mut params, n_types);
        }
        Self {
            inputs,
            params,
            use_relu,
        }
    }
}

impl TypingModel for LinearProbe {
    fn params(&self) -> &ParamStore {
        &self.params
    }

    fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    fn n_types(&self) -> usize {
        self.params.tensor("head.b").len()
    }

    fn embed_dim(&self) -> usize {
        self.inputs.cols()
    }

    fn embed(&self, g: &mut Graph, _b: &BoundParams, items: &[usize]) -> Var {
        let d = self.inputs.cols();
        let mut data = Vec::with_capacity(items.len() * d);
        for &i in items {
            data.extend_from_slice(self.inputs.row_slice(i));
        }
        g.leaf(Tensor::new(vec![items.len(), d], data).expect("shape"))
    }

    fn head(&self, g: &mut Graph, b: &BoundParams, e: Var) -> HeadOutput {
        affine_head(g, b, e, self.use_relu)
    }
}
