use crate::error::{Error, Result};
use crate::nn::Activation;
use crate::params::ParameterSet;
use crate::tensor::{gemm, Tensor};

/// Fully connected stack. Layer `l` stores `{prefix}.l{l}.w` with shape
/// `[out, in]` and `{prefix}.l{l}.b` with shape `[out]`; the activation at
/// index `l` is applied to that layer's output.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    prefix: String,
    widths: Vec<usize>,
    activations: Vec<Activation>,
}

#[derive(Debug, Clone)]
pub struct MlpCache {
    version: u64,
    /// Input to each layer; `inputs[0]` is the network input.
    inputs: Vec<Tensor>,
    /// Post-activation output of each layer.
    outputs: Vec<Tensor>,
}

impl MlpCache {
    pub fn output(&self) -> &Tensor {
        self.outputs.last().expect("mlp has at least one layer")
    }
}

impl Mlp {
    /// `widths` lists the input width followed by each layer's width.
    pub fn new(prefix: &str, widths: &[usize], activation: Activation) -> Self {
        let layers = widths.len().saturating_sub(1);
        Self::with_activations(prefix, widths, &vec![activation; layers])
    }

    /// Hidden layers use `hidden`, the final layer uses `output`.
    pub fn with_output(prefix: &str, widths: &[usize], hidden: Activation, output: Activation) -> Self {
        let layers = widths.len().saturating_sub(1);
        let mut acts = vec![hidden; layers];
        if let Some(last) = acts.last_mut() {
            *last = output;
        }
        Self::with_activations(prefix, widths, &acts)
    }

    pub fn with_activations(prefix: &str, widths: &[usize], activations: &[Activation]) -> Self {
        assert!(widths.len() >= 2, "an mlp needs an input width and at least one layer");
        assert_eq!(activations.len(), widths.len() - 1);
        Mlp {
            prefix: prefix.to_string(),
            widths: widths.to_vec(),
            activations: activations.to_vec(),
        }
    }

    pub fn prefix(&self) -> &str {
        &self.prefix
    }

    pub fn widths(&self) -> &[usize] {
        &self.widths
    }

    pub fn input_width(&self) -> usize {
        self.widths[0]
    }

    pub fn output_width(&self) -> usize {
        *self.widths.last().unwrap()
    }

    pub fn num_layers(&self) -> usize {
        self.widths.len() - 1
    }

    pub fn weight_name(&self, layer: usize) -> String {
        format!("{}.l{layer}.w", self.prefix)
    }

    pub fn bias_name(&self, layer: usize) -> String {
        format!("{}.l{layer}.b", self.prefix)
    }

    pub fn init(&self, params: &mut ParameterSet) -> Result<()> {
        for l in 0..self.num_layers() {
            let (i, o) = (self.widths[l], self.widths[l + 1]);
            params.insert_uniform(&self.weight_name(l), &[o, i], i)?;
            params.insert_uniform(&self.bias_name(l), &[o], i)?;
        }
        Ok(())
    }

    fn layer(&self, params: &ParameterSet, l: usize, x: &Tensor) -> Result<Tensor> {
        let w = params.value(&self.weight_name(l))?;
        let b = params.value(&self.bias_name(l))?;
        let (i, o) = (self.widths[l], self.widths[l + 1]);
        if x.cols() != i {
            return Err(Error::config(format!(
                "layer `{}.l{l}` expects input width {i}, got {}",
                self.prefix,
                x.cols()
            )));
        }
        if w.shape() != [o, i] || b.shape() != [o] {
            return Err(Error::config(format!(
                "layer `{}.l{l}` parameters have shape {:?}/{:?}, expected [{o}, {i}]/[{o}]",
                self.prefix,
                w.shape(),
                b.shape()
            )));
        }
        let mut y = Tensor::zeros(&[x.rows(), o]);
        gemm(1.0, x, false, w, true, 0.0, &mut y)?;
        let act = self.activations[l];
        let bias = b.data();
        for r in 0..y.rows() {
            for (v, bb) in y.row_mut(r).iter_mut().zip(bias) {
                *v = act.apply(*v + bb);
            }
        }
        Ok(y)
    }

    /// Forward pass without recording a cache.
    pub fn infer(&self, params: &ParameterSet, input: &Tensor) -> Result<Tensor> {
        let mut x = self.layer(params, 0, input)?;
        for l in 1..self.num_layers() {
            x = self.layer(params, l, &x)?;
        }
        Ok(x)
    }

    /// Run layers `first..` on `x`, the output of layer `first - 1`.
    pub fn infer_from(&self, params: &ParameterSet, first: usize, x: &Tensor) -> Result<Tensor> {
        let mut x = x.clone();
        for l in first..self.num_layers() {
            x = self.layer(params, l, &x)?;
        }
        Ok(x)
    }

    pub fn forward(&self, params: &ParameterSet, input: &Tensor) -> Result<(Tensor, MlpCache)> {
        let mut inputs = Vec::with_capacity(self.num_layers());
        let mut outputs = Vec::with_capacity(self.num_layers());
        let mut x = input.clone();
        for l in 0..self.num_layers() {
            let y = self.layer(params, l, &x)?;
            inputs.push(x);
            x = y.clone();
            outputs.push(y);
        }
        let cache = MlpCache {
            version: params.version(),
            inputs,
            outputs,
        };
        Ok((x, cache))
    }

    /// Accumulates parameter gradients and returns the gradient with respect
    /// to the network input.
    pub fn backward(&self, params: &mut ParameterSet, cache: &MlpCache, grad_out: &Tensor) -> Result<Tensor> {
        if cache.version != params.version() {
            return Err(Error::StaleCache {
                cached: cache.version,
                current: params.version(),
            });
        }
        if grad_out.shape() != cache.output().shape() {
            return Err(Error::shape(
                format!("{} backward", self.prefix),
                cache.output().shape(),
                grad_out.shape(),
            ));
        }
        let mut grad = grad_out.clone();
        for l in (0..self.num_layers()).rev() {
            let act = self.activations[l];
            let out = &cache.outputs[l];
            for (g, &y) in grad.data_mut().iter_mut().zip(out.data()) {
                *g *= act.derivative_from_output(y);
            }
            let x = &cache.inputs[l];
            {
                let wg = params.grad_mut(&self.weight_name(l))?;
                gemm(1.0, &grad, true, x, false, 1.0, wg)?;
            }
            {
                let bg = params.grad_mut(&self.bias_name(l))?;
                let bgd = bg.data_mut();
                for r in 0..grad.rows() {
                    for (acc, v) in bgd.iter_mut().zip(grad.row(r)) {
                        *acc += v;
                    }
                }
            }
            let w = params.value(&self.weight_name(l))?;
            let mut dx = Tensor::zeros(&[grad.rows(), self.widths[l]]);
            gemm(1.0, &grad, false, w, false, 0.0, &mut dx)?;
            grad = dx;
        }
        Ok(grad)
    }
}
