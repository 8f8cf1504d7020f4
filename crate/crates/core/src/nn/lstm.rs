use crate::error::{Error, Result};
use crate::nn::sigmoid;
use crate::params::ParameterSet;
use crate::tensor::{gemm, Tensor};

/// Standard LSTM cell with fused gate weights `{prefix}.w` of shape
/// `[4H, in + H]` (gate order input, forget, candidate, output) and bias
/// `{prefix}.b` of shape `[4H]`.
#[derive(Debug, Clone, PartialEq)]
pub struct LstmCell {
    prefix: String,
    input: usize,
    hidden: usize,
}

#[derive(Debug, Clone)]
pub struct LstmCache {
    version: u64,
    xh: Tensor,
    /// Post-activation gates, `[B, 4H]`.
    gates: Tensor,
    c_prev: Tensor,
    tanh_c: Tensor,
}

impl LstmCell {
    pub fn new(prefix: &str, input: usize, hidden: usize) -> Self {
        LstmCell {
            prefix: prefix.to_string(),
            input,
            hidden,
        }
    }

    pub fn hidden(&self) -> usize {
        self.hidden
    }

    pub fn input(&self) -> usize {
        self.input
    }

    fn weight_name(&self) -> String {
        format!("{}.w", self.prefix)
    }

    fn bias_name(&self) -> String {
        format!("{}.b", self.prefix)
    }

    pub fn init(&self, params: &mut ParameterSet) -> Result<()> {
        let fan_in = self.input + self.hidden;
        params.insert_uniform(&self.weight_name(), &[4 * self.hidden, fan_in], fan_in)?;
        params.insert_uniform(&self.bias_name(), &[4 * self.hidden], fan_in)
    }

    fn check(&self, h_prev: &Tensor, c_prev: &Tensor, x: &Tensor) -> Result<()> {
        let name = &self.prefix;
        if h_prev.cols() != self.hidden || c_prev.cols() != self.hidden {
            return Err(Error::config(format!(
                "lstm `{name}` has hidden size {}, got state widths {}/{}",
                self.hidden,
                h_prev.cols(),
                c_prev.cols()
            )));
        }
        if x.cols() != self.input {
            return Err(Error::config(format!(
                "lstm `{name}` expects input width {}, got {}",
                self.input,
                x.cols()
            )));
        }
        if h_prev.rows() != x.rows() || c_prev.rows() != x.rows() {
            return Err(Error::config(format!("lstm `{name}` batch sizes disagree")));
        }
        Ok(())
    }

    fn gates(&self, params: &ParameterSet, h_prev: &Tensor, c_prev: &Tensor, x: &Tensor) -> Result<(Tensor, Tensor)> {
        self.check(h_prev, c_prev, x)?;
        let xh = Tensor::concat_cols(x, h_prev)?;
        let w = params.value(&self.weight_name())?;
        let b = params.value(&self.bias_name())?;
        let h = self.hidden;
        let mut z = Tensor::zeros(&[x.rows(), 4 * h]);
        gemm(1.0, &xh, false, w, true, 0.0, &mut z)?;
        for r in 0..z.rows() {
            let row = z.row_mut(r);
            for (j, v) in row.iter_mut().enumerate() {
                let pre = *v + b.data()[j];
                *v = if (2 * h..3 * h).contains(&j) { pre.tanh() } else { sigmoid(pre) };
            }
        }
        Ok((xh, z))
    }

    fn combine(&self, gates: &Tensor, c_prev: &Tensor) -> (Tensor, Tensor, Tensor) {
        let hd = self.hidden;
        let rows = gates.rows();
        let mut h = Tensor::zeros(&[rows, hd]);
        let mut c = Tensor::zeros(&[rows, hd]);
        let mut tc = Tensor::zeros(&[rows, hd]);
        for r in 0..rows {
            let g = gates.row(r);
            let cp = c_prev.row(r);
            for j in 0..hd {
                let cv = g[hd + j] * cp[j] + g[j] * g[2 * hd + j];
                let t = cv.tanh();
                c.row_mut(r)[j] = cv;
                tc.row_mut(r)[j] = t;
                h.row_mut(r)[j] = g[3 * hd + j] * t;
            }
        }
        (h, c, tc)
    }

    /// One recurrence step without a cache.
    pub fn infer(&self, params: &ParameterSet, h_prev: &Tensor, c_prev: &Tensor, x: &Tensor) -> Result<(Tensor, Tensor)> {
        let (_, gates) = self.gates(params, h_prev, c_prev, x)?;
        let (h, c, _) = self.combine(&gates, c_prev);
        Ok((h, c))
    }

    pub fn forward(&self, params: &ParameterSet, h_prev: &Tensor, c_prev: &Tensor, x: &Tensor) -> Result<(Tensor, Tensor, LstmCache)> {
        let (xh, gates) = self.gates(params, h_prev, c_prev, x)?;
        let (h, c, tanh_c) = self.combine(&gates, c_prev);
        let cache = LstmCache {
            version: params.version(),
            xh,
            gates,
            c_prev: c_prev.clone(),
            tanh_c,
        };
        Ok((h, c, cache))
    }

    /// Given gradients with respect to this step's `h` and `c`, accumulates
    /// parameter gradients and returns `(dx, dh_prev, dc_prev)`.
    pub fn backward(&self, params: &mut ParameterSet, cache: &LstmCache, dh: &Tensor, dc: &Tensor) -> Result<(Tensor, Tensor, Tensor)> {
        if cache.version != params.version() {
            return Err(Error::StaleCache {
                cached: cache.version,
                current: params.version(),
            });
        }
        let hd = self.hidden;
        let rows = cache.gates.rows();
        let mut dz = Tensor::zeros(&[rows, 4 * hd]);
        let mut dc_prev = Tensor::zeros(&[rows, hd]);
        for r in 0..rows {
            let g = cache.gates.row(r);
            let cp = cache.c_prev.row(r);
            let tc = cache.tanh_c.row(r);
            let dhr = dh.row(r);
            let dcr = dc.row(r);
            let dzr = dz.row_mut(r);
            let mut dcp = vec![0.0; hd];
            for j in 0..hd {
                let (i, f, cand, o) = (g[j], g[hd + j], g[2 * hd + j], g[3 * hd + j]);
                let dct = dcr[j] + dhr[j] * o * (1.0 - tc[j] * tc[j]);
                let d_o = dhr[j] * tc[j];
                dzr[j] = dct * cand * i * (1.0 - i);
                dzr[hd + j] = dct * cp[j] * f * (1.0 - f);
                dzr[2 * hd + j] = dct * i * (1.0 - cand * cand);
                dzr[3 * hd + j] = d_o * o * (1.0 - o);
                dcp[j] = dct * f;
            }
            dc_prev.row_mut(r).copy_from_slice(&dcp);
        }
        {
            let wg = params.grad_mut(&self.weight_name())?;
            gemm(1.0, &dz, true, &cache.xh, false, 1.0, wg)?;
        }
        {
            let bg = params.grad_mut(&self.bias_name())?;
            let bgd = bg.data_mut();
            for r in 0..rows {
                for (acc, v) in bgd.iter_mut().zip(dz.row(r)) {
                    *acc += v;
                }
            }
        }
        let w = params.value(&self.weight_name())?;
        let mut dxh = Tensor::zeros(&[rows, self.input + hd]);
        gemm(1.0, &dz, false, w, false, 0.0, &mut dxh)?;
        let (dx, dh_prev) = dxh.split_cols(self.input);
        Ok((dx, dh_prev, dc_prev))
    }
}
