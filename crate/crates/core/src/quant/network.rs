use super::{calibrate_minmax, Calibration, QuantParams};
use crate::error::{Error, Result};
use crate::net::{FakeQuant, Forward, Mode, Network};
use crate::tensor::Tensor;

/// A network with one weight quantizer per parameterized layer and one
/// activation quantizer per activation site. Activation site `k` is the input
/// of the k-th parameterized layer, i.e. the tensor that layer consumes
/// (raw input for the first layer, post-ReLU activations afterwards).
#[derive(Debug, Clone, PartialEq)]
pub struct QuantizedNetwork {
    pub base: Network,
    /// Layer indices of the parameterized layers.
    pub sites: Vec<usize>,
    pub weight_qparams: Vec<QuantParams>,
    pub act_qparams: Vec<QuantParams>,
}

pub(crate) fn weight_sites(net: &Network) -> Vec<usize> {
    net.layers().iter().enumerate().filter(|(_, l)| l.has_weight()).map(|(i, _)| i).collect()
}

pub(crate) fn weight_qparams(net: &Network, sites: &[usize], bits: u32) -> Result<Vec<QuantParams>> {
    sites.iter().map(|&k| calibrate_minmax(net.layers()[k].weight().expect("weight site").data(), bits)).collect()
}

impl QuantizedNetwork {
    /// Weight quantizers from per-tensor min-max, activation quantizers from
    /// `method` over the eval-mode activations of `batches`. No parameter of
    /// `base` changes.
    pub fn calibrate(base: Network, batches: &[Tensor], w_bits: u32, a_bits: u32, method: Calibration) -> Result<Self> {
        if batches.is_empty() {
            return Err(Error::Empty("calibration batches".into()));
        }
        let sites = weight_sites(&base);
        let weight_qparams = weight_qparams(&base, &sites, w_bits)?;
        let mut per_site: Vec<Vec<Vec<f64>>> = vec![Vec::new(); sites.len()];
        for batch in batches {
            let fwd = base.forward(batch, Mode::Eval)?.without_cache();
            for (s, &k) in sites.iter().enumerate() {
                per_site[s].push(fwd.inputs[k].data().to_vec());
            }
        }
        let act_qparams = per_site
            .iter()
            .map(|batches| {
                let refs: Vec<&[f64]> = batches.iter().map(Vec::as_slice).collect();
                method.calibrate(&refs, a_bits)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(QuantizedNetwork { base, sites, weight_qparams, act_qparams })
    }

    pub fn fake_quant(&self) -> FakeQuant {
        let n = self.base.layers().len();
        let mut fq = FakeQuant { inputs: vec![None; n], weights: vec![None; n] };
        for (s, &k) in self.sites.iter().enumerate() {
            fq.inputs[k] = Some(self.act_qparams[s]);
            fq.weights[k] = Some(self.weight_qparams[s]);
        }
        fq
    }

    pub fn forward(&self, x: &Tensor, mode: Mode) -> Result<Forward> {
        self.base.forward_with(x, mode, Some(&self.fake_quant()))
    }

    /// Re-derives weight quantizers from the current latent weights.
    pub fn refresh_weight_qparams(&mut self) -> Result<()> {
        let bits = self.weight_qparams.first().map(|q| q.bits).unwrap_or(8);
        self.weight_qparams = weight_qparams(&self.base, &self.sites, bits)?;
        Ok(())
    }

    /// Folds a batch's activation extremes into the activation quantizers by
    /// exponential moving average.
    pub fn update_activation_ema(&mut self, fwd: &Forward, momentum: f64) -> Result<()> {
        for (s, &k) in self.sites.iter().enumerate() {
            let cur = self.act_qparams[s];
            let fresh = calibrate_minmax(fwd.inputs[k].data(), cur.bits)?;
            let lo = momentum * cur.clip_min + (1.0 - momentum) * fresh.clip_min;
            let hi = momentum * cur.clip_max + (1.0 - momentum) * fresh.clip_max;
            self.act_qparams[s] = QuantParams::from_range(lo, hi.max(lo + 1e-8), cur.bits)?;
        }
        Ok(())
    }

    pub fn accuracy(&self, x: &Tensor, labels: &[usize]) -> Result<f64> {
        let fwd = self.forward(x, Mode::Eval)?;
        Ok(crate::net::accuracy(fwd.logits(), labels))
    }
}
