use super::{channel_layout, Forward, Layer, LayerCache, Network};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Extra upstream gradient added at an activation position.
#[derive(Debug, Clone)]
pub struct Injection {
    pub position: usize,
    pub grad: Tensor,
}

/// Gradients of a scalar loss w.r.t. the network input and every trainable
/// parameter (`layers[k]` is aligned with `Layer::params()` of layer `k`).
#[derive(Debug, Clone)]
pub struct Gradients {
    pub input: Tensor,
    pub layers: Vec<Vec<Tensor>>,
}

impl Gradients {
    /// Flattened in the same order as `Network::params`.
    pub fn flat(&self) -> Vec<&Tensor> {
        self.layers.iter().flatten().collect()
    }

    pub fn add_assign(&mut self, other: &Gradients) -> Result<()> {
        self.input.add_assign(&other.input)?;
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            for (x, y) in a.iter_mut().zip(b) {
                x.add_assign(y)?;
            }
        }
        Ok(())
    }
}

impl Network {
    /// Reverse-mode pass. `grad_out` is dL/d(logits); `inject` adds gradients
    /// at intermediate positions. BN layers that normalized by batch
    /// statistics are differentiated through those statistics.
    pub fn backward(&self, fwd: &Forward, grad_out: &Tensor, inject: &[Injection]) -> Result<Gradients> {
        let cache = fwd.cache.as_ref().ok_or(Error::MissingCache)?;
        if cache.len() != self.layers.len() {
            return Err(Error::Shape("forward cache was produced by a different network".into()));
        }
        if grad_out.shape() != fwd.logits().shape() {
            return Err(Error::Shape(format!("upstream gradient {:?} vs logits {:?}", grad_out.shape(), fwd.logits().shape())));
        }
        let n = self.layers.len();
        for inj in inject {
            if inj.position > n || inj.grad.shape() != fwd.activation(inj.position).shape() {
                return Err(Error::Shape(format!("injection at position {} has wrong shape", inj.position)));
            }
        }
        let add_injections = |g: &mut Tensor, pos: usize| -> Result<()> {
            for inj in inject.iter().filter(|i| i.position == pos) {
                g.add_assign(&inj.grad)?;
            }
            Ok(())
        };

        let mut g = grad_out.clone();
        add_injections(&mut g, n)?;
        let mut layer_grads: Vec<Vec<Tensor>> = vec![Vec::new(); n];
        for k in (0..n).rev() {
            let x = &fwd.inputs[k];
            let (gx, pg) = match (&self.layers[k], &cache[k]) {
                (Layer::Dense(d), LayerCache::Affine { x: xu, w, x_mask, w_mask }) => {
                    let wu = w.as_ref().unwrap_or(&d.weight);
                    dense_backward(&g, xu, wu, x_mask.as_deref(), w_mask.as_deref())
                }
                (Layer::Conv2d(c), LayerCache::Affine { x: xu, w, x_mask, w_mask }) => {
                    let wu = w.as_ref().unwrap_or(&c.weight);
                    conv_backward(&g, xu, wu, x_mask.as_deref(), w_mask.as_deref())
                }
                (Layer::BatchNorm(bn), LayerCache::Bn { xhat, inv_std, batch_stats }) => {
                    let (ch, sp) = channel_layout(&x.shape()[1..]);
                    let b = x.batch();
                    let m = (b * sp) as f64;
                    let gd = g.data();
                    let mut dgamma = vec![0.0; ch];
                    let mut dbeta = vec![0.0; ch];
                    for s in 0..b {
                        for c in 0..ch {
                            let base = (s * ch + c) * sp;
                            for p in base..base + sp {
                                dgamma[c] += gd[p] * xhat[p];
                                dbeta[c] += gd[p];
                            }
                        }
                    }
                    let mut dx = vec![0.0; x.len()];
                    for s in 0..b {
                        for c in 0..ch {
                            let base = (s * ch + c) * sp;
                            let scale = bn.gamma.data()[c] * inv_std[c];
                            for p in base..base + sp {
                                dx[p] = if *batch_stats { scale * (gd[p] - dbeta[c] / m - xhat[p] * dgamma[c] / m) } else { scale * gd[p] };
                            }
                        }
                    }
                    (Tensor::raw(x.shape().to_vec(), dx), vec![Tensor::raw(vec![ch], dgamma), Tensor::raw(vec![ch], dbeta)])
                }
                (Layer::Relu, _) => {
                    let data = g.data().iter().zip(x.data()).map(|(gv, xv)| if *xv > 0.0 { *gv } else { 0.0 }).collect();
                    (Tensor::raw(x.shape().to_vec(), data), vec![])
                }
                (Layer::GlobalAvgPool, _) => {
                    let (ch, sp) = channel_layout(&x.shape()[1..]);
                    let b = x.batch();
                    let mut dx = vec![0.0; x.len()];
                    for s in 0..b {
                        for c in 0..ch {
                            let v = g.data()[s * ch + c] / sp as f64;
                            let base = (s * ch + c) * sp;
                            dx[base..base + sp].iter_mut().for_each(|d| *d = v);
                        }
                    }
                    (Tensor::raw(x.shape().to_vec(), dx), vec![])
                }
                _ => return Err(Error::Shape(format!("cache kind does not match layer {k}"))),
            };
            g = gx;
            add_injections(&mut g, k)?;
            layer_grads[k] = pg;
        }
        g.check_finite("input gradient")?;
        Ok(Gradients { input: g, layers: layer_grads })
    }
}

fn dense_backward(g: &Tensor, x: &Tensor, w: &Tensor, x_mask: Option<&[bool]>, w_mask: Option<&[bool]>) -> (Tensor, Vec<Tensor>) {
    let (b, inp) = (x.batch(), x.row_len());
    let out = w.shape()[0];
    let gd = g.data();
    let mut dx = vec![0.0; b * inp];
    let mut dw = vec![0.0; out * inp];
    let mut db = vec![0.0; out];
    for s in 0..b {
        let xr = &x.data()[s * inp..(s + 1) * inp];
        let dxr = &mut dx[s * inp..(s + 1) * inp];
        for o in 0..out {
            let go = gd[s * out + o];
            if go == 0.0 {
                continue;
            }
            db[o] += go;
            let wr = &w.data()[o * inp..(o + 1) * inp];
            let dwr = &mut dw[o * inp..(o + 1) * inp];
            for i in 0..inp {
                dxr[i] += go * wr[i];
                dwr[i] += go * xr[i];
            }
        }
    }
    apply_mask(&mut dx, x_mask);
    apply_mask(&mut dw, w_mask);
    (Tensor::raw(x.shape().to_vec(), dx), vec![Tensor::raw(w.shape().to_vec(), dw), Tensor::raw(vec![out], db)])
}

fn conv_backward(g: &Tensor, x: &Tensor, w: &Tensor, x_mask: Option<&[bool]>, w_mask: Option<&[bool]>) -> (Tensor, Vec<Tensor>) {
    let (b, cin, h, wd) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
    let (cout, k) = (w.shape()[0], w.shape()[2]);
    let pad = (k / 2) as isize;
    let (xd, wdat, gd) = (x.data(), w.data(), g.data());
    let mut dx = vec![0.0; x.len()];
    let mut dw = vec![0.0; w.len()];
    let mut db = vec![0.0; cout];
    for s in 0..b {
        for o in 0..cout {
            for i in 0..h {
                for j in 0..wd {
                    let go = gd[((s * cout + o) * h + i) * wd + j];
                    db[o] += go;
                    for c in 0..cin {
                        for ki in 0..k {
                            let ii = i as isize + ki as isize - pad;
                            if ii < 0 || ii >= h as isize {
                                continue;
                            }
                            for kj in 0..k {
                                let jj = j as isize + kj as isize - pad;
                                if jj < 0 || jj >= wd as isize {
                                    continue;
                                }
                                let xi = ((s * cin + c) * h + ii as usize) * wd + jj as usize;
                                let wi = ((o * cin + c) * k + ki) * k + kj;
                                dx[xi] += go * wdat[wi];
                                dw[wi] += go * xd[xi];
                            }
                        }
                    }
                }
            }
        }
    }
    apply_mask(&mut dx, x_mask);
    apply_mask(&mut dw, w_mask);
    (Tensor::raw(x.shape().to_vec(), dx), vec![Tensor::raw(w.shape().to_vec(), dw), Tensor::raw(vec![cout], db)])
}

fn apply_mask(v: &mut [f64], mask: Option<&[bool]>) {
    if let Some(m) = mask {
        for (x, &keep) in v.iter_mut().zip(m) {
            if !keep {
                *x = 0.0;
            }
        }
    }
}
