//! Gated recurrent units over `[T, D]` sequences.
//!
//! Gate equations (row-vector convention, `x W` with `W: [D, U]`):
//!
//! ```text
//! z_t = sigmoid(x_t W_z + h_{t-1} U_z + b_z)
//! r_t = sigmoid(x_t W_r + h_{t-1} U_r + b_r)
//! n_t = tanh(x_t W_h + (r_t * h_{t-1}) U_h + b_h)          reset-before
//! n_t = tanh(x_t W_h + b_h + r_t * (h_{t-1} U_h + c_h))    reset-after
//! h_t = (1 - z_t) * h_{t-1} + z_t * n_t,  h_0 = 0
//! ```
//!
//! The reset-after variant carries a second (recurrent) bias per gate, matching
//! the cuDNN-compatible cell used by common framework defaults.

use serde::{Deserialize, Serialize};

use super::conv::sigmoid;
use super::tensor::{matmul_acc, Tensor};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GruVariant {
    #[default]
    ResetBefore,
    ResetAfter,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Gru {
    pub variant: GruVariant,
    pub w_z: Tensor,
    pub w_r: Tensor,
    pub w_h: Tensor,
    pub u_z: Tensor,
    pub u_r: Tensor,
    pub u_h: Tensor,
    pub b_z: Tensor,
    pub b_r: Tensor,
    pub b_h: Tensor,
    /// Recurrent biases `[c_z, c_r, c_h]`, present only for [`GruVariant::ResetAfter`].
    pub recurrent_bias: Option<[Tensor; 3]>,
}

#[derive(Clone, Debug)]
pub struct GruCache {
    input: Tensor,
    reverse: bool,
    // per processing step, indexed by original time
    h_prev: Vec<Vec<f64>>,
    z: Vec<Vec<f64>>,
    r: Vec<Vec<f64>>,
    n: Vec<Vec<f64>>,
    // reset-before: r * h_prev; reset-after: h_prev U_h + c_h
    mix: Vec<Vec<f64>>,
}

/// Trainable parameters of one GRU direction.
pub fn count_gru_params(input_dim: usize, units: usize, variant: GruVariant) -> u64 {
    let (d, u) = (input_dim as u64, units as u64);
    let biases = match variant {
        GruVariant::ResetBefore => u,
        GruVariant::ResetAfter => 2 * u,
    };
    3 * (d * u + u * u + biases)
}

fn vecmat(v: &[f64], m: &[f64], cols: usize, out: &mut [f64]) {
    matmul_acc(v, m, out, 1, v.len(), cols);
}

fn mat_vec_t(m: &[f64], g: &[f64], out: &mut [f64]) {
    let cols = g.len();
    for (i, o) in out.iter_mut().enumerate() {
        let row = &m[i * cols..(i + 1) * cols];
        *o += row.iter().zip(g).map(|(a, b)| a * b).sum::<f64>();
    }
}

fn outer_acc(acc: &mut [f64], v: &[f64], g: &[f64]) {
    let cols = g.len();
    for (i, &vi) in v.iter().enumerate() {
        if vi == 0.0 {
            continue;
        }
        for (a, gk) in acc[i * cols..(i + 1) * cols].iter_mut().zip(g) {
            *a += vi * gk;
        }
    }
}

impl Gru {
    pub fn input_dim(&self) -> usize {
        self.w_z.shape()[0]
    }

    pub fn units(&self) -> usize {
        self.w_z.shape()[1]
    }

    /// Checks that every weight is consistent with `w_z`'s `[D, U]` shape.
    pub fn validate(&self) -> Result<()> {
        self.w_z.expect_rank(2, "gru w_z")?;
        let (d, u) = (self.input_dim(), self.units());
        for w in [&self.w_r, &self.w_h] {
            w.expect_shape(&[d, u])?;
        }
        for w in [&self.u_z, &self.u_r, &self.u_h] {
            w.expect_shape(&[u, u])?;
        }
        for b in [&self.b_z, &self.b_r, &self.b_h] {
            b.expect_shape(&[u])?;
        }
        match (&self.variant, &self.recurrent_bias) {
            (GruVariant::ResetBefore, None) => Ok(()),
            (GruVariant::ResetAfter, Some(c)) => c.iter().try_for_each(|b| b.expect_shape(&[u])),
            _ => Err(Error::Geometry("recurrent bias must be present iff the cell is reset-after".into())),
        }
    }

    fn project(&self, x: &Tensor, w: &Tensor, b: &Tensor) -> Vec<f64> {
        let (t, d, u) = (x.shape()[0], self.input_dim(), self.units());
        let mut out = vec![0.0; t * u];
        for row in out.chunks_mut(u) {
            row.copy_from_slice(b.data());
        }
        matmul_acc(x.data(), w.data(), &mut out, t, d, u);
        out
    }

    /// Runs the recurrence; with `reverse` the sequence is consumed back to front
    /// but outputs are returned in input order.
    pub fn forward(&self, x: &Tensor, reverse: bool) -> Result<(Tensor, GruCache)> {
        x.expect_rank(2, "gru")?;
        if x.shape()[1] != self.input_dim() {
            return Err(Error::Geometry(format!(
                "gru expects {} features, got {}",
                self.input_dim(),
                x.shape()[1]
            )));
        }
        let (steps, u) = (x.shape()[0], self.units());
        let xz = self.project(x, &self.w_z, &self.b_z);
        let xr = self.project(x, &self.w_r, &self.b_r);
        let xh = self.project(x, &self.w_h, &self.b_h);
        let mut out = Tensor::zeros(&[steps, u]);
        let mut cache = GruCache {
            input: x.clone(),
            reverse,
            h_prev: vec![Vec::new(); steps],
            z: vec![Vec::new(); steps],
            r: vec![Vec::new(); steps],
            n: vec![Vec::new(); steps],
            mix: vec![Vec::new(); steps],
        };
        let mut h = vec![0.0; u];
        for i in 0..steps {
            let t = if reverse { steps - 1 - i } else { i };
            let mut az = xz[t * u..(t + 1) * u].to_vec();
            let mut ar = xr[t * u..(t + 1) * u].to_vec();
            vecmat(&h, self.u_z.data(), u, &mut az);
            vecmat(&h, self.u_r.data(), u, &mut ar);
            if let Some([cz, cr, _]) = &self.recurrent_bias {
                for k in 0..u {
                    az[k] += cz.data()[k];
                    ar[k] += cr.data()[k];
                }
            }
            let z: Vec<f64> = az.iter().map(|&a| sigmoid(a)).collect();
            let r: Vec<f64> = ar.iter().map(|&a| sigmoid(a)).collect();
            let mut ah = xh[t * u..(t + 1) * u].to_vec();
            let mix = match &self.recurrent_bias {
                None => {
                    let q: Vec<f64> = r.iter().zip(&h).map(|(a, b)| a * b).collect();
                    vecmat(&q, self.u_h.data(), u, &mut ah);
                    q
                }
                Some([_, _, ch]) => {
                    let mut s = ch.data().to_vec();
                    vecmat(&h, self.u_h.data(), u, &mut s);
                    for k in 0..u {
                        ah[k] += r[k] * s[k];
                    }
                    s
                }
            };
            let n: Vec<f64> = ah.iter().map(|a| a.tanh()).collect();
            let next: Vec<f64> = (0..u).map(|k| (1.0 - z[k]) * h[k] + z[k] * n[k]).collect();
            out.data_mut()[t * u..(t + 1) * u].copy_from_slice(&next);
            cache.h_prev[t] = std::mem::replace(&mut h, next);
            cache.z[t] = z;
            cache.r[t] = r;
            cache.n[t] = n;
            cache.mix[t] = mix;
        }
        Ok((out, cache))
    }

    /// Backpropagation through time. Parameter gradients follow [`Gru::params`] order.
    pub fn backward(&self, cache: &GruCache, grad: &Tensor) -> Result<(Tensor, Vec<Tensor>)> {
        let (steps, d, u) = (cache.input.shape()[0], self.input_dim(), self.units());
        grad.expect_shape(&[steps, u])?;
        if cache.z.len() != steps {
            return Err(Error::MissingCache("gru".into()));
        }
        let mut gx = Tensor::zeros(&[steps, d]);
        let mut g_wz = vec![0.0; d * u];
        let mut g_wr = vec![0.0; d * u];
        let mut g_wh = vec![0.0; d * u];
        let mut g_uz = vec![0.0; u * u];
        let mut g_ur = vec![0.0; u * u];
        let mut g_uh = vec![0.0; u * u];
        let mut g_bz = vec![0.0; u];
        let mut g_br = vec![0.0; u];
        let mut g_bh = vec![0.0; u];
        let mut g_ch = vec![0.0; u];
        let mut dh_next = vec![0.0; u];
        for i in (0..steps).rev() {
            let t = if cache.reverse { steps - 1 - i } else { i };
            let (hp, z, r, n, mix) = (&cache.h_prev[t], &cache.z[t], &cache.r[t], &cache.n[t], &cache.mix[t]);
            let x = &cache.input.data()[t * d..(t + 1) * d];
            let dh: Vec<f64> = (0..u).map(|k| dh_next[k] + grad.data()[t * u + k]).collect();
            let mut dh_prev: Vec<f64> = (0..u).map(|k| dh[k] * (1.0 - z[k])).collect();
            let da_h: Vec<f64> = (0..u).map(|k| dh[k] * z[k] * (1.0 - n[k] * n[k])).collect();
            let da_z: Vec<f64> = (0..u).map(|k| dh[k] * (n[k] - hp[k]) * z[k] * (1.0 - z[k])).collect();
            let dr: Vec<f64> = match self.variant {
                GruVariant::ResetBefore => {
                    outer_acc(&mut g_uh, mix, &da_h);
                    let mut dq = vec![0.0; u];
                    mat_vec_t(self.u_h.data(), &da_h, &mut dq);
                    for k in 0..u {
                        dh_prev[k] += dq[k] * r[k];
                    }
                    (0..u).map(|k| dq[k] * hp[k]).collect()
                }
                GruVariant::ResetAfter => {
                    let ds: Vec<f64> = (0..u).map(|k| da_h[k] * r[k]).collect();
                    outer_acc(&mut g_uh, hp, &ds);
                    for k in 0..u {
                        g_ch[k] += ds[k];
                    }
                    mat_vec_t(self.u_h.data(), &ds, &mut dh_prev);
                    (0..u).map(|k| da_h[k] * mix[k]).collect()
                }
            };
            let da_r: Vec<f64> = (0..u).map(|k| dr[k] * r[k] * (1.0 - r[k])).collect();

            outer_acc(&mut g_wz, x, &da_z);
            outer_acc(&mut g_wr, x, &da_r);
            outer_acc(&mut g_wh, x, &da_h);
            outer_acc(&mut g_uz, hp, &da_z);
            outer_acc(&mut g_ur, hp, &da_r);
            for k in 0..u {
                g_bz[k] += da_z[k];
                g_br[k] += da_r[k];
                g_bh[k] += da_h[k];
            }
            mat_vec_t(self.u_z.data(), &da_z, &mut dh_prev);
            mat_vec_t(self.u_r.data(), &da_r, &mut dh_prev);
            let gxt = &mut gx.data_mut()[t * d..(t + 1) * d];
            mat_vec_t(self.w_z.data(), &da_z, gxt);
            mat_vec_t(self.w_r.data(), &da_r, gxt);
            mat_vec_t(self.w_h.data(), &da_h, gxt);
            dh_next = dh_prev;
        }
        let mk = |shape: &[usize], v: Vec<f64>| Tensor::from_vec(shape, v).expect("gradient shape");
        let mut grads = vec![
            mk(&[d, u], g_wz),
            mk(&[d, u], g_wr),
            mk(&[d, u], g_wh),
            mk(&[u, u], g_uz),
            mk(&[u, u], g_ur),
            mk(&[u, u], g_uh),
            mk(&[u], g_bz.clone()),
            mk(&[u], g_br.clone()),
            mk(&[u], g_bh),
        ];
        if self.recurrent_bias.is_some() {
            // the recurrent z/r biases enter exactly like the input biases
            grads.push(mk(&[u], g_bz));
            grads.push(mk(&[u], g_br));
            grads.push(mk(&[u], g_ch));
        }
        Ok((gx, grads))
    }

    pub fn params(&self) -> Vec<(&'static str, &Tensor)> {
        let mut p = vec![
            ("w_z", &self.w_z),
            ("w_r", &self.w_r),
            ("w_h", &self.w_h),
            ("u_z", &self.u_z),
            ("u_r", &self.u_r),
            ("u_h", &self.u_h),
            ("b_z", &self.b_z),
            ("b_r", &self.b_r),
            ("b_h", &self.b_h),
        ];
        if let Some([cz, cr, ch]) = &self.recurrent_bias {
            p.extend([("c_z", cz), ("c_r", cr), ("c_h", ch)]);
        }
        p
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        let mut p = vec![
            &mut self.w_z,
            &mut self.w_r,
            &mut self.w_h,
            &mut self.u_z,
            &mut self.u_r,
            &mut self.u_h,
            &mut self.b_z,
            &mut self.b_r,
            &mut self.b_h,
        ];
        if let Some([cz, cr, ch]) = &mut self.recurrent_bias {
            p.extend([cz, cr, ch]);
        }
        p
    }
}

/// Runs `layer` over `x`; `reverse` consumes the sequence back to front.
pub fn gru_sequence(x: &Tensor, layer: &Gru, reverse: bool) -> Result<Tensor> {
    Ok(layer.forward(x, reverse)?.0)
}

/// Bidirectional GRU: forward and backward outputs concatenated per timestep.
#[derive(Clone, Debug, PartialEq)]
pub struct Bgru {
    pub forward: Gru,
    pub backward: Gru,
}

#[derive(Clone, Debug)]
pub struct BgruCache {
    fwd: GruCache,
    bwd: GruCache,
}

impl Bgru {
    pub fn new(forward: Gru, backward: Gru) -> Result<Self> {
        forward.validate()?;
        backward.validate()?;
        if forward.units() != backward.units() || forward.input_dim() != backward.input_dim() {
            return Err(Error::Geometry(format!(
                "bgru directions disagree: {}x{} vs {}x{}",
                forward.input_dim(),
                forward.units(),
                backward.input_dim(),
                backward.units()
            )));
        }
        Ok(Bgru { forward, backward })
    }

    pub fn units(&self) -> usize {
        self.forward.units()
    }

    pub fn run(&self, x: &Tensor) -> Result<(Tensor, BgruCache)> {
        let (f, fc) = self.forward.forward(x, false)?;
        let (b, bc) = self.backward.forward(x, true)?;
        let (t, u) = (x.shape()[0], self.units());
        let mut out = Tensor::zeros(&[t, 2 * u]);
        for s in 0..t {
            out.data_mut()[s * 2 * u..s * 2 * u + u].copy_from_slice(f.row(s));
            out.data_mut()[s * 2 * u + u..(s + 1) * 2 * u].copy_from_slice(b.row(s));
        }
        Ok((out, BgruCache { fwd: fc, bwd: bc }))
    }

    /// Parameter gradients: forward direction first, then backward.
    pub fn backward_pass(&self, cache: &BgruCache, grad: &Tensor) -> Result<(Tensor, Vec<Tensor>)> {
        let u = self.units();
        let t = grad.shape()[0];
        grad.expect_shape(&[t, 2 * u])?;
        let mut gf = Tensor::zeros(&[t, u]);
        let mut gb = Tensor::zeros(&[t, u]);
        for s in 0..t {
            gf.data_mut()[s * u..(s + 1) * u].copy_from_slice(&grad.row(s)[..u]);
            gb.data_mut()[s * u..(s + 1) * u].copy_from_slice(&grad.row(s)[u..]);
        }
        let (mut gx, mut grads) = self.forward.backward(&cache.fwd, &gf)?;
        let (gx2, grads2) = self.backward.backward(&cache.bwd, &gb)?;
        gx.add_assign(&gx2);
        grads.extend(grads2);
        Ok((gx, grads))
    }

    pub fn params(&self) -> Vec<(&'static str, &Tensor)> {
        let mut p = self.forward.params();
        p.extend(self.backward.params());
        p
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        let mut p = self.forward.params_mut();
        p.extend(self.backward.params_mut());
        p
    }
}

/// `concat(gru(x, fwd), gru_reversed(x, bwd))` along the feature axis.
pub fn bgru(x: &Tensor, fwd: &Gru, bwd: &Gru) -> Result<Tensor> {
    Ok(Bgru::new(fwd.clone(), bwd.clone())?.run(x)?.0)
}
