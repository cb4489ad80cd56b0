//! Spline-edge layers: every edge `(j, p)` carries its own learnable
//! activation `φ(x) = w_b·SiLU(x) + w_s·Σ_i c_i B_i(x)` and output `j` is the
//! plain sum `Σ_p φ_{j,p}(x_p)`.
//!
//! Parameters are stored flat, edge by edge, as `[c_0 .. c_{G+k-1}, w_b, w_s]`
//! with edge `(j, p)` at offset `(j * n_in + p) * (G + k + 2)`. The same layout
//! is used for gradients.

use crate::error::{Error, Result};
use crate::numerics::{matmul_acc, matmul_at_b_acc, silu, silu_deriv, Rng, Tensor};
use crate::spline::{ActiveBasis, KnotGrid};

/// One learnable univariate function.
#[derive(Debug, Clone, PartialEq)]
pub struct SplineEdge {
    pub coef: Vec<f64>,
    pub w_base: f64,
    pub w_spline: f64,
}

impl SplineEdge {
    pub fn zeros(grid: &KnotGrid) -> Self {
        SplineEdge {
            coef: vec![0.0; grid.num_basis()],
            w_base: 0.0,
            w_spline: 0.0,
        }
    }
}

pub fn phi_eval(edge: &SplineEdge, grid: &KnotGrid, x: f64) -> Result<f64> {
    if edge.coef.len() != grid.num_basis() {
        return Err(Error::InvalidShape(format!(
            "edge has {} coefficients, grid has {} basis functions",
            edge.coef.len(),
            grid.num_basis()
        )));
    }
    if !(edge.w_base.is_finite() && edge.w_spline.is_finite())
        || edge.coef.iter().any(|c| !c.is_finite())
    {
        return Err(Error::InvalidState("non-finite edge parameter".into()));
    }
    let a = grid.active(x)?;
    let spline: f64 = (0..a.len).map(|r| edge.coef[a.start + r] * a.values[r]).sum();
    Ok(edge.w_base * silu(x) + edge.w_spline * spline)
}

/// Widths and grid of one layer; the parameters live elsewhere.
#[derive(Debug, Clone, PartialEq)]
pub struct KanSpec {
    pub n_in: usize,
    pub n_out: usize,
    pub grid: KnotGrid,
}

/// Per-row quantities the backward pass needs.
///
/// `features` is the dense `[batch, n_in·(G+k+1)]` matrix holding, for each
/// input `p`, the basis values `B_i(x_p)` followed by `SiLU(x_p)`; the layer
/// output is that matrix times the edge weights.
#[derive(Debug, Clone)]
pub struct KanLayerCache {
    batch: usize,
    features: Vec<f64>,
    dsilu: Vec<f64>,
    basis: Vec<ActiveBasis>,
}

impl KanSpec {
    pub fn edge_stride(&self) -> usize {
        self.grid.num_basis() + 2
    }

    pub fn param_len(&self) -> usize {
        self.n_in * self.n_out * self.edge_stride()
    }

    pub fn edge_offset(&self, j: usize, p: usize) -> usize {
        (j * self.n_in + p) * self.edge_stride()
    }

    fn feature_width(&self) -> usize {
        self.n_in * (self.grid.num_basis() + 1)
    }

    /// Edge weights as a `[n_in·(G+k+1), n_out]` matrix: `w_s·c_i` rows then
    /// a `w_b` row per input.
    fn weight_matrix(&self, params: &[f64]) -> Vec<f64> {
        let nb = self.grid.num_basis();
        let stride = self.edge_stride();
        let mut w = vec![0.0; self.feature_width() * self.n_out];
        for j in 0..self.n_out {
            for p in 0..self.n_in {
                let e = &params[(j * self.n_in + p) * stride..][..stride];
                let base = p * (nb + 1);
                for i in 0..nb {
                    w[(base + i) * self.n_out + j] = e[nb + 1] * e[i];
                }
                w[(base + nb) * self.n_out + j] = e[nb];
            }
        }
        w
    }

    /// Forward over `batch` rows of width `n_in`.
    pub fn forward(
        &self,
        params: &[f64],
        x: &[f64],
        batch: usize,
    ) -> Result<(Vec<f64>, KanLayerCache)> {
        if x.len() != batch * self.n_in {
            return Err(Error::InvalidShape(format!(
                "layer expects {} inputs per row, got {} values for {batch} rows",
                self.n_in,
                x.len()
            )));
        }
        debug_assert_eq!(params.len(), self.param_len());
        let nb = self.grid.num_basis();
        let width = self.feature_width();
        let mut features = vec![0.0; batch * width];
        let mut dsilu = Vec::with_capacity(x.len());
        let mut basis = Vec::with_capacity(x.len());
        for (idx, &v) in x.iter().enumerate() {
            let (r, p) = (idx / self.n_in, idx % self.n_in);
            let a = self.grid.active(v)?;
            let row = &mut features[r * width + p * (nb + 1)..][..nb + 1];
            row[a.start..a.start + a.len].copy_from_slice(&a.values[..a.len]);
            row[nb] = silu(v);
            dsilu.push(silu_deriv(v));
            basis.push(a);
        }
        let w = self.weight_matrix(params);
        let mut out = vec![0.0; batch * self.n_out];
        matmul_acc(&features, &w, &mut out, batch, width, self.n_out);
        Ok((
            out,
            KanLayerCache {
                batch,
                features,
                dsilu,
                basis,
            },
        ))
    }

    /// Accumulates parameter gradients into `grad_params` and returns the
    /// input gradient. Rows are reduced in index order.
    pub fn backward(
        &self,
        params: &[f64],
        cache: &KanLayerCache,
        grad_out: &[f64],
        grad_params: &mut [f64],
    ) -> Result<Vec<f64>> {
        let batch = cache.batch;
        if grad_out.len() != batch * self.n_out || cache.basis.len() != batch * self.n_in {
            return Err(Error::InvalidShape("gradient does not match cached forward".into()));
        }
        debug_assert_eq!(grad_params.len(), self.param_len());
        let nb = self.grid.num_basis();
        let stride = self.edge_stride();
        let width = self.feature_width();
        let n_out = self.n_out;

        // weight-matrix gradient, then chain into (c, w_b, w_s)
        let mut gw = vec![0.0; width * n_out];
        matmul_at_b_acc(&cache.features, grad_out, &mut gw, batch, width, n_out);
        for j in 0..n_out {
            for p in 0..self.n_in {
                let off = (j * self.n_in + p) * stride;
                let e = &params[off..off + stride];
                let ge = &mut grad_params[off..off + stride];
                let base = p * (nb + 1);
                let mut gws = 0.0;
                for i in 0..nb {
                    let g = gw[(base + i) * n_out + j];
                    ge[i] += e[nb + 1] * g;
                    gws += e[i] * g;
                }
                ge[nb] += gw[(base + nb) * n_out + j];
                ge[nb + 1] += gws;
            }
        }

        // input gradient through the active basis derivatives and SiLU'
        let w = self.weight_matrix(params);
        let dot = |g: &[f64], l: usize| -> f64 {
            g.iter().zip(&w[l * n_out..(l + 1) * n_out]).map(|(a, b)| a * b).sum()
        };
        let mut grad_in = vec![0.0; batch * self.n_in];
        for r in 0..batch {
            let g = &grad_out[r * n_out..(r + 1) * n_out];
            for p in 0..self.n_in {
                let idx = r * self.n_in + p;
                let a = &cache.basis[idx];
                let base = p * (nb + 1);
                let mut acc = dot(g, base + nb) * cache.dsilu[idx];
                for q in 0..a.len {
                    if a.derivs[q] != 0.0 {
                        acc += dot(g, base + a.start + q) * a.derivs[q];
                    }
                }
                grad_in[idx] = acc;
            }
        }
        Ok(grad_in)
    }

    /// Hierarchical names of every parameter tensor, in storage order:
    /// `asd.layer{L}.edge{j}.{p}.{c|wb|ws}`.
    pub fn param_names(&self, layer: usize) -> Vec<(String, Vec<usize>)> {
        let nb = self.grid.num_basis();
        let mut names = Vec::with_capacity(3 * self.n_in * self.n_out);
        for j in 0..self.n_out {
            for p in 0..self.n_in {
                let base = format!("asd.layer{layer}.edge{j}.{p}");
                names.push((format!("{base}.c"), vec![nb]));
                names.push((format!("{base}.wb"), vec![1]));
                names.push((format!("{base}.ws"), vec![1]));
            }
        }
        names
    }

    /// Fills `params` with the given base/spline weights and Gaussian
    /// coefficients of standard deviation `coef_std`.
    pub fn init_params(
        &self,
        rng: &mut Rng,
        params: &mut [f64],
        mut w_base: impl FnMut(&mut Rng) -> f64,
        w_spline: f64,
        coef_std: f64,
    ) {
        let nb = self.grid.num_basis();
        for e in params.chunks_exact_mut(self.edge_stride()) {
            for c in &mut e[..nb] {
                *c = coef_std * rng.gaussian();
            }
            e[nb] = w_base(rng);
            e[nb + 1] = w_spline;
        }
    }
}

/// A layer with owned parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct KanLayer {
    spec: KanSpec,
    params: Vec<f64>,
}

impl KanLayer {
    pub fn zeros(n_in: usize, n_out: usize, grid: KnotGrid) -> Self {
        let spec = KanSpec { n_in, n_out, grid };
        let params = vec![0.0; spec.param_len()];
        KanLayer { spec, params }
    }

    pub fn spec(&self) -> &KanSpec {
        &self.spec
    }

    pub fn n_in(&self) -> usize {
        self.spec.n_in
    }

    pub fn n_out(&self) -> usize {
        self.spec.n_out
    }

    pub fn grid(&self) -> &KnotGrid {
        &self.spec.grid
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn edge(&self, j: usize, p: usize) -> SplineEdge {
        let nb = self.spec.grid.num_basis();
        let e = &self.params[self.spec.edge_offset(j, p)..][..nb + 2];
        SplineEdge {
            coef: e[..nb].to_vec(),
            w_base: e[nb],
            w_spline: e[nb + 1],
        }
    }

    pub fn set_edge(&mut self, j: usize, p: usize, edge: &SplineEdge) {
        let nb = self.spec.grid.num_basis();
        assert_eq!(edge.coef.len(), nb);
        let off = self.spec.edge_offset(j, p);
        let e = &mut self.params[off..off + nb + 2];
        e[..nb].copy_from_slice(&edge.coef);
        e[nb] = edge.w_base;
        e[nb + 1] = edge.w_spline;
    }
}

/// Stack of layers realizing the outer/inner composition.
#[derive(Debug, Clone, PartialEq)]
pub struct KanNetwork {
    layers: Vec<KanLayer>,
    revision: u64,
}

/// Activation record from [`kan_forward`].
#[derive(Debug, Clone)]
pub struct KanCache {
    revision: u64,
    batch: usize,
    layers: Vec<KanLayerCache>,
}

impl KanNetwork {
    pub fn new(layers: Vec<KanLayer>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::InvalidShape("network needs at least one layer".into()));
        }
        for w in layers.windows(2) {
            if w[0].n_out() != w[1].n_in() {
                return Err(Error::InvalidShape(format!(
                    "layer widths do not chain: {} -> {}",
                    w[0].n_out(),
                    w[1].n_in()
                )));
            }
        }
        Ok(KanNetwork {
            layers,
            revision: 0,
        })
    }

    pub fn layers(&self) -> &[KanLayer] {
        &self.layers
    }

    /// Mutable access invalidates any outstanding [`KanCache`].
    pub fn layer_mut(&mut self, i: usize) -> &mut KanLayer {
        self.revision += 1;
        &mut self.layers[i]
    }

    pub fn n_in(&self) -> usize {
        self.layers[0].n_in()
    }

    pub fn n_out(&self) -> usize {
        self.layers[self.layers.len() - 1].n_out()
    }

    pub fn num_params(&self) -> usize {
        self.layers.iter().map(|l| l.params.len()).sum()
    }

    /// Same architecture, all parameters zero. Used as the gradient container.
    pub fn zeros_like(&self) -> KanNetwork {
        KanNetwork {
            layers: self
                .layers
                .iter()
                .map(|l| KanLayer::zeros(l.n_in(), l.n_out(), l.grid().clone()))
                .collect(),
            revision: 0,
        }
    }
}

pub fn kan_forward(net: &KanNetwork, v: &Tensor) -> Result<(Tensor, KanCache)> {
    let (batch, width) = match v.shape() {
        &[b, n] => (b, n),
        s => return Err(Error::InvalidShape(format!("expected [batch, n], got {s:?}"))),
    };
    if width != net.n_in() {
        return Err(Error::InvalidShape(format!(
            "network input width {} but got {width}",
            net.n_in()
        )));
    }
    let mut cur = v.data().to_vec();
    let mut caches = Vec::with_capacity(net.layers.len());
    for layer in &net.layers {
        let (out, cache) = layer.spec.forward(&layer.params, &cur, batch)?;
        caches.push(cache);
        cur = out;
    }
    let out = Tensor::new(vec![batch, net.n_out()], cur)?;
    Ok((
        out,
        KanCache {
            revision: net.revision,
            batch,
            layers: caches,
        },
    ))
}

/// Returns the input gradient and a network-shaped container of parameter
/// gradients.
pub fn kan_backward(
    net: &KanNetwork,
    cache: &KanCache,
    grad_out: &Tensor,
) -> Result<(Tensor, KanNetwork)> {
    if cache.revision != net.revision || cache.layers.len() != net.layers.len() {
        return Err(Error::InvalidState(
            "activation cache does not belong to the current parameters".into(),
        ));
    }
    grad_out.expect_shape(&[cache.batch, net.n_out()], "kan_backward grad_out")?;
    let mut grads = net.zeros_like();
    let mut g = grad_out.data().to_vec();
    for (i, layer) in net.layers.iter().enumerate().rev() {
        g = layer
            .spec
            .backward(&layer.params, &cache.layers[i], &g, &mut grads.layers[i].params)?;
    }
    Ok((Tensor::new(vec![cache.batch, net.n_in()], g)?, grads))
}

/// `w_b = 1`, `w_s = 1`, `c_i ~ N(0, 0.1²) / n_in`.
pub fn init_kan(rng: &mut Rng, widths: &[usize], grid: &KnotGrid) -> Result<KanNetwork> {
    if widths.len() < 2 {
        return Err(Error::InvalidShape("init_kan needs at least two widths".into()));
    }
    let layers = widths
        .windows(2)
        .map(|w| {
            let mut layer = KanLayer::zeros(w[0], w[1], grid.clone());
            let spec = layer.spec.clone();
            spec.init_params(rng, &mut layer.params, |_| 1.0, 1.0, 0.1 / w[0] as f64);
            layer
        })
        .collect();
    KanNetwork::new(layers)
}
