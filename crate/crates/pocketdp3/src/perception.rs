//! Point-cloud downsampling, scene encoding, and denoising-context assembly.

use crate::error::{Error, Result};
use crate::numerics::{Array, Graph, ParamId, ParamStore, RngStream, Scalar, Var};

/// Encoder output dimension (the compact scene feature z).
pub const Z_DIM: usize = 64;
/// Sinusoidal timestep embedding width.
pub const T_EMBED_DIM: usize = 64;
/// Per-point MLP widths after the 3-d input.
pub const ENC_WIDTHS: [usize; 3] = [64, 128, 256];
/// Default farthest-point-sampling target when a run config does not
/// override it.
pub const DEFAULT_FPS_POINTS: usize = 512;

/// XYZ points in the robot frame.
#[derive(Clone, Debug, PartialEq)]
pub struct PointCloud {
    pts: Vec<[f32; 3]>,
}

impl PointCloud {
    pub fn new(pts: Vec<[f32; 3]>) -> Result<Self> {
        if pts.is_empty() {
            return Err(Error::Config("point cloud needs at least one point".into()));
        }
        if pts.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("point cloud coordinate".into()));
        }
        Ok(PointCloud { pts })
    }

    pub fn len(&self) -> usize {
        self.pts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pts.is_empty()
    }

    pub fn points(&self) -> &[[f32; 3]] {
        &self.pts
    }

    pub fn to_array<T: Scalar>(&self) -> Array<T> {
        let mut a = Array::zeros(&[self.pts.len(), 3]);
        for (i, p) in self.pts.iter().enumerate() {
            for j in 0..3 {
                *a.at_mut(i, j) = T::from_f64(p[j] as f64);
            }
        }
        a
    }
}

/// Joint/agent state vector, task units.
#[derive(Clone, Debug, PartialEq)]
pub struct ProprioState {
    values: Vec<f32>,
}

impl ProprioState {
    pub fn new(values: Vec<f32>) -> Result<Self> {
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("proprio state".into()));
        }
        Ok(ProprioState { values })
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn to_array<T: Scalar>(&self) -> Array<T> {
        let mut a = Array::zeros(&[1, self.values.len()]);
        for (j, v) in self.values.iter().enumerate() {
            *a.at_mut(0, j) = T::from_f64(*v as f64);
        }
        a
    }
}

/// Greedy maximin subset selection: seed is index 0, each subsequent pick
/// maximizes its minimum squared distance to the selected set, ties resolve
/// to the lowest index. Points come back in selection order.
pub fn fps(cloud: &PointCloud, k: usize) -> Result<PointCloud> {
    let n = cloud.len();
    if k == 0 || k > n {
        return Err(Error::Config(format!("fps k {k} out of range [1, {n}]")));
    }
    let pts = cloud.points();
    let mut selected = Vec::with_capacity(k);
    let mut min_d2 = vec![f64::INFINITY; n];
    let mut current = 0usize;
    selected.push(pts[0]);
    for _ in 1..k {
        let cp = pts[current];
        let mut best = f64::NEG_INFINITY;
        let mut best_i = 0usize;
        for (i, p) in pts.iter().enumerate() {
            let dx = (p[0] - cp[0]) as f64;
            let dy = (p[1] - cp[1]) as f64;
            let dz = (p[2] - cp[2]) as f64;
            let d2 = dx * dx + dy * dy + dz * dz;
            if d2 < min_d2[i] {
                min_d2[i] = d2;
            }
            if min_d2[i] > best {
                best = min_d2[i];
                best_i = i;
            }
        }
        current = best_i;
        selected.push(pts[current]);
    }
    PointCloud::new(selected)
}

fn kaiming(store: &mut ParamStore<impl Scalar>, name: &str, fan_in: usize, fan_out: usize, gelu: bool, rng: &mut RngStream) -> ParamId {
    let gain = if gelu { 2.0 } else { 1.0 };
    let std = (gain / fan_in as f64).sqrt();
    store.add_normal(name, &[fan_in, fan_out], std, rng)
}

/// Per-point MLP + max-pool + linear projection producing the scene feature.
#[derive(Clone, Debug)]
pub struct SceneEncoder {
    layers: Vec<(ParamId, ParamId)>,
    proj: (ParamId, ParamId),
}

impl SceneEncoder {
    pub fn build<T: Scalar>(store: &mut ParamStore<T>, rng: &mut RngStream) -> Self {
        let mut layers = Vec::new();
        let mut fan_in = 3;
        for (i, &w) in ENC_WIDTHS.iter().enumerate() {
            let wid = kaiming(store, &format!("encoder/l{i}/w"), fan_in, w, true, rng);
            let bid = store.add_zeros(&format!("encoder/l{i}/b"), &[w]);
            layers.push((wid, bid));
            fan_in = w;
        }
        let pw = kaiming(store, "encoder/proj/w", fan_in, Z_DIM, false, rng);
        let pb = store.add_zeros("encoder/proj/b", &[Z_DIM]);
        SceneEncoder {
            layers,
            proj: (pw, pb),
        }
    }

    /// Encode a (downsampled) cloud into a `[1, Z_DIM]` feature.
    pub fn forward<T: Scalar>(&self, g: &mut Graph<'_, T>, cloud: &PointCloud) -> Result<Var> {
        let mut h = g.input(cloud.to_array());
        for (i, (w, b)) in self.layers.iter().enumerate() {
            let wv = g.param(*w);
            let bv = g.param(*b);
            h = g.affine(h, wv, bv)?;
            if i + 1 < self.layers.len() {
                h = g.gelu(h);
            }
        }
        let pooled = g.max_rows(h)?;
        let pw = g.param(self.proj.0);
        let pb = g.param(self.proj.1);
        g.affine(pooled, pw, pb)
    }
}

/// Raw sinusoidal embedding of an integer timestep: `[sin block | cos block]`
/// over a geometric frequency ladder.
pub fn timestep_sinusoid(t: usize, t_steps: usize) -> Result<Vec<f64>> {
    if t >= t_steps {
        return Err(Error::Config(format!(
            "timestep {t} out of range [0, {t_steps})"
        )));
    }
    let half = T_EMBED_DIM / 2;
    let mut out = vec![0.0f64; T_EMBED_DIM];
    for i in 0..half {
        let omega = (-(10_000.0f64.ln()) * i as f64 / (half - 1) as f64).exp();
        let phase = t as f64 * omega;
        out[i] = phase.sin();
        out[half + i] = phase.cos();
    }
    Ok(out)
}

/// How per-frame fused features combine across observation steps.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ObsFusion {
    Concat,
    Sum,
}

impl std::str::FromStr for ObsFusion {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "concat" => Ok(ObsFusion::Concat),
            "sum" => Ok(ObsFusion::Sum),
            other => Err(Error::Config(format!("unknown obs fusion '{other}'"))),
        }
    }
}

/// Builds the denoising context: per frame `z + Linear(s)`, fused across
/// frames, timestep embedding appended, projected to `cond_dim`.
#[derive(Clone, Debug)]
pub struct ContextNet {
    pub n_obs: usize,
    pub state_dim: usize,
    pub cond_dim: usize,
    pub fusion: ObsFusion,
    proprio: (ParamId, ParamId),
    t_mlp: [(ParamId, ParamId); 2],
    proj: (ParamId, ParamId),
}

impl ContextNet {
    pub fn build<T: Scalar>(
        store: &mut ParamStore<T>,
        n_obs: usize,
        state_dim: usize,
        cond_dim: usize,
        fusion: ObsFusion,
        rng: &mut RngStream,
    ) -> Self {
        let pw = kaiming(store, "context/proprio/w", state_dim, Z_DIM, false, rng);
        let pb = store.add_zeros("context/proprio/b", &[Z_DIM]);
        let t1w = kaiming(store, "context/tmlp0/w", T_EMBED_DIM, 256, true, rng);
        let t1b = store.add_zeros("context/tmlp0/b", &[256]);
        let t2w = kaiming(store, "context/tmlp1/w", 256, T_EMBED_DIM, false, rng);
        let t2b = store.add_zeros("context/tmlp1/b", &[T_EMBED_DIM]);
        let in_dim = Self::pre_projection_dim(n_obs, fusion);
        let cw = kaiming(store, "context/proj/w", in_dim, cond_dim, false, rng);
        let cb = store.add_zeros("context/proj/b", &[cond_dim]);
        ContextNet {
            n_obs,
            state_dim,
            cond_dim,
            fusion,
            proprio: (pw, pb),
            t_mlp: [(t1w, t1b), (t2w, t2b)],
            proj: (cw, cb),
        }
    }

    pub fn pre_projection_dim(n_obs: usize, fusion: ObsFusion) -> usize {
        match fusion {
            ObsFusion::Concat => Z_DIM * n_obs + T_EMBED_DIM,
            ObsFusion::Sum => Z_DIM + T_EMBED_DIM,
        }
    }

    /// Embed `t` and run it through the two-layer MLP; `[1, T_EMBED_DIM]`.
    pub fn timestep_embed<T: Scalar>(
        &self,
        g: &mut Graph<'_, T>,
        t: usize,
        t_steps: usize,
    ) -> Result<Var> {
        let sin = timestep_sinusoid(t, t_steps)?;
        let arr = Array::from_vec(
            &[1, T_EMBED_DIM],
            sin.iter().map(|&x| T::from_f64(x)).collect(),
        )?;
        let mut h = g.input(arr);
        let (w0, b0) = self.t_mlp[0];
        let w0v = g.param(w0);
        let b0v = g.param(b0);
        h = g.affine(h, w0v, b0v)?;
        h = g.gelu(h);
        let (w1, b1) = self.t_mlp[1];
        let w1v = g.param(w1);
        let b1v = g.param(b1);
        g.affine(h, w1v, b1v)
    }

    /// Fuse already-encoded per-frame scene features with proprio states and
    /// the timestep embedding. `zs[i]` must be `[1, Z_DIM]`, oldest first.
    pub fn fuse<T: Scalar>(
        &self,
        g: &mut Graph<'_, T>,
        zs: &[Var],
        proprios: &[&ProprioState],
        t: usize,
        t_steps: usize,
    ) -> Result<Var> {
        if zs.len() != self.n_obs || proprios.len() != self.n_obs {
            return Err(Error::Config(format!(
                "context wants {} observation frames, got {}",
                self.n_obs,
                zs.len().min(proprios.len())
            )));
        }
        let mut fused = Vec::with_capacity(self.n_obs);
        for (z, s) in zs.iter().zip(proprios) {
            if s.dim() != self.state_dim {
                return Err(Error::Config(format!(
                    "proprio dim {} != configured {}",
                    s.dim(),
                    self.state_dim
                )));
            }
            let sv = g.input(s.to_array());
            let pw = g.param(self.proprio.0);
            let pb = g.param(self.proprio.1);
            let proj = g.affine(sv, pw, pb)?;
            fused.push(g.add(*z, proj)?);
        }
        let mut combined = fused[0];
        for f in &fused[1..] {
            combined = match self.fusion {
                ObsFusion::Concat => g.concat_cols(combined, *f)?,
                ObsFusion::Sum => g.add(combined, *f)?,
            };
        }
        let temb = self.timestep_embed(g, t, t_steps)?;
        let cat = g.concat_cols(combined, temb)?;
        let cw = g.param(self.proj.0);
        let cb = g.param(self.proj.1);
        g.affine(cat, cw, cb)
    }

    /// Encode frames and fuse in one go (training path).
    pub fn forward<T: Scalar>(
        &self,
        g: &mut Graph<'_, T>,
        encoder: &SceneEncoder,
        frames: &[(PointCloud, ProprioState)],
        t: usize,
        t_steps: usize,
    ) -> Result<Var> {
        if frames.len() != self.n_obs {
            return Err(Error::Config(format!(
                "context wants {} observation frames, got {}",
                self.n_obs,
                frames.len()
            )));
        }
        let mut zs = Vec::with_capacity(frames.len());
        for (cloud, _) in frames {
            zs.push(encoder.forward(g, cloud)?);
        }
        let proprios: Vec<&ProprioState> = frames.iter().map(|(_, s)| s).collect();
        self.fuse(g, &zs, &proprios, t, t_steps)
    }
}
