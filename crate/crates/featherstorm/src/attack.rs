//! Attack configuration, gradient-aggregated weight matrices, the weighted
//! feature objective, and the momentum iterative update.

use serde::{Deserialize, Serialize};

use crate::data::{DatasetHandle, ImageTensor};
use crate::error::{Error, Result};
use crate::frequency::{corner_sigma_default, dct2, hf_corner_noise, self_mix};
use crate::graph::{Graph, NodeId};
use crate::model::ModelCheckpoint;
use crate::rng::RandomStream;
use crate::tensor::Tensor;
use crate::transforms::{block_mix, mixed_probe, pixel_drop};

/// Attack family selector.
///
/// `MimCe` ascends the cross-entropy loss directly. The feature variants
/// first aggregate a weight matrix from probe-transform loss gradients, then
/// ascend the weighted feature objective — pushing the surrogate's
/// intermediate activations further along the directions that already raise
/// its loss: `Fia` probes with pixel dropping,
/// `Safer` with block+spectrum mixing, the two `Safer*Only` variants with a
/// single half of that pipeline, and `HfNoise` with corner noise in the
/// spectrum.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Variant {
    MimCe,
    Fia,
    Safer,
    SaferBlockmixOnly,
    SaferSelfmixOnly,
    HfNoise,
}

impl Variant {
    pub const ALL: [Variant; 6] = [
        Variant::MimCe,
        Variant::Fia,
        Variant::Safer,
        Variant::SaferBlockmixOnly,
        Variant::SaferSelfmixOnly,
        Variant::HfNoise,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Variant::MimCe => "MIM_CE",
            Variant::Fia => "FIA",
            Variant::Safer => "SAFER",
            Variant::SaferBlockmixOnly => "SAFER_BLOCKMIX_ONLY",
            Variant::SaferSelfmixOnly => "SAFER_SELFMIX_ONLY",
            Variant::HfNoise => "HF_NOISE",
        }
    }
}

impl std::fmt::Display for Variant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Variant> {
        Variant::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| Error::UnknownVariant(s.to_string()))
    }
}

/// Every scalar knob of the attack loop and its probe transforms.
///
/// The two μ symbols that collide in the source algorithm are split:
/// `momentum_decay` scales the accumulated gradient, `mix_mu` is the
/// spectral mixing strength.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AttackConfig {
    pub variant: Variant,
    /// L∞ budget in [0,1] pixel units (16/255 by default).
    pub epsilon: f64,
    /// Iteration count T.
    pub steps: usize,
    /// Per-step size α (defaults to epsilon / steps).
    pub alpha: f64,
    /// Momentum decay on the accumulated gradient.
    pub momentum_decay: f64,
    /// Number of transformed copies N aggregated into the weight matrix.
    pub ensemble_n: usize,
    /// Blocks per axis for block mixing.
    pub n_b: usize,
    /// Probability of keeping a block from x (donor block otherwise).
    pub keep_p: f64,
    /// Spectral mixing strength.
    pub mix_mu: f64,
    /// Rotation-angle range for spectral mixing, radians.
    pub beta_min: f64,
    pub beta_max: f64,
    /// Corner size for the HF_NOISE probe.
    pub tau: usize,
    /// Noise scale for the HF_NOISE probe; absent means a tenth of the mean
    /// absolute corner coefficient, computed per probe.
    pub hf_sigma: Option<f64>,
    /// Pixel drop probability for the FIA probe.
    pub p_d: f64,
    /// Feature tap the weight matrix and objective attach to.
    pub tap: String,
}

impl AttackConfig {
    /// Published defaults with the given variant selected.
    pub fn default_for(variant: Variant) -> AttackConfig {
        AttackConfig {
            variant,
            epsilon: 16.0 / 255.0,
            steps: 10,
            alpha: 1.6 / 255.0,
            momentum_decay: 1.0,
            ensemble_n: 30,
            n_b: 5,
            keep_p: 0.9,
            mix_mu: 0.4,
            beta_min: -std::f64::consts::FRAC_PI_4,
            beta_max: std::f64::consts::FRAC_PI_4,
            tau: 8,
            hf_sigma: None,
            p_d: 0.3,
            tap: "mid".to_string(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let check = |ok: bool, msg: &str| {
            if ok {
                Ok(())
            } else {
                Err(Error::Config(msg.to_string()))
            }
        };
        check(
            self.epsilon > 0.0 && self.epsilon <= 1.0,
            "epsilon must be in (0, 1]",
        )?;
        check(self.alpha > 0.0, "alpha must be positive")?;
        check(self.steps >= 1, "steps must be >= 1")?;
        check(self.ensemble_n >= 1, "ensemble_n must be >= 1")?;
        check(self.momentum_decay >= 0.0, "momentum_decay must be >= 0")?;
        check(self.n_b >= 1, "n_b must be >= 1")?;
        check(
            (0.0..=1.0).contains(&self.keep_p),
            "keep_p must be in [0, 1]",
        )?;
        check(
            (0.0..=1.0).contains(&self.mix_mu),
            "mix_mu must be in [0, 1]",
        )?;
        check((0.0..=1.0).contains(&self.p_d), "p_d must be in [0, 1]")?;
        check(
            self.beta_min <= self.beta_max,
            "beta_min must not exceed beta_max",
        )?;
        check(
            self.beta_min >= -std::f64::consts::PI && self.beta_max <= std::f64::consts::PI,
            "beta range must lie within [-pi, pi]",
        )?;
        check(self.tau >= 1, "tau must be >= 1")?;
        if let Some(sigma) = self.hf_sigma {
            check(sigma >= 0.0, "hf_sigma must be >= 0")?;
        }
        check(!self.tap.is_empty(), "tap name must not be empty")?;
        Ok(())
    }
}

/// Normalized sum of tap gradients over probe copies, with `‖Δ‖_F = 1`.
#[derive(Debug, Clone)]
pub struct WeightMatrix {
    pub delta: Tensor,
    pub tap: String,
    pub copies_used: usize,
}

/// One attacked image: the adversarial pixels plus bookkeeping.
#[derive(Debug, Clone)]
pub struct AdversarialResult {
    pub x_adv: Tensor,
    pub original_id: usize,
    /// Surrogate forward/backward passes spent (aggregation copies plus
    /// one per update step).
    pub queries: usize,
    pub linf: f64,
}

fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Build the probe copy for one aggregation pass of `cfg.variant`.
fn probe_copy(
    image: &ImageTensor,
    data: &DatasetHandle,
    cfg: &AttackConfig,
    hf_sigma: f64,
    rng: &mut RandomStream,
) -> Result<Tensor> {
    match cfg.variant {
        Variant::Safer => mixed_probe(image, data, cfg, rng),
        Variant::SaferBlockmixOnly => {
            let donor = data.sample_donor(image.label, rng)?.clone();
            Ok(block_mix(image, &donor, cfg.n_b, cfg.keep_p, rng)?.pixels)
        }
        Variant::SaferSelfmixOnly => {
            let beta = rng.uniform_in(cfg.beta_min, cfg.beta_max);
            self_mix(&image.pixels, cfg.mix_mu, beta)
        }
        Variant::Fia => Ok(pixel_drop(image, cfg.p_d, rng)?.pixels),
        Variant::HfNoise => hf_corner_noise(&image.pixels, cfg.tau, hf_sigma, rng),
        Variant::MimCe => Err(Error::InvalidArgument(
            "MIM_CE aggregates no weight matrix".into(),
        )),
    }
}

/// Sum the cross-entropy tap gradients of `ensemble_n` independently
/// transformed copies of `image`, then scale the sum to unit Frobenius
/// norm. A zero aggregate is degenerate; a non-finite one is an error.
pub fn aggregate_weight_matrix(
    model: &ModelCheckpoint,
    image: &ImageTensor,
    data: &DatasetHandle,
    cfg: &AttackConfig,
    rng: &mut RandomStream,
) -> Result<WeightMatrix> {
    if cfg.variant == Variant::MimCe {
        return Err(Error::InvalidArgument(
            "MIM_CE aggregates no weight matrix".into(),
        ));
    }
    if cfg.ensemble_n == 0 {
        return Err(Error::InvalidArgument("ensemble_n must be >= 1".into()));
    }
    // The corner-noise scale defaults to a tenth of the image's own mean
    // corner magnitude, fixed once per image.
    let hf_sigma = if cfg.variant == Variant::HfNoise {
        match cfg.hf_sigma {
            Some(s) => s,
            None => corner_sigma_default(&dct2(&image.pixels)?, cfg.tau)?,
        }
    } else {
        0.0
    };
    let mut delta: Option<Tensor> = None;
    for _ in 0..cfg.ensemble_n {
        let probe = probe_copy(image, data, cfg, hf_sigma, rng)?;
        let mut pass = model.forward(&probe)?;
        let tap_node = pass.tap(model, &cfg.tap)?;
        let loss = pass.graph.softmax_ce(pass.logits, image.label)?;
        pass.graph.backward(loss)?;
        let g = pass.graph.grad_at(tap_node)?;
        match &mut delta {
            None => delta = Some(g.clone()),
            Some(d) => d.add_scaled(g, 1.0),
        }
    }
    let mut delta = delta.unwrap();
    if !delta.all_finite() {
        return Err(Error::NonFinite("aggregated weight matrix"));
    }
    let norm = delta.frobenius_norm();
    if norm == 0.0 {
        return Err(Error::DegenerateGradient);
    }
    delta.scale(1.0 / norm);
    Ok(WeightMatrix {
        delta,
        tap: cfg.tap.clone(),
        copies_used: cfg.ensemble_n,
    })
}

/// Append the weighted feature objective `Σ (Δ ⊙ tap)` to a forward graph.
pub fn feature_loss(graph: &mut Graph, tap: NodeId, delta: &Tensor) -> Result<NodeId> {
    let d = graph.leaf(delta.clone());
    let weighted = graph.mul(tap, d)?;
    Ok(graph.sum(weighted))
}

/// Momentum iterative update. `grad_fn` returns the objective gradient at
/// the current iterate; the accumulated direction is
/// `g ← decay·g + ∇/‖∇‖₁` (a zero gradient contributes nothing), and the
/// step is `x ← clip(x + step_sign·α·sign(g))`, clipped jointly to the
/// ε-ball around `x0` and to `[0, 1]` after every step. `step_sign` is `+1`
/// to ascend the objective and `-1` to descend it; every built-in variant
/// ascends (cross-entropy directly, or the loss-gradient-weighted feature
/// objective). `observer` sees each iterate right after its clip.
pub fn mim_attack(
    x0: &Tensor,
    cfg: &AttackConfig,
    step_sign: f64,
    mut grad_fn: impl FnMut(&Tensor) -> Result<Tensor>,
    mut observer: impl FnMut(usize, &Tensor),
) -> Result<Tensor> {
    if x0.data().iter().any(|&v| !(0.0..=1.0).contains(&v)) {
        return Err(Error::InvalidArgument(
            "starting point must lie in [0, 1]".into(),
        ));
    }
    let mut x = x0.clone();
    let mut g = Tensor::zeros(x0.shape());
    for step in 0..cfg.steps {
        let grad = grad_fn(&x)?;
        if grad.shape() != x0.shape() {
            return Err(Error::ShapeMismatch {
                op: "mim_attack",
                detail: format!("gradient {:?} vs iterate {:?}", grad.shape(), x0.shape()),
            });
        }
        if !grad.all_finite() {
            return Err(Error::NonFinite("objective gradient"));
        }
        let l1 = grad.l1_norm();
        g.scale(cfg.momentum_decay);
        if l1 > 0.0 {
            g.add_scaled(&grad, 1.0 / l1);
        }
        if !g.all_finite() {
            return Err(Error::NonFinite("momentum accumulator"));
        }
        let step_size = step_sign * cfg.alpha;
        let xd = x.data_mut();
        for i in 0..xd.len() {
            let lo = (x0.data()[i] - cfg.epsilon).max(0.0);
            let hi = (x0.data()[i] + cfg.epsilon).min(1.0);
            xd[i] = (xd[i] + step_size * sign(g.data()[i])).clamp(lo, hi);
        }
        observer(step, &x);
    }
    Ok(x)
}

/// Attack one image with `cfg.variant`, reporting every iterate to
/// `observer`. Randomness comes from a per-image substream of `seed`, so
/// results do not depend on scheduling or batch order. Feature variants
/// aggregate their weight matrix once, before the update loop.
pub fn run_variant_observed(
    model: &ModelCheckpoint,
    image: &ImageTensor,
    data: &DatasetHandle,
    cfg: &AttackConfig,
    seed: u64,
    observer: impl FnMut(usize, &Tensor),
) -> Result<AdversarialResult> {
    cfg.validate()?;
    let mut rng = RandomStream::substream(seed, "attack", image.id as u64);
    let mut queries = 0usize;
    let x_adv = if cfg.variant == Variant::MimCe {
        let grad_fn = |x: &Tensor| -> Result<Tensor> {
            queries += 1;
            let mut pass = model.forward(x)?;
            let loss = pass.graph.softmax_ce(pass.logits, image.label)?;
            pass.graph.backward(loss)?;
            Ok(pass.graph.grad_at(pass.input)?.clone())
        };
        mim_attack(&image.pixels, cfg, 1.0, grad_fn, observer)?
    } else {
        let wm = aggregate_weight_matrix(model, image, data, cfg, &mut rng)?;
        queries += wm.copies_used;
        let grad_fn = |x: &Tensor| -> Result<Tensor> {
            queries += 1;
            let mut pass = model.forward(x)?;
            let tap_node = pass.tap(model, &cfg.tap)?;
            let loss = feature_loss(&mut pass.graph, tap_node, &wm.delta)?;
            pass.graph.backward(loss)?;
            Ok(pass.graph.grad_at(pass.input)?.clone())
        };
        mim_attack(&image.pixels, cfg, 1.0, grad_fn, observer)?
    };
    let linf = x_adv.max_abs_diff(&image.pixels);
    Ok(AdversarialResult {
        x_adv,
        original_id: image.id,
        queries,
        linf,
    })
}

/// [`run_variant_observed`] without iterate inspection.
pub fn run_variant(
    model: &ModelCheckpoint,
    image: &ImageTensor,
    data: &DatasetHandle,
    cfg: &AttackConfig,
    seed: u64,
) -> Result<AdversarialResult> {
    run_variant_observed(model, image, data, cfg, seed, |_, _| {})
}
