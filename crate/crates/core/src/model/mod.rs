//! The unfolded enhancement model: a magnitude-filter network produces a
//! coarse spectrum, a bank of derivative-operator modules refines it through
//! the order recursion `T(q+1) = q*T(q) + P(q)`, and the orders are
//! superimposed with factorial weights `1/q!`.
//!
//! All spectral arithmetic happens in the compressed magnitude domain; the
//! caller compresses before [`TaylorModel::forward`] and decompresses the
//! estimate afterwards.

pub(crate) mod net;

use std::path::Path;

use crate::autodiff::{load_checkpoint, save_checkpoint, Graph, ParamStore, Tensor};
use crate::dsp::{compress, decompress, istft, stft, AnalysisConfig, ComplexSpectrogram, Waveform};
use crate::error::{Error, Result};

/// Architecture hyperparameters.
#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct TaylorConfig {
    /// Number of refinement orders Q. Zero disables the derivative bank.
    pub q: usize,
    /// One derivative-module parameter set reused for every order.
    pub shared_high_order: bool,
    /// 2-D conv width of the magnitude-filter network.
    pub channels: usize,
    /// Inner UNet-block depth per encoder/decoder layer, outermost first.
    pub unet_depths: Vec<usize>,
    pub stcm_groups: usize,
    pub stcm_per_group: usize,
    pub stcm_kernel: usize,
    pub stcm_dilations: Vec<usize>,
    /// Frequency bins K of the input spectrogram.
    pub bins: usize,
    /// Magnitude compression exponent the model was trained for.
    pub compression_beta: f32,
}

impl Default for TaylorConfig {
    fn default() -> Self {
        Self {
            q: 3,
            shared_high_order: false,
            channels: 64,
            unet_depths: vec![4, 3, 2, 1, 0],
            stcm_groups: 2,
            stcm_per_group: 4,
            stcm_kernel: 5,
            stcm_dilations: vec![1, 2, 5, 9],
            bins: 161,
            compression_beta: 0.5,
        }
    }
}

impl TaylorConfig {
    /// Small preset that trains in minutes on one core.
    pub fn desk() -> Self {
        Self { channels: 16, unet_depths: vec![2, 1, 0], stcm_groups: 1, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if self.channels < 4 || self.channels % 4 != 0 {
            return Err(Error::Config(format!(
                "channels must be a positive multiple of 4, got {}",
                self.channels
            )));
        }
        if self.unet_depths.is_empty() {
            return Err(Error::Config("unet_depths must not be empty".into()));
        }
        if self.unet_depths.windows(2).any(|w| w[1] > w[0]) {
            return Err(Error::Config(format!(
                "unet_depths must be nonincreasing, got {:?}",
                self.unet_depths
            )));
        }
        if self.stcm_dilations.is_empty() || self.stcm_dilations.iter().any(|&d| d == 0) {
            return Err(Error::Config("stcm_dilations must be positive".into()));
        }
        if self.stcm_groups == 0 || self.stcm_per_group == 0 || self.stcm_kernel == 0 {
            return Err(Error::Config("stcm stack sizes must be positive".into()));
        }
        if !(self.compression_beta > 0.0 && self.compression_beta <= 1.0) {
            return Err(Error::Config("compression beta must lie in (0, 1]".into()));
        }
        // the frequency ladder must stay wide enough for the k=3 kernels,
        // both across encoder layers and inside the deepest UNet block
        let mut f = self.bins;
        for (i, &depth) in self.unet_depths.iter().enumerate() {
            if f < 2 {
                return Err(Error::Config(format!(
                    "bins {} too small for {} downsampling layers",
                    self.bins,
                    self.unet_depths.len()
                )));
            }
            f = net::down_f(f);
            let mut inner = f;
            for _ in 0..depth {
                if inner < 2 {
                    return Err(Error::Config(format!(
                        "unet depth {depth} at layer {i} exceeds the available {f} bins"
                    )));
                }
                inner = net::down_f(inner);
            }
        }
        Ok(())
    }

    /// Bottleneck width of the temporal modules.
    pub fn squeeze(&self) -> usize {
        self.channels * 2
    }

    /// Hidden width of the derivative modules' 1-D stack.
    pub fn deriv_hidden(&self) -> usize {
        self.channels * 4
    }

    /// Channel count of the residual feature encoder.
    pub fn high_channels(&self) -> usize {
        self.channels / 4
    }
}

/// `1 / q!` as the f32 weight used in the superposition.
pub fn inv_factorial(q: usize) -> f32 {
    let mut f = 1.0f64;
    for i in 1..=q {
        f *= i as f64;
    }
    (1.0 / f) as f32
}

/// Everything the forward pass produces, kept for inspection: the coarse
/// spectrum T(0), the refinement terms T(1..=Q), the superimposed estimate,
/// and the magnitude gain grid.
#[derive(Clone, Debug)]
pub struct OrderTrace {
    pub coarse: ComplexSpectrogram,
    pub terms: Vec<ComplexSpectrogram>,
    pub estimate: ComplexSpectrogram,
    pub gain: Vec<f32>,
}

/// Couple a magnitude gain with the noisy spectrum: `out = M * X`
/// elementwise on both planes, which scales `|X|` by `M` and keeps the phase.
pub fn coarse_spectrum(gain: &[f32], x: &ComplexSpectrogram) -> Result<ComplexSpectrogram> {
    if gain.len() != x.cells() {
        return Err(Error::Shape(format!(
            "gain grid has {} cells, spectrogram has {}",
            gain.len(),
            x.cells()
        )));
    }
    let real = x.real.iter().zip(gain).map(|(&r, &m)| m * r).collect();
    let imag = x.imag.iter().zip(gain).map(|(&i, &m)| m * i).collect();
    Ok(ComplexSpectrogram { real, imag, frames: x.frames, bins: x.bins })
}

/// One step of the order recursion: `T(q+1) = q * T(q) + P(q)`, exact
/// elementwise arithmetic.
pub fn recursion_step(
    t_q: &ComplexSpectrogram,
    p_q: &ComplexSpectrogram,
    q: usize,
) -> Result<ComplexSpectrogram> {
    if !t_q.same_shape(p_q) {
        return Err(Error::Shape("recursion_step: term shapes differ".into()));
    }
    let qf = q as f32;
    let real = t_q.real.iter().zip(&p_q.real).map(|(&t, &p)| qf * t + p).collect();
    let imag = t_q.imag.iter().zip(&p_q.imag).map(|(&t, &p)| qf * t + p).collect();
    Ok(ComplexSpectrogram { real, imag, frames: t_q.frames, bins: t_q.bins })
}

/// Factorial-weighted superposition: `S = coarse + sum_q T(q) / q!`.
pub fn superimpose(
    coarse: &ComplexSpectrogram,
    terms: &[ComplexSpectrogram],
) -> Result<ComplexSpectrogram> {
    let mut est = coarse.clone();
    for (idx, t) in terms.iter().enumerate() {
        if !t.same_shape(coarse) {
            return Err(Error::Shape(format!("superimpose: term {} shape differs", idx + 1)));
        }
        let w = inv_factorial(idx + 1);
        for (e, &v) in est.real.iter_mut().zip(&t.real) {
            *e += w * v;
        }
        for (e, &v) in est.imag.iter_mut().zip(&t.imag) {
            *e += w * v;
        }
    }
    Ok(est)
}

/// A configured architecture plus its parameters.
pub struct TaylorModel {
    config: TaylorConfig,
    params: ParamStore,
}

impl TaylorModel {
    /// Fresh model with seeded fan-in-uniform weights, zero biases, unit
    /// norm scales.
    pub fn new(config: TaylorConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut params = ParamStore::new();
        let mut g: Graph<f32> = Graph::new();
        let mut ctx = net::NetCtx::init_mode(&mut g, &mut params, seed);
        // trace a one-frame forward pass to register every parameter
        let zeros = Tensor::zeros(&[1, 1, 1, config.bins]);
        let x_r = ctx.g.constant(zeros.clone());
        let x_i = ctx.g.constant(zeros);
        net::build_forward(&mut ctx, x_r, x_i, &config, 1)?;
        Ok(Self { config, params })
    }

    pub fn config(&self) -> &TaylorConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    /// Trainable scalar count.
    pub fn count_params(&self) -> usize {
        self.params.total_scalars()
    }

    fn check_input(&self, x: &ComplexSpectrogram) -> Result<()> {
        if x.bins != self.config.bins {
            return Err(Error::Shape(format!(
                "input has {} bins, model expects {}",
                x.bins, self.config.bins
            )));
        }
        if x.frames == 0 {
            return Err(Error::Shape("input has no frames".into()));
        }
        if !x.is_finite() {
            return Err(Error::Numeric("input spectrogram contains non-finite values".into()));
        }
        Ok(())
    }

    fn plane_tensor(data: &[f32], frames: usize, bins: usize) -> Tensor<f32> {
        Tensor::from_vec(&[1, 1, frames, bins], data.to_vec()).expect("plane is dense")
    }

    /// Full forward pass on a compressed-domain spectrogram.
    pub fn forward(&self, x: &ComplexSpectrogram) -> Result<(ComplexSpectrogram, OrderTrace)> {
        self.check_input(x)?;
        let (frames, bins) = (x.frames, x.bins);
        let mut g: Graph<f32> = Graph::new();
        let mut ctx = net::NetCtx::use_mode(&mut g, &self.params, false);
        let x_r = ctx.g.constant(Self::plane_tensor(&x.real, frames, bins));
        let x_i = ctx.g.constant(Self::plane_tensor(&x.imag, frames, bins));
        let out = net::build_forward(&mut ctx, x_r, x_i, &self.config, frames)?;

        let spec = |r, i| {
            ComplexSpectrogram::from_planes(g.value(r).to_vec(), g.value(i).to_vec(), frames, bins)
        };
        let coarse = spec(out.coarse.0, out.coarse.1)?;
        let terms: Vec<ComplexSpectrogram> =
            out.terms.iter().map(|&(r, i)| spec(r, i)).collect::<Result<_>>()?;
        let estimate = spec(out.estimate.0, out.estimate.1)?;
        let gain = g.value(out.gain).to_vec();
        let trace = OrderTrace { coarse, terms, estimate: estimate.clone(), gain };
        Ok((estimate, trace))
    }

    /// The analysis configuration this model expects: default frame geometry
    /// with the model's compression exponent.
    pub fn analysis(&self) -> AnalysisConfig {
        AnalysisConfig { compression_beta: self.config.compression_beta, ..AnalysisConfig::default() }
    }

    /// End-to-end utterance enhancement: analysis, compressed-domain forward
    /// pass, decompression, and overlap-add synthesis back to the input
    /// length.
    pub fn enhance(&self, wave: &Waveform) -> Result<Waveform> {
        let analysis = self.analysis();
        let beta = self.config.compression_beta;
        let x = compress(&stft(wave, &analysis)?, beta)?;
        let (est, _) = self.forward(&x)?;
        let est = decompress(&est, beta)?;
        istft(&est, &analysis, Some(wave.len()))
    }

    /// The magnitude-filter stage alone: noisy magnitude grid in, gain grid
    /// in (0,1) out. `mag` is frame-major `[frames, bins]`.
    pub fn zero_order_forward(&self, mag: &[f32], frames: usize) -> Result<Vec<f32>> {
        let bins = self.config.bins;
        if mag.len() != frames * bins || frames == 0 {
            return Err(Error::Shape(format!(
                "magnitude grid of {} cells does not match {frames} frames x {bins} bins",
                mag.len()
            )));
        }
        if mag.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::Numeric("magnitude grid must be finite and nonnegative".into()));
        }
        let mut g: Graph<f32> = Graph::new();
        let mut ctx = net::NetCtx::use_mode(&mut g, &self.params, false);
        let m = ctx.g.constant(Self::plane_tensor(mag, frames, bins));
        let gain = net::build_zero_order(&mut ctx, m, &self.config, frames)?;
        Ok(g.value(gain).to_vec())
    }

    /// The residual feature encoder alone. Returns `[1, channels/4, T, K]`.
    pub fn high_order_encode(&self, x: &ComplexSpectrogram) -> Result<Tensor<f32>> {
        self.check_input(x)?;
        if self.config.q == 0 {
            return Err(Error::Config("model has no refinement stage (Q = 0)".into()));
        }
        let (frames, bins) = (x.frames, x.bins);
        let mut g: Graph<f32> = Graph::new();
        let mut ctx = net::NetCtx::use_mode(&mut g, &self.params, false);
        let x_r = ctx.g.constant(Self::plane_tensor(&x.real, frames, bins));
        let x_i = ctx.g.constant(Self::plane_tensor(&x.imag, frames, bins));
        let x_ri = ctx.g.concat(&[x_r, x_i], 1)?;
        let r = net::build_high_encoder(&mut ctx, x_ri, &self.config)?;
        Ok(g.value_tensor(r))
    }

    /// One derivative module applied to a term/feature pair: produces P(q).
    pub fn derivative_step(
        &self,
        t_q: &ComplexSpectrogram,
        r_feat: &Tensor<f32>,
        q: usize,
    ) -> Result<ComplexSpectrogram> {
        if q >= self.config.q {
            return Err(Error::Config(format!(
                "derivative index {q} out of range for Q = {}",
                self.config.q
            )));
        }
        let (frames, bins) = (t_q.frames, t_q.bins);
        if bins != self.config.bins {
            return Err(Error::Shape("term bin count does not match the model".into()));
        }
        let expect = [1, self.config.high_channels(), frames, bins];
        if r_feat.shape() != expect {
            return Err(Error::Shape(format!(
                "feature map has shape {:?}, expected {expect:?}",
                r_feat.shape()
            )));
        }
        let mut g: Graph<f32> = Graph::new();
        let mut ctx = net::NetCtx::use_mode(&mut g, &self.params, false);
        let t_r = ctx.g.constant(Self::plane_tensor(&t_q.real, frames, bins));
        let t_i = ctx.g.constant(Self::plane_tensor(&t_q.imag, frames, bins));
        let rf = ctx.g.constant(r_feat.clone());
        let tag = net::deriv_tag(&self.config, q);
        let (p_r, p_i) = net::build_deriv_module(&mut ctx, &tag, (t_r, t_i), rf, &self.config, frames)?;
        ComplexSpectrogram::from_planes(g.value(p_r).to_vec(), g.value(p_i).to_vec(), frames, bins)
    }

    /// Write the parameters plus the architecture config to one file.
    pub fn save(&self, path: &Path) -> Result<()> {
        let config = serde_json::to_value(&self.config)
            .map_err(|e| Error::Config(format!("config serialization failed: {e}")))?;
        save_checkpoint(path, &config, &self.params)
    }

    /// Rebuild a model from a checkpoint written by [`TaylorModel::save`].
    pub fn load(path: &Path) -> Result<Self> {
        let (config, params) = load_checkpoint(path)?;
        let config: TaylorConfig = serde_json::from_value(config)
            .map_err(|e| Error::Config(format!("checkpoint holds no valid model config: {e}")))?;
        config.validate()?;
        let model = Self { config, params };
        // a one-frame trace verifies every expected parameter is present
        let probe = ComplexSpectrogram::zeros(1, model.config.bins);
        model.forward(&probe)?;
        Ok(model)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_config(q: usize, shared: bool) -> TaylorConfig {
        TaylorConfig {
            q,
            shared_high_order: shared,
            channels: 8,
            unet_depths: vec![1, 0],
            stcm_groups: 1,
            stcm_per_group: 2,
            bins: 33,
            ..TaylorConfig::default()
        }
    }

    fn random_spec(frames: usize, bins: usize, seed: u64) -> ComplexSpectrogram {
        let mut s = seed;
        let mut next = move || {
            s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            ((s >> 33) as f32 / (1u64 << 31) as f32) - 0.5
        };
        let n = frames * bins;
        ComplexSpectrogram::from_planes(
            (0..n).map(|_| next()).collect(),
            (0..n).map(|_| next()).collect(),
            frames,
            bins,
        )
        .unwrap()
    }

    #[test]
    fn config_validation() {
        assert!(TaylorConfig::default().validate().is_ok());
        assert!(TaylorConfig::desk().validate().is_ok());
        assert!(TaylorConfig { channels: 6, ..TaylorConfig::desk() }.validate().is_err());
        assert!(TaylorConfig { unet_depths: vec![1, 2], ..TaylorConfig::desk() }
            .validate()
            .is_err());
        assert!(TaylorConfig { stcm_dilations: vec![0], ..TaylorConfig::desk() }
            .validate()
            .is_err());
        assert!(TaylorConfig { bins: 3, ..TaylorConfig::desk() }.validate().is_err());
    }

    #[test]
    fn factorial_weights() {
        assert_eq!(inv_factorial(0), 1.0);
        assert_eq!(inv_factorial(1), 1.0);
        assert_eq!(inv_factorial(2), 0.5);
        assert_eq!(inv_factorial(3), 1.0 / 6.0);
    }

    #[test]
    fn coarse_spectrum_identity_and_zero() {
        let x = random_spec(3, 5, 1);
        let ones = vec![1.0f32; x.cells()];
        assert_eq!(coarse_spectrum(&ones, &x).unwrap(), x);
        let zeros = vec![0.0f32; x.cells()];
        let out = coarse_spectrum(&zeros, &x).unwrap();
        assert!(out.real.iter().chain(&out.imag).all(|&v| v == 0.0));
        assert!(coarse_spectrum(&ones[..3], &x).is_err());
    }

    #[test]
    fn coarse_spectrum_scales_magnitude_keeps_phase() {
        let x = random_spec(4, 6, 2);
        let m: Vec<f32> = (0..x.cells()).map(|i| 0.1 + 0.8 * (i as f32 / x.cells() as f32)).collect();
        let out = coarse_spectrum(&m, &x).unwrap();
        let xm = x.magnitude();
        let om = out.magnitude();
        for i in 0..x.cells() {
            if xm[i] > 1e-6 {
                assert!((om[i] / xm[i] - m[i]).abs() < 1e-6);
                // same phase: cross product of (re, im) pairs vanishes
                let cross = x.real[i] * out.imag[i] - x.imag[i] * out.real[i];
                assert!(cross.abs() < 1e-6);
            }
        }
    }

    #[test]
    fn recursion_step_examples() {
        let t = random_spec(2, 3, 3);
        let p = random_spec(2, 3, 4);
        // q = 0 annihilates the carried term
        assert_eq!(recursion_step(&t, &p, 0).unwrap(), p);
        // q = 2, T = 1, P = 0 -> 2
        let ones = ComplexSpectrogram::from_planes(vec![1.0; 6], vec![1.0; 6], 2, 3).unwrap();
        let zero = ComplexSpectrogram::zeros(2, 3);
        let out = recursion_step(&ones, &zero, 2).unwrap();
        assert!(out.real.iter().all(|&v| v == 2.0));
        // random inputs against the elementwise formula, exact
        let out = recursion_step(&t, &p, 3).unwrap();
        for i in 0..t.cells() {
            assert_eq!(out.real[i], 3.0 * t.real[i] + p.real[i]);
            assert_eq!(out.imag[i], 3.0 * t.imag[i] + p.imag[i]);
        }
    }

    #[test]
    fn superimpose_examples() {
        let coarse = random_spec(2, 4, 5);
        // Q = 0
        assert_eq!(superimpose(&coarse, &[]).unwrap(), coarse);
        // coarse 0, three terms of 6 -> 6 * (1 + 1/2 + 1/6) = 10
        let six = ComplexSpectrogram::from_planes(vec![6.0; 8], vec![0.0; 8], 2, 4).unwrap();
        let zero = ComplexSpectrogram::zeros(2, 4);
        let s = superimpose(&zero, &[six.clone(), six.clone(), six]).unwrap();
        for &v in &s.real {
            assert!((v - 10.0).abs() < 1e-6);
        }
        // random terms against an independently computed weighted sum
        let terms = [random_spec(2, 4, 6), random_spec(2, 4, 7)];
        let s = superimpose(&coarse, &terms).unwrap();
        for i in 0..coarse.cells() {
            let expect = coarse.real[i] + 1.0 * terms[0].real[i] + 0.5 * terms[1].real[i];
            assert_eq!(s.real[i], expect);
        }
        // shape mismatch
        assert!(superimpose(&coarse, &[random_spec(3, 4, 8)]).is_err());
    }

    #[test]
    fn gain_lies_strictly_inside_unit_interval() {
        let model = TaylorModel::new(tiny_config(0, false), 7).unwrap();
        let x = random_spec(5, 33, 9);
        let gain = model.zero_order_forward(&x.magnitude(), 5).unwrap();
        assert_eq!(gain.len(), 5 * 33);
        assert!(gain.iter().all(|&m| m > 0.0 && m < 1.0));
    }

    #[test]
    fn zeroed_gate_yields_constant_half_gain() {
        let mut model = TaylorModel::new(tiny_config(0, false), 7).unwrap();
        for v in model.params_mut().get_mut("zero/gate/w").unwrap().data_mut() {
            *v = 0.0;
        }
        let x = random_spec(4, 33, 10);
        let gain = model.zero_order_forward(&x.magnitude(), 4).unwrap();
        assert!(gain.iter().all(|&m| m == 0.5));
    }

    #[test]
    fn zero_order_rejects_nan() {
        let model = TaylorModel::new(tiny_config(0, false), 7).unwrap();
        let mut mag = vec![0.5f32; 3 * 33];
        mag[7] = f32::NAN;
        assert!(model.zero_order_forward(&mag, 3).is_err());
    }

    #[test]
    fn high_order_encoder_zero_input_gives_zero_features() {
        // default init keeps all biases at zero, so the affine path through
        // gated convs and norms maps zero to zero
        let model = TaylorModel::new(tiny_config(2, false), 11).unwrap();
        let zero = ComplexSpectrogram::zeros(4, 33);
        let r = model.high_order_encode(&zero).unwrap();
        assert_eq!(r.shape(), &[1, 2, 4, 33]);
        assert!(r.data().iter().all(|&v| v == 0.0));
        // and Q = 0 models have no such stage
        let q0 = TaylorModel::new(tiny_config(0, false), 11).unwrap();
        assert!(q0.high_order_encode(&zero).is_err());
    }

    #[test]
    fn derivative_step_shape_and_sharing() {
        // output projections start at zero, so give each module a visible
        // fingerprint before comparing routes
        let fill = |model: &mut TaylorModel, name: &str, v: f32| {
            let w = model.params_mut().get_mut(name).unwrap();
            for x in w.data_mut() {
                *x = v;
            }
        };
        let mut shared = TaylorModel::new(tiny_config(3, true), 13).unwrap();
        fill(&mut shared, "deriv/shared/out/w", 0.01);
        let x = random_spec(3, 33, 14);
        let r = shared.high_order_encode(&x).unwrap();
        let t = random_spec(3, 33, 15);
        let p1 = shared.derivative_step(&t, &r, 1).unwrap();
        assert_eq!((p1.frames, p1.bins), (3, 33));
        assert!(p1.real.iter().any(|&v| v != 0.0));
        // shared mode: every index uses the same parameters
        let p2 = shared.derivative_step(&t, &r, 2).unwrap();
        assert_eq!(p1, p2);
        assert!(shared.derivative_step(&t, &r, 3).is_err());
        // non-shared modules have their own parameters
        let mut owned = TaylorModel::new(tiny_config(3, false), 13).unwrap();
        fill(&mut owned, "deriv/q1/out/w", 0.01);
        fill(&mut owned, "deriv/q2/out/w", -0.01);
        let r = owned.high_order_encode(&x).unwrap();
        let q1 = owned.derivative_step(&t, &r, 1).unwrap();
        let q2 = owned.derivative_step(&t, &r, 2).unwrap();
        assert_ne!(q1, q2);
    }

    #[test]
    fn derivative_step_zero_inputs_give_zero_output() {
        let model = TaylorModel::new(tiny_config(1, false), 17).unwrap();
        let zero = ComplexSpectrogram::zeros(3, 33);
        let r = Tensor::zeros(&[1, 2, 3, 33]);
        let p = model.derivative_step(&zero, &r, 0).unwrap();
        assert!(p.real.iter().chain(&p.imag).all(|&v| v == 0.0));
    }

    /// The output projections start at zero; give them deterministic nonzero
    /// values so tests exercise the high-order data path.
    fn fingerprint_deriv(model: &mut TaylorModel) {
        for (name, t) in model.params_mut().iter_mut() {
            if name.starts_with("deriv/") && name.ends_with("/out/w") {
                for (i, v) in t.data_mut().iter_mut().enumerate() {
                    *v = (((i % 13) as f32) - 6.0) * 2e-3;
                }
            }
        }
    }

    #[test]
    fn forward_trace_is_self_consistent() {
        let mut model = TaylorModel::new(tiny_config(3, false), 19).unwrap();
        fingerprint_deriv(&mut model);
        let x = random_spec(6, 33, 20);
        let (est, trace) = model.forward(&x).unwrap();
        assert_eq!(trace.terms.len(), 3);
        assert_eq!(est, trace.estimate);
        // the stored estimate equals the superposition of the stored parts,
        // bit for bit
        let rebuilt = superimpose(&trace.coarse, &trace.terms).unwrap();
        assert_eq!(rebuilt, trace.estimate);
        // and the coarse part is the gain applied to the input
        let coarse = coarse_spectrum(&trace.gain, &x).unwrap();
        assert_eq!(coarse, trace.coarse);
    }

    #[test]
    fn forward_matches_straight_line_composition() {
        // recompose the whole model from its public stage APIs and demand
        // exact agreement with the fused forward pass
        for (q, shared) in [(0, false), (2, false), (3, true)] {
            let mut model = TaylorModel::new(tiny_config(q, shared), 23).unwrap();
            fingerprint_deriv(&mut model);
            let x = random_spec(4, 33, 24);
            let (est, _) = model.forward(&x).unwrap();

            let gain = model.zero_order_forward(&x.magnitude(), 4).unwrap();
            let coarse = coarse_spectrum(&gain, &x).unwrap();
            let mut terms = Vec::new();
            if q > 0 {
                let r = model.high_order_encode(&x).unwrap();
                let mut t_q = coarse.clone();
                for qi in 0..q {
                    let p = model.derivative_step(&t_q, &r, qi).unwrap();
                    t_q = recursion_step(&t_q, &p, qi).unwrap();
                    terms.push(t_q.clone());
                }
            }
            let composed = superimpose(&coarse, &terms).unwrap();
            assert_eq!(composed, est, "composition diverged at q={q} shared={shared}");
        }
    }

    #[test]
    fn q0_estimate_keeps_noisy_phase() {
        let model = TaylorModel::new(tiny_config(0, false), 29).unwrap();
        let x = random_spec(4, 33, 30);
        let (est, _) = model.forward(&x).unwrap();
        let xm = x.magnitude();
        for i in 0..x.cells() {
            if xm[i] > 1e-4 {
                let cross = x.real[i] * est.imag[i] - x.imag[i] * est.real[i];
                assert!(cross.abs() < 1e-6 * xm[i]);
            }
        }
    }

    #[test]
    fn param_count_laws() {
        // shared: constant in Q; non-shared: affine in Q with a constant step
        let shared: Vec<usize> = (1..=4)
            .map(|q| TaylorModel::new(tiny_config(q, true), 31).unwrap().count_params())
            .collect();
        assert!(shared.windows(2).all(|w| w[0] == w[1]), "{shared:?}");
        let owned: Vec<usize> = (1..=4)
            .map(|q| TaylorModel::new(tiny_config(q, false), 31).unwrap().count_params())
            .collect();
        let steps: Vec<usize> = owned.windows(2).map(|w| w[1] - w[0]).collect();
        assert!(steps.windows(2).all(|w| w[0] == w[1]), "{steps:?}");
        assert!(steps[0] > 0);
        // Q = 0 drops the residual encoder and every derivative module
        let q0 = TaylorModel::new(tiny_config(0, false), 31).unwrap().count_params();
        assert!(q0 < shared[0]);
    }

    #[test]
    fn checkpoint_roundtrip_preserves_forward() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        let model = TaylorModel::new(tiny_config(2, true), 37).unwrap();
        model.save(&path).unwrap();
        let loaded = TaylorModel::load(&path).unwrap();
        assert_eq!(loaded.config(), model.config());
        let x = random_spec(3, 33, 38);
        let (a, _) = model.forward(&x).unwrap();
        let (b, _) = loaded.forward(&x).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn forward_is_causal() {
        // future-frame edits leave earlier output frames untouched
        for q in [0usize, 1, 3] {
            let mut model = TaylorModel::new(tiny_config(q, false), 41).unwrap();
            fingerprint_deriv(&mut model);
            let x = random_spec(6, 33, 42);
            let (base, _) = model.forward(&x).unwrap();
            let mut edited = x.clone();
            for k in 0..33 {
                edited.real[4 * 33 + k] += 1.0;
                edited.imag[5 * 33 + k] -= 0.5;
            }
            let (out, _) = model.forward(&edited).unwrap();
            for t in 0..4 {
                for k in 0..33 {
                    let i = t * 33 + k;
                    assert_eq!(base.real[i], out.real[i], "q={q} frame {t} bin {k} (real)");
                    assert_eq!(base.imag[i], out.imag[i], "q={q} frame {t} bin {k} (imag)");
                }
            }
            assert_ne!(base, out);
        }
    }
}
