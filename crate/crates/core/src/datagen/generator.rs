use std::f64::consts::PI;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Beta, Distribution, Exp1, StandardNormal};
use serde::{Deserialize, Serialize};

use super::fourvec::{wrap_phi, FourVector, LorentzVector};
use super::DataError;

pub const IMAGE_SIDE: usize = 16;
pub const IMAGE_PIXELS: usize = IMAGE_SIDE * IMAGE_SIDE;
pub const TAU_MASS: f64 = 1.777;
const MAX_RETRIES: usize = 100;

/// Per-decay-mode constants, indexed by mode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecayModes {
    pub probabilities: [f64; 3],
    /// Beta(a, b) parameters of the visible momentum fraction.
    pub visible_beta: [(f64, f64); 3],
    pub em_fraction: [f64; 3],
    pub charged_multiplicity: [usize; 3],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GeneratorConfig {
    pub n_events: usize,
    pub seed: u64,
    pub higgs_mass: f64,
    pub z_mass: f64,
    pub z_width: f64,
    /// Z line shape is truncated to this window.
    pub z_mass_window: (f64, f64),
    pub tau_mass: f64,
    pub parent_pt_mean: f64,
    pub parent_pt_max: f64,
    pub parent_rapidity_max: f64,
    pub modes: DecayModes,
    pub jet_pt_smear: f64,
    pub angular_smear: f64,
    pub jet_mass_mean: f64,
    pub jet_mass_sigma: f64,
    pub jet_mass_floor: f64,
    /// Half-width of the image window in (Δη, Δφ).
    pub image_half_width: f64,
    pub constituent_scatter: f64,
    pub em_spread_pixels: f64,
    pub had_spread_pixels: f64,
    pub pixel_noise: f64,
    pub split_fractions: [f64; 3],
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        Self {
            n_events: 10_000,
            seed: 0,
            higgs_mass: 125.0,
            z_mass: 91.19,
            z_width: 2.5,
            z_mass_window: (60.0, 120.0),
            tau_mass: TAU_MASS,
            parent_pt_mean: 40.0,
            parent_pt_max: 250.0,
            parent_rapidity_max: 2.0,
            modes: DecayModes {
                probabilities: [0.4, 0.4, 0.2],
                visible_beta: [(8.0, 2.0), (5.0, 4.0), (6.0, 3.0)],
                em_fraction: [0.05, 0.50, 0.10],
                charged_multiplicity: [1, 1, 3],
            },
            jet_pt_smear: 0.10,
            angular_smear: 0.02,
            jet_mass_mean: 1.0,
            jet_mass_sigma: 0.3,
            jet_mass_floor: 0.1,
            image_half_width: 0.8,
            constituent_scatter: 0.1,
            em_spread_pixels: 1.0,
            had_spread_pixels: 2.0,
            pixel_noise: 0.1,
            split_fractions: [0.6, 0.2, 0.2],
        }
    }
}

impl GeneratorConfig {
    pub fn validate(&self) -> Result<(), DataError> {
        let bad = |msg: &str| Err(DataError::Config(msg.to_string()));
        let p: f64 = self.modes.probabilities.iter().sum();
        if (p - 1.0).abs() > 1e-9 || self.modes.probabilities.iter().any(|&x| x < 0.0) {
            return bad("decay-mode probabilities must be non-negative and sum to 1");
        }
        let s: f64 = self.split_fractions.iter().sum();
        if (s - 1.0).abs() > 1e-9 || self.split_fractions.iter().any(|&x| x < 0.0) {
            return bad("split fractions must be non-negative and sum to 1");
        }
        let sigmas = [
            self.z_width,
            self.parent_pt_mean,
            self.jet_pt_smear,
            self.angular_smear,
            self.jet_mass_sigma,
            self.constituent_scatter,
            self.em_spread_pixels,
            self.had_spread_pixels,
            self.pixel_noise,
        ];
        if sigmas.iter().any(|&x| !(x > 0.0)) {
            return bad("all widths and smearing parameters must be positive");
        }
        if self.modes.visible_beta.iter().any(|&(a, b)| !(a > 0.0 && b > 0.0)) {
            return bad("visible-fraction Beta parameters must be positive");
        }
        if self.modes.charged_multiplicity.iter().any(|&n| n == 0) {
            return bad("charged multiplicity must be at least 1");
        }
        if self.z_mass_window.0 >= self.z_mass_window.1 || self.z_mass_window.0 < 2.0 * self.tau_mass {
            return bad("Z mass window must be increasing and above the tau-pair threshold");
        }
        if self.higgs_mass < 2.0 * self.tau_mass {
            return bad("Higgs mass below the tau-pair threshold");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TruthTau {
    pub pt: f64,
    pub eta: f64,
    pub phi: f64,
}

impl TruthTau {
    /// Cartesian momentum with the tau mass attached.
    pub fn to_cartesian(&self, tau_mass: f64) -> LorentzVector {
        FourVector::new(self.pt, self.eta, self.phi, tau_mass).to_cartesian()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TauCandidate {
    pub jet: FourVector,
    /// Tracker pT, EM calorimeter ET, hadronic calorimeter ET; η-major.
    pub images: [Vec<f32>; 3],
    pub truth: TruthTau,
    pub decay_mode: usize,
    pub visible_fraction: f64,
    /// Visible transverse momentum before detector smearing.
    pub visible_pt: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Event {
    /// 1 for H, 0 for Z.
    pub label: u8,
    pub parent_mass: f64,
    /// Ordered by descending jet pt.
    pub taus: [TauCandidate; 2],
}

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(rng)
}

fn sample_parent_mass(rng: &mut ChaCha8Rng, cfg: &GeneratorConfig, label: u8) -> f64 {
    if label == 1 {
        return cfg.higgs_mass;
    }
    // inverse CDF of the Cauchy restricted to the window
    let cdf = |m: f64| 0.5 + ((m - cfg.z_mass) / cfg.z_width).atan() / PI;
    let (lo, hi) = (cdf(cfg.z_mass_window.0), cdf(cfg.z_mass_window.1));
    let u = lo + (hi - lo) * rng.gen::<f64>();
    (cfg.z_mass + cfg.z_width * (PI * (u - 0.5)).tan()).clamp(cfg.z_mass_window.0, cfg.z_mass_window.1)
}

fn sample_parent_pt(rng: &mut ChaCha8Rng, cfg: &GeneratorConfig) -> f64 {
    // exponential truncated to [0, max] by inversion
    let tail = (-cfg.parent_pt_max / cfg.parent_pt_mean).exp();
    let u: f64 = rng.gen();
    -cfg.parent_pt_mean * (1.0 - u * (1.0 - tail)).ln()
}

fn sample_mode(rng: &mut ChaCha8Rng, probs: &[f64; 3]) -> usize {
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    for (i, &p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    probs.len() - 1
}

fn retry<T>(what: &str, mut f: impl FnMut() -> Option<T>) -> Result<T, DataError> {
    for _ in 0..MAX_RETRIES {
        if let Some(v) = f() {
            return Ok(v);
        }
    }
    Err(DataError::Generation(format!("{what}: exceeded {MAX_RETRIES} resampling attempts")))
}

/// Symmetric Dirichlet(1) weights.
fn dirichlet_flat(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    let draws: Vec<f64> = (0..n).map(|_| Exp1.sample(rng)).collect();
    let total: f64 = draws.iter().sum();
    draws.into_iter().map(|d| d / total).collect()
}

struct ImageGrid {
    half_width: f64,
    pixel: f64,
}

impl ImageGrid {
    fn new(half_width: f64) -> Self {
        Self {
            half_width,
            pixel: 2.0 * half_width / IMAGE_SIDE as f64,
        }
    }

    fn centre(&self, i: usize) -> f64 {
        -self.half_width + self.pixel * (i as f64 + 0.5)
    }

    fn cell(&self, offset: f64) -> Option<usize> {
        let k = ((offset + self.half_width) / self.pixel).floor();
        (k >= 0.0 && k < IMAGE_SIDE as f64).then_some(k as usize)
    }

    fn deposit_point(&self, image: &mut [f32], deta: f64, dphi: f64, amount: f64) {
        if let (Some(r), Some(c)) = (self.cell(deta), self.cell(dphi)) {
            image[r * IMAGE_SIDE + c] += amount as f32;
        }
    }

    /// Spreads `amount` with a Gaussian of `sigma_pixels`, normalised over
    /// the window so the whole amount lands in the image.
    fn deposit_spread(&self, image: &mut [f32], deta: f64, dphi: f64, amount: f64, sigma_pixels: f64) {
        let sigma = sigma_pixels * self.pixel;
        let profile = |centre: f64| -> Vec<f64> {
            (0..IMAGE_SIDE)
                .map(|i| {
                    let d = (self.centre(i) - centre) / sigma;
                    (-0.5 * d * d).exp()
                })
                .collect()
        };
        let (we, wp) = (profile(deta), profile(dphi));
        let norm = we.iter().sum::<f64>() * wp.iter().sum::<f64>();
        if !(norm > 1e-300) {
            return;
        }
        for r in 0..IMAGE_SIDE {
            for c in 0..IMAGE_SIDE {
                image[r * IMAGE_SIDE + c] += (amount * we[r] * wp[c] / norm) as f32;
            }
        }
    }
}

fn simulate_tau(rng: &mut ChaCha8Rng, cfg: &GeneratorConfig, tau: &LorentzVector) -> Result<TauCandidate, DataError> {
    let truth_vec = tau.to_collider()?;
    let truth = TruthTau {
        pt: truth_vec.pt,
        eta: truth_vec.eta,
        phi: truth_vec.phi,
    };
    let mode = sample_mode(rng, &cfg.modes.probabilities);
    let (a, b) = cfg.modes.visible_beta[mode];
    let beta = Beta::new(a, b).map_err(|e| DataError::Config(e.to_string()))?;
    let fraction = retry("visible fraction", || {
        let f: f64 = beta.sample(rng);
        (f > 0.0 && f < 1.0).then_some(f)
    })?;
    let visible_pt = fraction * truth.pt;
    let vis_eta = truth.eta + cfg.angular_smear * normal(rng);
    let vis_phi = wrap_phi(truth.phi + cfg.angular_smear * normal(rng));

    let jet_pt = retry("jet pt smear", || {
        let pt = visible_pt * (1.0 + cfg.jet_pt_smear * normal(rng));
        (pt > 0.0).then_some(pt)
    })?;
    let jet_eta = vis_eta + cfg.angular_smear * normal(rng);
    let jet_phi = wrap_phi(vis_phi + cfg.angular_smear * normal(rng));
    let jet_m = (cfg.jet_mass_mean + cfg.jet_mass_sigma * normal(rng)).max(cfg.jet_mass_floor);
    let jet = FourVector::new(jet_pt, jet_eta, jet_phi, jet_m);

    // images are centred on the jet axis and constituents scatter around it
    let grid = ImageGrid::new(cfg.image_half_width);
    let mut tracker = vec![0.0f32; IMAGE_PIXELS];
    let mut em = vec![0.0f32; IMAGE_PIXELS];
    let mut had = vec![0.0f32; IMAGE_PIXELS];
    let position = |rng: &mut ChaCha8Rng| {
        (
            cfg.constituent_scatter * normal(rng),
            cfg.constituent_scatter * normal(rng),
        )
    };

    let em_share = cfg.modes.em_fraction[mode] * visible_pt;
    let charged_share = visible_pt - em_share;
    let n_charged = cfg.modes.charged_multiplicity[mode];
    // n_charged tracks plus one hadronic shower share the charged energy
    let weights = dirichlet_flat(rng, n_charged + 1);
    for w in &weights[..n_charged] {
        let (de, dp) = position(rng);
        grid.deposit_point(&mut tracker, de, dp, charged_share * w);
    }
    let (de, dp) = position(rng);
    grid.deposit_spread(&mut had, de, dp, charged_share * weights[n_charged], cfg.had_spread_pixels);
    let (de, dp) = position(rng);
    grid.deposit_spread(&mut em, de, dp, em_share, cfg.em_spread_pixels);

    for image in [&mut tracker, &mut em, &mut had] {
        for px in image.iter_mut() {
            *px += (cfg.pixel_noise * normal(rng)).abs() as f32;
        }
    }

    Ok(TauCandidate {
        jet,
        images: [tracker, em, had],
        truth,
        decay_mode: mode,
        visible_fraction: fraction,
        visible_pt,
    })
}

/// Generates one event of the given class.
pub fn sample_event(rng: &mut ChaCha8Rng, cfg: &GeneratorConfig, label: u8) -> Result<Event, DataError> {
    let mass = sample_parent_mass(rng, cfg, label);
    let pt = sample_parent_pt(rng, cfg);
    let rapidity = cfg.parent_rapidity_max * (2.0 * rng.gen::<f64>() - 1.0);
    let phi = PI * (2.0 * rng.gen::<f64>() - 1.0);
    let mt = (mass * mass + pt * pt).sqrt();
    let parent = LorentzVector::new(mt * rapidity.cosh(), pt * phi.cos(), pt * phi.sin(), mt * rapidity.sinh());

    let e_star = 0.5 * mass;
    let p_star = (e_star * e_star - cfg.tau_mass * cfg.tau_mass).sqrt();
    let cos_t = 2.0 * rng.gen::<f64>() - 1.0;
    let sin_t = (1.0 - cos_t * cos_t).max(0.0).sqrt();
    let az = 2.0 * PI * rng.gen::<f64>();
    let dir = [sin_t * az.cos(), sin_t * az.sin(), cos_t];
    let beta = parent.velocity();
    let tau_a = LorentzVector::new(e_star, p_star * dir[0], p_star * dir[1], p_star * dir[2]).boost(beta);
    let tau_b = LorentzVector::new(e_star, -p_star * dir[0], -p_star * dir[1], -p_star * dir[2]).boost(beta);

    let first = simulate_tau(rng, cfg, &tau_a)?;
    let second = simulate_tau(rng, cfg, &tau_b)?;
    let taus = if first.jet.pt >= second.jet.pt {
        [first, second]
    } else {
        [second, first]
    };
    Ok(Event {
        label,
        parent_mass: mass,
        taus,
    })
}
