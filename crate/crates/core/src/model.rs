//! Scenario data model: array geometry, user channels, angle grid and the
//! desired radar beampattern.

use std::f64::consts::PI;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, invalid, Error, Result};

pub type CVector = DVector<Complex64>;
pub type CMatrix = DMatrix<Complex64>;

/// Converts a power in dBm to linear milliwatts.
pub fn dbm_to_linear(dbm: f64) -> f64 {
    10f64.powf(dbm / 10.0)
}

pub fn linear_to_dbm(mw: f64) -> f64 {
    10.0 * mw.log10()
}

/// Uniform linear array steering vector, element `n` = exp(j 2π n δ sin θ).
pub fn steering_vector(theta: f64, num_antennas: usize, spacing: f64) -> CVector {
    let phase = 2.0 * PI * spacing * theta.sin();
    DVector::from_iterator(
        num_antennas,
        (0..num_antennas).map(|n| Complex64::from_polar(1.0, phase * n as f64)),
    )
}

/// Steering vectors for every grid angle, one column per angle.
pub fn steering_matrix(grid: &[f64], num_antennas: usize, spacing: f64) -> CMatrix {
    let mut a = CMatrix::zeros(num_antennas, grid.len());
    for (m, &theta) in grid.iter().enumerate() {
        a.set_column(m, &steering_vector(theta, num_antennas, spacing));
    }
    a
}

/// Draws `num_users` i.i.d. circularly-symmetric unit-variance complex
/// Gaussian channels of length `num_antennas`.
pub fn generate_channels(num_users: usize, num_antennas: usize, seed: u64) -> Vec<CVector> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..num_users)
        .map(|_| complex_gaussian_vector(num_antennas, &mut rng))
        .collect()
}

pub(crate) fn complex_gaussian_vector<R: rand::Rng + ?Sized>(len: usize, rng: &mut R) -> CVector {
    let scale = std::f64::consts::FRAC_1_SQRT_2;
    DVector::from_iterator(
        len,
        (0..len).map(|_| {
            let re: f64 = StandardNormal.sample(rng);
            let im: f64 = StandardNormal.sample(rng);
            Complex64::new(re * scale, im * scale)
        }),
    )
}

/// Uniform grid from `start_deg` to `stop_deg` inclusive, returned in radians.
pub fn angle_grid_degrees(start_deg: f64, stop_deg: f64, step_deg: f64) -> Result<Vec<f64>> {
    if !(step_deg > 0.0) || stop_deg < start_deg {
        return Err(invalid("angle grid needs step > 0 and stop >= start"));
    }
    let count = ((stop_deg - start_deg) / step_deg + 1e-9).floor() as usize + 1;
    Ok((0..count)
        .map(|i| (start_deg + i as f64 * step_deg).to_radians())
        .collect())
}

/// Rectangular mainlobe: `peak_level` within `width/2` of `center`, zero elsewhere.
pub fn desired_beampattern(
    grid: &[f64],
    center: f64,
    width: f64,
    peak_level: f64,
) -> Result<Vec<f64>> {
    if grid.is_empty() {
        return Err(invalid("desired beampattern needs a non-empty grid"));
    }
    if !(width > 0.0) {
        return Err(invalid(format!("mainlobe width must be positive, got {width}")));
    }
    if peak_level < 0.0 {
        return Err(invalid("peak level must be nonnegative"));
    }
    let (lo, hi) = (grid[0], grid[grid.len() - 1]);
    if center < lo || center > hi {
        return Err(invalid("mainlobe center lies outside the grid span"));
    }
    // Half-width gets a small slack so that grid points generated in degrees
    // and converted to radians are not lost to rounding at the lobe edges.
    let half = 0.5 * width * (1.0 + 1e-12) + 1e-12;
    let mut pattern: Vec<f64> = grid
        .iter()
        .map(|&theta| if (theta - center).abs() <= half { peak_level } else { 0.0 })
        .collect();
    if !pattern.contains(&peak_level) {
        // Narrower than the grid spacing: light up the nearest grid point.
        let nearest = grid
            .iter()
            .enumerate()
            .min_by(|a, b| (a.1 - center).abs().total_cmp(&(b.1 - center).abs()))
            .map(|(i, _)| i)
            .unwrap_or(0);
        pattern[nearest] = peak_level;
    }
    Ok(pattern)
}

/// Normalised correlation |hᴴa(θ)| / (‖h‖‖a(θ)‖) over the grid.
pub fn equivalent_channel_amplitude(h: &CVector, grid: &[f64], spacing: f64) -> Result<Vec<f64>> {
    let h_norm = h.norm();
    if h_norm == 0.0 {
        return Err(invalid("channel vector is zero"));
    }
    let nt = h.len();
    let a_norm = (nt as f64).sqrt();
    Ok(grid
        .iter()
        .map(|&theta| {
            let a = steering_vector(theta, nt, spacing);
            (h.dotc(&a).norm() / (h_norm * a_norm)).min(1.0)
        })
        .collect())
}

/// One dual-function array deployment: geometry, users and radar template.
#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub num_antennas: usize,
    pub num_users: usize,
    pub channels: Vec<CVector>,
    pub element_spacing: f64,
    pub angle_grid: Vec<f64>,
    pub desired_pattern: Vec<f64>,
    pub user_weights: Vec<f64>,
    pub power_budget: f64,
    pub noise_power: f64,
    pub rng_seed: u64,
}

impl Scenario {
    /// Checks every structural invariant; all constructors funnel through here.
    pub fn validate(&self) -> Result<()> {
        let (nt, k) = (self.num_antennas, self.num_users);
        if nt == 0 || k == 0 {
            return Err(invalid("need at least one antenna and one user"));
        }
        check_dim("channels", k, self.channels.len())?;
        for h in &self.channels {
            check_dim("channel length", nt, h.len())?;
            if h.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
                return Err(invalid("channel entries must be finite"));
            }
        }
        check_dim("user weights", k, self.user_weights.len())?;
        if self.angle_grid.is_empty() {
            return Err(invalid("angle grid is empty"));
        }
        check_dim("desired pattern", self.angle_grid.len(), self.desired_pattern.len())?;
        let half_pi = PI / 2.0 + 1e-12;
        if self.angle_grid.iter().any(|t| t.abs() > half_pi) {
            return Err(invalid("angle grid must lie within [-pi/2, pi/2]"));
        }
        if self.angle_grid.windows(2).any(|w| w[1] <= w[0]) {
            return Err(invalid("angle grid must be strictly increasing"));
        }
        if self.desired_pattern.iter().any(|&p| !(p >= 0.0)) {
            return Err(invalid("desired pattern levels must be nonnegative"));
        }
        if self.user_weights.iter().any(|&w| !(w > 0.0)) {
            return Err(invalid("user weights must be positive"));
        }
        if !(self.power_budget > 0.0) || !(self.noise_power > 0.0) {
            return Err(invalid("power budget and noise power must be positive"));
        }
        if !(self.element_spacing > 0.0) {
            return Err(invalid("element spacing must be positive"));
        }
        Ok(())
    }

    /// Number of precoded streams (one common plus one private per user).
    pub fn num_streams(&self) -> usize {
        self.num_users + 1
    }

    /// Per-antenna power target P_t / N_t.
    pub fn antenna_power(&self) -> f64 {
        self.power_budget / self.num_antennas as f64
    }

    pub fn steering_matrix(&self) -> CMatrix {
        steering_matrix(&self.angle_grid, self.num_antennas, self.element_spacing)
    }

    /// Parses the TOML scenario format.
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let file: ScenarioFile = toml::from_str(text).map_err(|e| Error::Parse(e.to_string()))?;
        file.try_into()
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string_pretty(&ScenarioFile::from(self)).map_err(|e| Error::Parse(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_toml_str(&text)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_toml_string()?).map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })
    }
}

/// Parameters from which a [`Scenario`] is generated. Defaults reproduce the
/// two-user, four-antenna setup with a 20° mainlobe at broadside.
#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioConfig {
    pub num_antennas: usize,
    pub num_users: usize,
    pub element_spacing: f64,
    pub grid_start_deg: f64,
    pub grid_stop_deg: f64,
    pub grid_step_deg: f64,
    pub mainlobe_center_deg: f64,
    pub mainlobe_width_deg: f64,
    pub peak_level: f64,
    /// `None` means equal weights 1/K.
    pub user_weights: Option<Vec<f64>>,
    pub power_budget: f64,
    pub noise_power: f64,
    pub seed: u64,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            num_antennas: 4,
            num_users: 2,
            element_spacing: 0.5,
            grid_start_deg: -90.0,
            grid_stop_deg: 90.0,
            grid_step_deg: 1.0,
            mainlobe_center_deg: 0.0,
            mainlobe_width_deg: 20.0,
            peak_level: 1.0,
            user_weights: None,
            power_budget: dbm_to_linear(20.0),
            noise_power: dbm_to_linear(0.0),
            seed: 0,
        }
    }
}

impl ScenarioConfig {
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn build(&self) -> Result<Scenario> {
        let grid = angle_grid_degrees(self.grid_start_deg, self.grid_stop_deg, self.grid_step_deg)?;
        let desired = desired_beampattern(
            &grid,
            self.mainlobe_center_deg.to_radians(),
            self.mainlobe_width_deg.to_radians(),
            self.peak_level,
        )?;
        let k = self.num_users;
        let weights = self
            .user_weights
            .clone()
            .unwrap_or_else(|| vec![1.0 / k.max(1) as f64; k]);
        let scenario = Scenario {
            num_antennas: self.num_antennas,
            num_users: k,
            channels: generate_channels(k, self.num_antennas, self.seed),
            element_spacing: self.element_spacing,
            angle_grid: grid,
            desired_pattern: desired,
            user_weights: weights,
            power_budget: self.power_budget,
            noise_power: self.noise_power,
            rng_seed: self.seed,
        };
        scenario.validate()?;
        Ok(scenario)
    }
}

/// On-disk form of [`Scenario`]; channels are interleaved `[re, im, re, im, ...]`.
#[derive(Debug, Clone, Serialize, Deserialize)]
struct ScenarioFile {
    num_antennas: usize,
    num_users: usize,
    element_spacing: f64,
    power_budget: f64,
    noise_power: f64,
    rng_seed: u64,
    user_weights: Vec<f64>,
    angle_grid: Vec<f64>,
    desired_pattern: Vec<f64>,
    channels: Vec<Vec<f64>>,
}

impl From<&Scenario> for ScenarioFile {
    fn from(s: &Scenario) -> Self {
        Self {
            num_antennas: s.num_antennas,
            num_users: s.num_users,
            element_spacing: s.element_spacing,
            power_budget: s.power_budget,
            noise_power: s.noise_power,
            rng_seed: s.rng_seed,
            user_weights: s.user_weights.clone(),
            angle_grid: s.angle_grid.clone(),
            desired_pattern: s.desired_pattern.clone(),
            channels: s
                .channels
                .iter()
                .map(|h| h.iter().flat_map(|z| [z.re, z.im]).collect())
                .collect(),
        }
    }
}

impl TryFrom<ScenarioFile> for Scenario {
    type Error = Error;

    fn try_from(f: ScenarioFile) -> Result<Self> {
        let channels = f
            .channels
            .iter()
            .map(|pairs| {
                if pairs.len() % 2 != 0 {
                    return Err(invalid("channel data must be interleaved re/im pairs"));
                }
                Ok(DVector::from_iterator(
                    pairs.len() / 2,
                    pairs.chunks_exact(2).map(|c| Complex64::new(c[0], c[1])),
                ))
            })
            .collect::<Result<Vec<_>>>()?;
        let scenario = Scenario {
            num_antennas: f.num_antennas,
            num_users: f.num_users,
            channels,
            element_spacing: f.element_spacing,
            angle_grid: f.angle_grid,
            desired_pattern: f.desired_pattern,
            user_weights: f.user_weights,
            power_budget: f.power_budget,
            noise_power: f.noise_power,
            rng_seed: f.rng_seed,
        };
        scenario.validate()?;
        Ok(scenario)
    }
}

/// Multiple-access scheme: rate splitting with a common stream, or the
/// private-streams-only baseline with the common column held at zero.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Method {
    Rsma,
    Sdma,
}

impl Method {
    pub fn label(self) -> &'static str {
        match self {
            Method::Rsma => "RSMA",
            Method::Sdma => "SDMA",
        }
    }
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.label())
    }
}

impl std::str::FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "rsma" | "rs" => Ok(Method::Rsma),
            "sdma" | "mu-lp" => Ok(Method::Sdma),
            other => Err(invalid(format!("unknown method `{other}`"))),
        }
    }
}

/// Precoders and message split produced by a design run.
#[derive(Debug, Clone, PartialEq)]
pub struct PrecoderSolution {
    /// N_t × (K+1); column 0 is the common stream.
    pub precoders: CMatrix,
    pub common_rate_allocation: Vec<f64>,
    pub pattern_scale: f64,
}

impl PrecoderSolution {
    pub fn common_precoder(&self) -> CVector {
        self.precoders.column(0).into_owned()
    }

    pub fn private_precoder(&self, user: usize) -> CVector {
        self.precoders.column(user + 1).into_owned()
    }

    /// Largest relative deviation of a row power from `target`.
    pub fn per_antenna_error(&self, target: f64) -> f64 {
        self.precoders
            .row_iter()
            .map(|row| (row.norm_squared() - target).abs() / target)
            .fold(0.0, f64::max)
    }
}
