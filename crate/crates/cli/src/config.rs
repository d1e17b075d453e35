//! Experiment configuration: schema, flag overrides and canonical hashing.

use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context};
use difflab_core::rng::realization_seed;
use difflab_core::{CorrelatedSequenceSpec, Distribution, FrequencySet, GeneratorSpec, PerturbationModel, PointCap};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Analysis {
    Spectrum,
    Recover,
    Gamma,
    Escape,
    Strungaru,
    Structure,
    Hellinger,
    Slln,
}

impl Analysis {
    pub fn as_str(self) -> &'static str {
        match self {
            Analysis::Spectrum => "spectrum",
            Analysis::Recover => "recover",
            Analysis::Gamma => "gamma",
            Analysis::Escape => "escape",
            Analysis::Strungaru => "strungaru",
            Analysis::Structure => "structure",
            Analysis::Hellinger => "hellinger",
            Analysis::Slln => "slln",
        }
    }

    fn needs_frequencies(self) -> bool {
        matches!(self, Analysis::Spectrum | Analysis::Recover | Analysis::Structure)
    }

    fn needs_lambda(self) -> bool {
        matches!(self, Analysis::Gamma | Analysis::Strungaru | Analysis::Hellinger)
    }

    pub fn is_appendix(self) -> bool {
        matches!(self, Analysis::Hellinger | Analysis::Slln)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum FrequencySpec {
    Explicit {
        points: Vec<Vec<f64>>,
    },
    DualLattice {
        max_norm: f64,
    },
    DualModule {
        max_norm: f64,
        intensity_floor: f64,
        #[serde(default)]
        strongest: Option<usize>,
    },
    Grid {
        lo: Vec<f64>,
        hi: Vec<f64>,
        step: f64,
    },
}

impl FrequencySpec {
    pub fn build(&self, generator: &GeneratorSpec) -> anyhow::Result<FrequencySet> {
        Ok(match self {
            FrequencySpec::Explicit { points } => FrequencySet::explicit(generator.dim(), points.clone())?,
            FrequencySpec::DualLattice { max_norm } => {
                let lattice =
                    generator.lattice().ok_or_else(|| anyhow!("frequencies: dual_lattice needs a lattice generator"))?;
                FrequencySet::dual_lattice(&lattice, *max_norm)?
            }
            FrequencySpec::DualModule { max_norm, intensity_floor, strongest } => {
                let scheme =
                    generator.scheme().ok_or_else(|| anyhow!("frequencies: dual_module needs a cut-and-project generator"))?;
                let set = FrequencySet::dual_module(&scheme, *max_norm, *intensity_floor)?.without_zero();
                match strongest {
                    Some(n) => set.truncated(*n),
                    None => set,
                }
            }
            FrequencySpec::Grid { lo, hi, step } => FrequencySet::uniform_grid(lo, hi, *step)?,
        })
    }
}

/// Analysis parameters; every field has a default.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AnalysisParams {
    /// Frequency of the weights in `gamma`, `strungaru` and `hellinger`;
    /// defaults to the first configured frequency.
    pub lambda: Option<Vec<f64>>,
    /// Lag radius `K` of autocorrelations.
    pub lag_radius: f64,
    /// Realizations of the structure-factor average.
    pub realizations: usize,
    pub bump_width: f64,
    /// Known amplitudes `[re, im]` aligned with the frequencies; overrides the
    /// analytic or direct-summation reference.
    pub reference: Option<Vec<[f64; 2]>>,
    pub sequence: Option<CorrelatedSequenceSpec>,
    pub sequence_length: usize,
    /// Strong law of the truncated sequence instead of the centered one.
    pub truncated: bool,
    pub point_cap: u64,
}

impl Default for AnalysisParams {
    fn default() -> Self {
        AnalysisParams {
            lambda: None,
            lag_radius: 10.0,
            realizations: 50,
            bump_width: 0.05,
            reference: None,
            sequence: None,
            sequence_length: 1_000_000,
            truncated: false,
            point_cap: PointCap::default().0,
        }
    }
}

/// Pass/fail thresholds of `verify`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Tolerances {
    /// `|M_R - phi A| <= spectrum_abs` at the largest radius.
    pub spectrum_abs: f64,
    /// Deviation from `phi A` must fall at every step of the schedule.
    pub require_decreasing: bool,
    /// `|M / phi - A| <= recover_relative |A|` (absolute when `A = 0`).
    pub recover_relative: f64,
    pub gamma_zero_relative: f64,
    /// Nonzero lags must stay below `gamma_lag_factor sqrt(pairs) / Vol`.
    pub gamma_lag_factor: f64,
    pub gamma_seed_fraction: f64,
    pub escape_max: f64,
    pub strungaru_ratio: f64,
    /// Lower bound of the unperturbed positive control.
    pub strungaru_control: f64,
    pub structure_se: f64,
    pub structure_bragg_relative: f64,
    pub hellinger_se: f64,
    pub slln_max: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Tolerances {
            spectrum_abs: 0.02,
            require_decreasing: true,
            recover_relative: 0.03,
            gamma_zero_relative: 0.05,
            gamma_lag_factor: 4.0,
            gamma_seed_fraction: 0.95,
            escape_max: 1e-2,
            strungaru_ratio: 0.05,
            strungaru_control: 0.5,
            structure_se: 3.0,
            structure_bragg_relative: 0.05,
            hellinger_se: 3.0,
            slln_max: 0.01,
        }
    }
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("difflab-out")
}

fn default_cloak_threshold() -> f64 {
    difflab_core::DEFAULT_CLOAK_THRESHOLD
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub generator: GeneratorSpec,
    pub model: PerturbationModel,
    #[serde(default)]
    pub frequencies: Option<FrequencySpec>,
    pub r_schedule: Vec<f64>,
    /// A list, or `{"base": b, "count": n}` for `n` derived realization seeds.
    #[serde(default, deserialize_with = "seed_list")]
    pub seeds: Vec<u64>,
    pub analyses: Vec<Analysis>,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    #[serde(default = "default_cloak_threshold")]
    pub cloak_threshold: f64,
    #[serde(default)]
    pub plot: bool,
    #[serde(default)]
    pub params: AnalysisParams,
    #[serde(default)]
    pub tolerances: Tolerances,
}

#[derive(Deserialize)]
#[serde(untagged)]
enum SeedInput {
    List(Vec<u64>),
    Derived { base: u64, count: u64 },
}

fn seed_list<'de, D: serde::Deserializer<'de>>(d: D) -> Result<Vec<u64>, D::Error> {
    Ok(match SeedInput::deserialize(d)? {
        SeedInput::List(v) => v,
        SeedInput::Derived { base, count } => (0..count).map(|s| realization_seed(base, s)).collect(),
    })
}

/// Flags that replace config keys.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub output_dir: Option<PathBuf>,
    pub cloak_threshold: Option<f64>,
    pub plot: bool,
}

impl ExperimentConfig {
    /// Parses JSON, reporting the field path and line of the first error.
    pub fn from_json(text: &str, origin: &str) -> anyhow::Result<Self> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let cfg: ExperimentConfig = serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            let inner = e.into_inner();
            let field = if path == "." { "config".to_string() } else { path };
            anyhow!("{origin}:{}:{}: {field}: {inner}", inner.line(), inner.column())
        })?;
        cfg.validate().with_context(|| format!("{origin}: invalid config"))?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        Self::from_json(&text, &path.display().to_string())
    }

    pub fn apply(&mut self, o: &Overrides) -> anyhow::Result<()> {
        if let Some(seed) = o.seed {
            self.seeds = vec![seed];
            self.model.seed = seed;
        }
        if let Some(dir) = &o.output_dir {
            self.output_dir = dir.clone();
        }
        if let Some(t) = o.cloak_threshold {
            self.cloak_threshold = t;
        }
        self.plot |= o.plot;
        self.validate()
    }

    pub fn validate(&self) -> anyhow::Result<()> {
        if self.r_schedule.is_empty() {
            bail!("r_schedule: must be nonempty");
        }
        if self.r_schedule.iter().any(|r| !(r.is_finite() && *r > 0.0)) {
            bail!("r_schedule: radii must be positive and finite");
        }
        if self.r_schedule.windows(2).any(|w| w[1] <= w[0]) {
            bail!("r_schedule: must be strictly increasing");
        }
        if self.analyses.is_empty() {
            bail!("analyses: at least one analysis is required");
        }
        if self.model.dim() != self.generator.dim() {
            bail!("model.dist.dim: {} does not match the generator dimension {}", self.model.dim(), self.generator.dim());
        }
        if self.seeds.is_empty() && self.is_stochastic() {
            bail!("seeds: must be nonempty for stochastic analyses");
        }
        if !(self.cloak_threshold > 0.0 && self.cloak_threshold < 1.0) {
            bail!("cloak_threshold: must lie in (0, 1)");
        }
        if self.analyses.iter().any(|a| a.needs_frequencies()) && self.frequencies.is_none() {
            bail!("frequencies: required by the spectrum, recover and structure analyses");
        }
        if self.analyses.iter().any(|a| a.needs_lambda()) && self.params.lambda.is_none() && self.frequencies.is_none() {
            bail!("params.lambda: required by gamma, strungaru and hellinger when no frequencies are given");
        }
        if let Some(l) = &self.params.lambda {
            if l.len() != self.generator.dim() {
                bail!("params.lambda: expected {} coordinates, got {}", self.generator.dim(), l.len());
            }
        }
        if self.analyses.contains(&Analysis::Slln) && self.params.sequence.is_none() {
            bail!("params.sequence: required by the slln analysis");
        }
        if !(self.params.lag_radius > 0.0) {
            bail!("params.lag_radius: must be positive");
        }
        if !(self.params.bump_width > 0.0) {
            bail!("params.bump_width: must be positive");
        }
        Ok(())
    }

    /// False only when every analysis is a deterministic function of the
    /// point set (a Dirac field and no sequence draws).
    pub fn is_stochastic(&self) -> bool {
        !matches!(self.model.dist, Distribution::Dirac0 { .. }) || self.analyses.contains(&Analysis::Slln)
    }

    /// Seeds to run; a deterministic configuration without seeds runs once
    /// with the model seed.
    pub fn effective_seeds(&self) -> Vec<u64> {
        if self.seeds.is_empty() {
            vec![self.model.seed]
        } else {
            self.seeds.clone()
        }
    }

    pub fn max_radius(&self) -> f64 {
        *self.r_schedule.last().expect("validated nonempty")
    }

    /// Generation radius: the largest analysis radius plus room for points
    /// displaced into the ball.
    pub fn generation_radius(&self) -> f64 {
        self.max_radius() + (10.0 * self.model.dist.scale_equivalent()).max(1.0)
    }

    pub fn frequency_set(&self) -> anyhow::Result<Option<FrequencySet>> {
        self.frequencies.as_ref().map(|f| f.build(&self.generator)).transpose()
    }

    pub fn lambda(&self) -> anyhow::Result<Vec<f64>> {
        if let Some(l) = &self.params.lambda {
            return Ok(l.clone());
        }
        let freqs = self.frequency_set()?.ok_or_else(|| anyhow!("params.lambda: no frequency configured"))?;
        if freqs.is_empty() {
            bail!("frequencies: the set is empty");
        }
        Ok(freqs.get(0).to_vec())
    }

    pub fn explicit_reference(&self) -> Option<Vec<Complex64>> {
        self.params.reference.as_ref().map(|r| r.iter().map(|[re, im]| Complex64::new(*re, *im)).collect())
    }

    /// Canonical JSON of the semantic content: keys sorted, defaults filled
    /// in, output location and plotting left out.
    pub fn canonical_json(&self) -> String {
        let mut v = serde_json::to_value(self).expect("config serializes");
        if let Some(map) = v.as_object_mut() {
            map.remove("output_dir");
            map.remove("plot");
        }
        v.to_string()
    }

    pub fn hash(&self) -> String {
        let digest = Sha256::digest(self.canonical_json().as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }
}
