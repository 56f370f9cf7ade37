//! Compound scaling: joint depth/width/resolution multipliers driven by a
//! single exponent, the resolution ladder, and the coefficient grid search
//! with its rounding-collision dedupe rule.

use serde::{Deserialize, Serialize};

use crate::arch::{ConfigError, Model, ModelConfig};

/// Upper slack allowed on the α·β²·γ² ≈ 2 constraint; the accepted
/// published grids land between roughly 1.76 and 1.92.
pub const CONSTRAINT_TOLERANCE: f64 = 0.05;

pub const BASE_RESOLUTION: usize = 60;
pub const MAX_RESOLUTION: usize = 120;

/// The (α, β, γ) exponent bases plus the compound exponent φ.
///
/// The product constraint is advisory rather than structural: a grid search
/// legitimately scores candidates that violate it (and then rejects them),
/// so construction stays permissive and [`ScalingCoefficients::satisfies_constraint`]
/// reports compliance.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScalingCoefficients {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    pub phi: u32,
}

impl ScalingCoefficients {
    pub fn new(alpha: f64, beta: f64, gamma: f64, phi: u32) -> Self {
        Self {
            alpha,
            beta,
            gamma,
            phi,
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.alpha < 1.0 || self.beta < 1.0 || self.gamma < 1.0 {
            return Err(ConfigError::Scaling(format!(
                "coefficients must be >= 1, got ({}, {}, {})",
                self.alpha, self.beta, self.gamma
            )));
        }
        Ok(())
    }

    pub fn product(&self) -> f64 {
        self.alpha * self.beta * self.beta * self.gamma * self.gamma
    }

    pub fn satisfies_constraint(&self) -> bool {
        self.product() <= 2.0 + CONSTRAINT_TOLERANCE
    }

    pub fn with_phi(mut self, phi: u32) -> Self {
        self.phi = phi;
        self
    }
}

/// Derived per-dimension multipliers d = αᵠ, w = βᵠ, r = γᵠ.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScalingMultipliers {
    pub depth: f64,
    pub width: f64,
    pub resolution: f64,
}

pub fn compound_multipliers(c: &ScalingCoefficients) -> ScalingMultipliers {
    ScalingMultipliers {
        depth: c.alpha.powi(c.phi as i32),
        width: c.beta.powi(c.phi as i32),
        resolution: c.gamma.powi(c.phi as i32),
    }
}

/// Grid-search coefficients used for the widened-residual ladder.
pub fn wrn_coefficients() -> ScalingCoefficients {
    ScalingCoefficients::new(1.1, 1.2, 1.1, 0)
}

/// Reference coefficients used for the EfficientNet ladder.
pub fn efficientnet_coefficients() -> ScalingCoefficients {
    ScalingCoefficients::new(1.2, 1.1, 1.1, 0)
}

/// Input resolution for a ladder rung: base·γᵠ rounded to the nearest
/// multiple of 10 and clamped to [60, 120].
pub fn resolve_resolution(base_px: usize, gamma: f64, phi: u32) -> usize {
    let raw = base_px as f64 * gamma.powi(phi as i32);
    let rounded = ((raw / 10.0).round() * 10.0) as usize;
    rounded.clamp(BASE_RESOLUTION, MAX_RESOLUTION)
}

/// Scales a base config by the compound multipliers. φ = 0 is the identity.
/// Only the convolutional families participate in the ladder.
pub fn apply_scaling(
    base: &ModelConfig,
    c: &ScalingCoefficients,
) -> Result<ModelConfig, ConfigError> {
    c.validate()?;
    base.validate()?;
    if c.phi == 0 {
        return Ok(base.clone());
    }
    if !base.family.is_convolutional() {
        return Err(ConfigError::Scaling(format!(
            "compound scaling is defined for the convolutional families, not {}",
            base.family.tag()
        )));
    }
    let m = compound_multipliers(c);
    let mut scaled = base.clone();
    scaled.depth_multiplier = base.depth_multiplier * m.depth;
    scaled.width_multiplier = base.width_multiplier * m.width;
    scaled.resolution = resolve_resolution(BASE_RESOLUTION, c.gamma, c.phi);
    Ok(scaled)
}

/// One evaluated grid-search survivor.
#[derive(Debug, Clone)]
pub struct GridOutcome {
    pub coefficients: ScalingCoefficients,
    pub config: ModelConfig,
    pub score: f64,
    pub product: f64,
    pub param_count: usize,
}

/// Scores scaling-coefficient candidates against a base config.
///
/// Candidates whose rounded architectures coincide are grouped first and
/// only the lowest-product representative of each group survives; survivors
/// are evaluated and ranked by score, ties broken by lower product, then by
/// the parameter count as a training-cost proxy. The returned order is
/// independent of evaluation order.
pub fn grid_search<F>(
    base: &ModelConfig,
    candidates: &[ScalingCoefficients],
    mut evaluate: F,
) -> Result<Vec<GridOutcome>, ConfigError>
where
    F: FnMut(&ModelConfig) -> f64,
{
    let mut groups: Vec<(Vec<usize>, usize)> = Vec::new(); // (signature, candidate idx)
    for (idx, cand) in candidates.iter().enumerate() {
        let config = apply_scaling(base, cand)?;
        let sig = config.layout_signature()?;
        match groups.iter_mut().find(|(s, _)| *s == sig) {
            Some((_, best)) => {
                if cand.product() < candidates[*best].product() {
                    *best = idx;
                }
            }
            None => groups.push((sig, idx)),
        }
    }
    let mut outcomes = Vec::with_capacity(groups.len());
    for (_, idx) in groups {
        let cand = candidates[idx];
        let config = apply_scaling(base, &cand)?;
        let score = evaluate(&config);
        let param_count = Model::<f32>::build(config.clone(), 0)
            .map_err(|e| ConfigError::Scaling(format!("candidate {idx}: {e}")))?
            .count_params();
        outcomes.push(GridOutcome {
            coefficients: cand,
            config,
            score,
            product: cand.product(),
            param_count,
        });
    }
    outcomes.sort_by(|a, b| {
        b.score
            .partial_cmp(&a.score)
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.product.partial_cmp(&b.product).unwrap_or(std::cmp::Ordering::Equal))
            .then(a.param_count.cmp(&b.param_count))
    });
    Ok(outcomes)
}

/// A ladder rung: one scaled model description.
#[derive(Debug, Clone)]
pub struct LadderRung {
    pub phi: u32,
    pub multipliers: ScalingMultipliers,
    pub resolution: usize,
    pub param_count: usize,
    pub config: ModelConfig,
}

/// Materializes the B0..B`max_phi` ladder for a base config.
pub fn scaling_ladder(
    base: &ModelConfig,
    coefficients: &ScalingCoefficients,
    max_phi: u32,
) -> Result<Vec<LadderRung>, ConfigError> {
    (0..=max_phi)
        .map(|phi| {
            let c = coefficients.with_phi(phi);
            let config = apply_scaling(base, &c)?;
            let param_count = Model::<f32>::build(config.clone(), 0)?.count_params();
            Ok(LadderRung {
                phi,
                multipliers: compound_multipliers(&c),
                resolution: config.resolution,
                param_count,
                config,
            })
        })
        .collect()
}
