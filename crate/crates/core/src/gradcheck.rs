//! Central-difference checks of every analytic gradient on seeded random instances.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::drwm::{bce_gradient, bce_loss, drwm_forward};
use crate::error::{Error, Result};
use crate::linear::{LinearGrad, LinearHead};
use crate::losses::{ce_gradient, ce_loss, id_logits, triplet_gradient, triplet_loss, TripletBatch};
use crate::model::{CharacterId, ContextFeatures, RelationType};

pub const DEFAULT_STEP: f64 = 1e-5;
pub const DEFAULT_TOLERANCE: f64 = 1e-4;
pub const DEFAULT_INSTANCES: usize = 100;

/// Deliberately corrupts one analytic gradient so the checker can be shown to fire.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Fault {
    #[default]
    None,
    Bce,
    Ce,
    Triplet,
}

const FAULT_SCALE: f64 = 1.01;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GradcheckConfig {
    pub step: f64,
    pub tolerance: f64,
    pub instances: usize,
    pub seed: u64,
    #[serde(default)]
    pub fault: Fault,
}

impl Default for GradcheckConfig {
    fn default() -> Self {
        Self {
            step: DEFAULT_STEP,
            tolerance: DEFAULT_TOLERANCE,
            instances: DEFAULT_INSTANCES,
            seed: 0,
            fault: Fault::None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckResult {
    pub name: String,
    pub instances: usize,
    /// Worst per-instance relative error.
    pub max_relative_error: f64,
    pub tolerance: f64,
    pub passed: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GradcheckReport {
    pub config: GradcheckConfig,
    pub checks: Vec<CheckResult>,
}

impl GradcheckReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }
}

/// `max |a - n| / max(max |a|, max |n|, 1e-8)` over one instance's gradient entries.
pub fn relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    let diff = analytic
        .iter()
        .zip(numeric)
        .map(|(a, n)| (a - n).abs())
        .fold(0.0, f64::max);
    let scale = analytic.iter().chain(numeric).map(|x| x.abs()).fold(1e-8, f64::max);
    diff / scale
}

/// Central differences of `f` around `x`, one coordinate at a time.
pub fn numeric_gradient(x: &[f64], h: f64, mut f: impl FnMut(&[f64]) -> f64) -> Vec<f64> {
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|i| {
            let orig = probe[i];
            probe[i] = orig + h;
            let up = f(&probe);
            probe[i] = orig - h;
            let down = f(&probe);
            probe[i] = orig;
            (up - down) / (2.0 * h)
        })
        .collect()
}

fn uniform_vec(rng: &mut ChaCha8Rng, n: usize, scale: f64) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-scale..scale)).collect()
}

fn head_params(head: &LinearHead) -> Vec<f64> {
    head.weights.iter().chain(&head.bias).copied().collect()
}

fn head_from(template: &LinearHead, params: &[f64]) -> LinearHead {
    let split = template.weights.len();
    LinearHead {
        outputs: template.outputs,
        inputs: template.inputs,
        weights: params[..split].to_vec(),
        bias: params[split..].to_vec(),
    }
}

fn grad_params(g: &LinearGrad) -> Vec<f64> {
    g.weights.iter().chain(&g.bias).copied().collect()
}

fn finish(name: &str, errors: &[f64], tolerance: f64) -> CheckResult {
    let worst = errors.iter().copied().fold(0.0, f64::max);
    CheckResult {
        name: name.to_string(),
        instances: errors.len(),
        max_relative_error: worst,
        tolerance,
        passed: !errors.is_empty() && worst <= tolerance && errors.iter().all(|e| e.is_finite()),
    }
}

fn faulted(mut g: Vec<f64>, on: bool) -> Vec<f64> {
    if on {
        g.iter_mut().for_each(|x| *x *= FAULT_SCALE);
    }
    g
}

/// Relation head gradient of the clamped mean BCE.
pub fn check_bce(cfg: &GradcheckConfig) -> Result<CheckResult> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(1);
    let eps = 1e-7;
    let mut errors = Vec::with_capacity(cfg.instances);
    for _ in 0..cfg.instances {
        let (dv, dt) = (rng.random_range(1..6), rng.random_range(1..6));
        let ctx = ContextFeatures::new(uniform_vec(&mut rng, dv, 1.0), uniform_vec(&mut rng, dt, 1.0));
        let head = LinearHead {
            outputs: RelationType::COUNT,
            inputs: dv + dt,
            weights: uniform_vec(&mut rng, RelationType::COUNT * (dv + dt), 1.0),
            bias: uniform_vec(&mut rng, RelationType::COUNT, 1.0),
        };
        let truth: Vec<u8> = (0..RelationType::COUNT).map(|_| rng.random_bool(0.4) as u8).collect();
        let analytic = faulted(
            grad_params(&bce_gradient(&ctx, &head, &truth, eps)?),
            cfg.fault == Fault::Bce,
        );
        let numeric = numeric_gradient(&head_params(&head), cfg.step, |p| {
            let h = head_from(&head, p);
            bce_loss(&drwm_forward(&ctx, &h).expect("shape fixed"), &truth, eps).expect("labels fixed")
        });
        errors.push(relative_error(&analytic, &numeric));
    }
    Ok(finish("bce", &errors, cfg.tolerance))
}

/// Identity classifier gradient of the cross-entropy, with respect to the
/// head parameters and to the fused features.
pub fn check_ce(cfg: &GradcheckConfig) -> Result<CheckResult> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(2);
    let mut errors = Vec::with_capacity(cfg.instances);
    for _ in 0..cfg.instances {
        let classes = rng.random_range(2..8);
        let d = rng.random_range(1..8);
        let h_f = uniform_vec(&mut rng, d, 1.0);
        let head = LinearHead {
            outputs: classes,
            inputs: d,
            weights: uniform_vec(&mut rng, classes * d, 1.0),
            bias: uniform_vec(&mut rng, classes, 1.0),
        };
        let id = CharacterId(rng.random_range(0..classes));
        let g = ce_gradient(&h_f, &head, id)?;
        let mut analytic = grad_params(&g.head);
        analytic.extend(&g.features);
        let analytic = faulted(analytic, cfg.fault == Fault::Ce);

        let mut numeric = numeric_gradient(&head_params(&head), cfg.step, |p| {
            let h = head_from(&head, p);
            ce_loss(&id_logits(&h_f, &h).expect("shape fixed"), id).expect("id in range")
        });
        numeric.extend(numeric_gradient(&h_f, cfg.step, |x| {
            ce_loss(&id_logits(x, &head).expect("shape fixed"), id).expect("id in range")
        }));
        errors.push(relative_error(&analytic, &numeric));
    }
    Ok(finish("ce", &errors, cfg.tolerance))
}

/// Soft-margin triplet gradient with respect to every anchor, positive and negative entry.
pub fn check_triplet(cfg: &GradcheckConfig) -> Result<CheckResult> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(3);
    let mut errors = Vec::with_capacity(cfg.instances);
    for _ in 0..cfg.instances {
        let n = rng.random_range(1..4);
        let d = rng.random_range(1..6);
        let draw = |rng: &mut ChaCha8Rng| (0..n).map(|_| uniform_vec(rng, d, 1.0)).collect::<Vec<_>>();
        let batch = TripletBatch {
            anchors: draw(&mut rng),
            positives: draw(&mut rng),
            negatives: draw(&mut rng),
        };
        let g = triplet_gradient(&batch)?;
        let analytic: Vec<f64> = g
            .anchors
            .iter()
            .chain(&g.positives)
            .chain(&g.negatives)
            .flatten()
            .copied()
            .collect();
        let analytic = faulted(analytic, cfg.fault == Fault::Triplet);
        let flat: Vec<f64> = batch
            .anchors
            .iter()
            .chain(&batch.positives)
            .chain(&batch.negatives)
            .flatten()
            .copied()
            .collect();
        let numeric = numeric_gradient(&flat, cfg.step, |x| {
            let rows: Vec<Vec<f64>> = x.chunks(d).map(|c| c.to_vec()).collect();
            let b = TripletBatch {
                anchors: rows[..n].to_vec(),
                positives: rows[n..2 * n].to_vec(),
                negatives: rows[2 * n..].to_vec(),
            };
            triplet_loss(&b).expect("batch well formed")
        });
        errors.push(relative_error(&analytic, &numeric));
    }
    Ok(finish("triplet", &errors, cfg.tolerance))
}

pub fn run_gradcheck(cfg: &GradcheckConfig) -> Result<GradcheckReport> {
    if !(cfg.step > 0.0 && cfg.step.is_finite()) || !(cfg.tolerance > 0.0) || cfg.instances == 0 {
        return Err(Error::InvalidConfig(
            "gradcheck needs a positive step, tolerance and instance count".into(),
        ));
    }
    Ok(GradcheckReport {
        config: *cfg,
        checks: vec![check_bce(cfg)?, check_ce(cfg)?, check_triplet(cfg)?],
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn all_gradients_pass() {
        let rep = run_gradcheck(&GradcheckConfig::default()).unwrap();
        assert!(rep.passed(), "{:?}", rep.checks);
        assert!(rep.checks.iter().all(|c| c.instances == DEFAULT_INSTANCES));
    }

    #[test]
    fn injected_faults_are_caught() {
        for fault in [Fault::Bce, Fault::Ce, Fault::Triplet] {
            let rep = run_gradcheck(&GradcheckConfig {
                fault,
                instances: 10,
                ..GradcheckConfig::default()
            })
            .unwrap();
            let failed: Vec<&str> = rep
                .checks
                .iter()
                .filter(|c| !c.passed)
                .map(|c| c.name.as_str())
                .collect();
            assert_eq!(failed.len(), 1, "{fault:?}");
        }
    }

    #[test]
    fn numeric_gradient_of_quadratic() {
        let g = numeric_gradient(&[1.0, -2.0], 1e-5, |x| x[0] * x[0] + 3.0 * x[1]);
        assert!((g[0] - 2.0).abs() < 1e-9 && (g[1] - 3.0).abs() < 1e-9);
    }

    #[test]
    fn relative_error_uses_the_larger_scale() {
        assert_eq!(relative_error(&[2.0], &[1.0]), 0.5);
        assert_eq!(relative_error(&[0.0], &[0.0]), 0.0);
    }

    #[test]
    fn bad_config_is_rejected() {
        let cfg = GradcheckConfig {
            instances: 0,
            ..GradcheckConfig::default()
        };
        assert!(run_gradcheck(&cfg).is_err());
    }
}
