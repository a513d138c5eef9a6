//! Training objectives. Every reduction is a mean, so the weights do not
//! depend on how many points, patches or tokens a batch holds.

use serde::{Deserialize, Serialize};

use crate::models::{MaskLogits, MaskSource};
use crate::tensor::{Graph, Result, Tensor, TensorError, Var};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossWeights {
    pub lambda_mask: f64,
    pub lambda_forecast: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            lambda_mask: 1.0 / 16.0,
            lambda_forecast: 0.5,
        }
    }
}

impl LossWeights {
    /// Weights must be non-negative; a zero weight disables its term.
    pub fn validate(&self) -> std::result::Result<(), String> {
        for (name, w) in [
            ("lambda_mask", self.lambda_mask),
            ("lambda_forecast", self.lambda_forecast),
        ] {
            if !(w.is_finite() && w >= 0.0) {
                return Err(format!("loss.{name} must be finite and non-negative, got {w}"));
            }
        }
        Ok(())
    }
}

fn same_shape(op: &'static str, a: Var<'_>, b: Var<'_>) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(TensorError::Dim {
            op,
            lhs: a.shape(),
            rhs: b.shape(),
        });
    }
    Ok(())
}

/// Mean absolute difference between predicted and expert residuals.
pub fn action_loss<'g>(pred: Var<'g>, expert: Var<'g>) -> Result<Var<'g>> {
    same_shape("action_loss", pred, expert)?;
    pred.sub(expert)?.abs()?.mean()
}

/// Mean binary cross-entropy between mask logits and the 0/1 patch mask.
pub fn mask_loss<'g>(g: &'g Graph, logits: Var<'g>, target: &Tensor) -> Result<Var<'g>> {
    if logits.shape() != target.shape() {
        return Err(TensorError::Dim {
            op: "mask_loss",
            lhs: logits.shape(),
            rhs: target.shape().to_vec(),
        });
    }
    g.bce_with_logits(logits, target)
}

/// Mean absolute difference between forecast and target features. The target
/// must be gradient-opaque: without that the encoder can collapse both sides.
pub fn forecast_loss<'g>(gt: Var<'g>, pred: Var<'g>) -> Result<Var<'g>> {
    if !gt.is_stop_grad() {
        return Err(TensorError::Contract(
            "forecast target must be wrapped in stop_grad".into(),
        ));
    }
    same_shape("forecast_loss", pred, gt)?;
    pred.sub(gt)?.abs()?.mean()
}

pub fn total_base<'g>(action: Var<'g>, mask: Var<'g>, w: &LossWeights) -> Result<Var<'g>> {
    action.add(mask.scale(w.lambda_mask)?)
}

/// The async objective. The mask term must come from small-encoder tokens.
pub fn total_async<'g>(
    action: Var<'g>,
    mask: Option<(Var<'g>, MaskSource)>,
    forecast: Option<Var<'g>>,
    w: &LossWeights,
) -> Result<Var<'g>> {
    let mut total = action;
    if let Some((m, source)) = mask {
        if source != MaskSource::Small {
            return Err(TensorError::Contract(
                "async mask loss must be computed on small-encoder tokens".into(),
            ));
        }
        total = total.add(m.scale(w.lambda_mask)?)?;
    }
    if let Some(f) = forecast {
        total = total.add(f.scale(w.lambda_forecast)?)?;
    }
    Ok(total)
}

/// Component values of one evaluation of the objective.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossParts {
    pub total: f64,
    pub action: f64,
    pub mask: Option<f64>,
    pub forecast: Option<f64>,
}

/// Mask loss for `logits` against `target`, tagged with its source.
pub fn mask_term<'g>(g: &'g Graph, logits: MaskLogits<'g>, target: &Tensor) -> Result<(Var<'g>, MaskSource)> {
    Ok((mask_loss(g, logits.logits, target)?, logits.source))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn vars<'g>(g: &'g Graph, a: &[f64], b: &[f64]) -> (Var<'g>, Var<'g>) {
        let n = a.len();
        (
            g.variable(Tensor::new(vec![n / 2, 2], a.to_vec()).unwrap()),
            g.constant(Tensor::new(vec![n / 2, 2], b.to_vec()).unwrap()),
        )
    }

    #[test]
    fn action_loss_is_mean_absolute_difference() {
        let g = Graph::new();
        let e: Vec<f64> = (0..28).map(|i| (i as f64 * 0.37).sin()).collect();
        let (p, x) = vars(&g, &e, &e);
        assert_eq!(action_loss(p, x).unwrap().scalar(), 0.0);
        let shifted: Vec<f64> = e.iter().map(|v| v + 1.0).collect();
        let (p, x) = vars(&g, &shifted, &e);
        assert!((action_loss(p, x).unwrap().scalar() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn mask_loss_limits() {
        let g = Graph::new();
        let target = Tensor::new(vec![4, 8], (0..32).map(|i| (i % 3 == 0) as u8 as f64).collect()).unwrap();
        let zero = g.variable(Tensor::zeros(&[4, 8]));
        assert!((mask_loss(&g, zero, &target).unwrap().scalar() - 2f64.ln()).abs() < 1e-15);
        let sat: Vec<f64> = target
            .data()
            .iter()
            .map(|&y| if y > 0.5 { 30.0 } else { -30.0 })
            .collect();
        let sat = g.variable(Tensor::new(vec![4, 8], sat).unwrap());
        assert!(mask_loss(&g, sat, &target).unwrap().scalar() < 1e-9);
        let wrong = g.variable(Tensor::zeros(&[8, 4]));
        assert!(matches!(mask_loss(&g, wrong, &target), Err(TensorError::Dim { .. })));
    }

    #[test]
    fn forecast_loss_requires_stop_grad_target() {
        let g = Graph::new();
        let pred = g.variable(Tensor::ones(&[8, 4]));
        let gt = g.variable(Tensor::ones(&[8, 4]));
        assert!(matches!(forecast_loss(gt, pred), Err(TensorError::Contract(_))));
        assert_eq!(forecast_loss(gt.stop_grad(), pred).unwrap().scalar(), 0.0);
    }

    #[test]
    fn weighted_totals() {
        let g = Graph::new();
        let w = LossWeights::default();
        let s = |x: f64| g.constant(Tensor::scalar(x));
        assert_eq!(total_base(s(0.0), s(0.0), &w).unwrap().scalar(), 0.0);
        assert_eq!(total_base(s(1.0), s(16.0), &w).unwrap().scalar(), 2.0);
        assert!((total_base(s(0.5), s(0.8), &w).unwrap().scalar() - 0.55).abs() < 1e-15);
        let t = total_async(s(1.0), Some((s(16.0), MaskSource::Small)), Some(s(2.0)), &w).unwrap();
        assert_eq!(t.scalar(), 3.0);
        let bad = total_async(s(1.0), Some((s(16.0), MaskSource::Large)), None, &w);
        assert!(matches!(bad, Err(TensorError::Contract(_))));
    }
}
