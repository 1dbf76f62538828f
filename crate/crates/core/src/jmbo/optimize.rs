use rayon::prelude::*;

use crate::body::{BodyModel, BodyParams, ParamLayout};
use crate::error::{Error, Result};

use super::loss::{loss_head_with_gradient, loss_landmarks, render_terms_serial, total_loss};
use super::{GroupValues, JmboConfig, JmboResult, LossBreakdown, TraceRecord, ViewObservation};

/// Step halvings tried per iteration before giving up on it.
const MAX_HALVINGS: usize = 6;

#[derive(Clone, Copy, PartialEq, Eq)]
enum Group {
    Shape,
    Pose,
    Translation,
}

fn group_of(layout: &ParamLayout, p: usize) -> Group {
    if p < layout.shape_count {
        Group::Shape
    } else if p < layout.translation() {
        Group::Pose
    } else {
        Group::Translation
    }
}

fn pick(values: &GroupValues, g: Group) -> f64 {
    match g {
        Group::Shape => values.shape,
        Group::Pose => values.pose,
        Group::Translation => values.translation,
    }
}

fn params_at(x: &[f64], layout: &ParamLayout) -> Result<BodyParams> {
    let mut p = BodyParams::from_vector(x, layout.shape_count, layout.joint_count)?;
    p.clamp_shape();
    Ok(p)
}

/// Gradient of the weighted total: central differences for the silhouette
/// and normal terms, analytic for the landmark and head terms.
fn gradient(x: &[f64], model: &BodyModel, views: &[ViewObservation], cfg: &JmboConfig) -> Result<Vec<f64>> {
    let layout = model.layout();
    let params = params_at(x, &layout)?;
    let probe = |p: usize| -> Result<f64> {
        let eps = pick(&cfg.fd_epsilon, group_of(&layout, p));
        let mut side = [0.0; 2];
        for (k, sign) in [1.0, -1.0].into_iter().enumerate() {
            let mut xs = x.to_vec();
            xs[p] += sign * eps;
            let mesh = model.skin(&BodyParams::from_vector(&xs, layout.shape_count, layout.joint_count)?)?;
            let (sil, nrm) = render_terms_serial(&mesh, views)?;
            side[k] = sil + cfg.lambda_n * nrm;
        }
        Ok((side[0] - side[1]) / (2.0 * eps))
    };
    let fd: Vec<Result<f64>> = (0..layout.len()).into_par_iter().map(probe).collect();
    let mut grad = fd.into_iter().collect::<Result<Vec<f64>>>()?;
    if cfg.lambda_l > 0.0 {
        let lm = loss_landmarks(&params, model, views)?;
        for (g, d) in grad.iter_mut().zip(&lm.gradient) {
            *g += cfg.lambda_l * d;
        }
    }
    if cfg.lambda_h > 0.0 {
        let (_, hg) = loss_head_with_gradient(&params, model)?;
        for (g, d) in grad.iter_mut().zip(&hg) {
            *g += cfg.lambda_h * d;
        }
    }
    Ok(grad)
}

/// Normalization block of parameter `p`: shape and translation are one
/// block each, every joint's axis-angle triple is its own block.
fn block_of(layout: &ParamLayout, p: usize) -> usize {
    match group_of(layout, p) {
        Group::Shape => 0,
        Group::Pose => 1 + (p - layout.shape_count) / 3,
        Group::Translation => 1 + layout.joint_count,
    }
}

/// Moves along the negative gradient, scaled so the largest component of
/// each block moves by exactly its group's step. Per-joint blocks keep weak
/// joints (the head under a small regularizer) from being starved by joints
/// with large silhouette gradients.
fn descend(x: &[f64], grad: &[f64], steps: &GroupValues, layout: &ParamLayout) -> Vec<f64> {
    let mut peak = vec![0.0f64; layout.joint_count + 2];
    for (p, g) in grad.iter().enumerate() {
        let b = block_of(layout, p);
        peak[b] = peak[b].max(g.abs());
    }
    x.iter()
        .zip(grad)
        .enumerate()
        .map(|(p, (&xi, &gi))| {
            let m = peak[block_of(layout, p)];
            if m > 0.0 {
                xi - pick(steps, group_of(layout, p)) * gi / m
            } else {
                xi
            }
        })
        .collect()
}

fn scaled(v: &GroupValues, f: f64) -> GroupValues {
    GroupValues {
        shape: v.shape * f,
        pose: v.pose * f,
        translation: v.translation * f,
    }
}

fn capped(v: &GroupValues, cap: &GroupValues) -> GroupValues {
    GroupValues {
        shape: v.shape.min(cap.shape),
        pose: v.pose.min(cap.pose),
        translation: v.translation.min(cap.translation),
    }
}

/// Accepted-step first-order descent on the weighted total loss. A trial
/// step is kept only if it strictly lowers the total; otherwise every group
/// step is halved and the trial repeated. Accepted iterations double the
/// steps again, never beyond the configured sizes.
pub fn optimize(
    model: &BodyModel,
    views: &[ViewObservation],
    init: &BodyParams,
    cfg: &JmboConfig,
) -> Result<JmboResult> {
    cfg.validate()?;
    if views.is_empty() {
        return Err(Error::EmptyInput("at least one view is required".into()));
    }
    init.check(model)
        .map_err(|e| Error::InvalidInitialization(e.to_string()))?;
    let layout = model.layout();
    let mut x = init.to_vector();
    let mut current: LossBreakdown = total_loss(&params_at(&x, &layout)?, model, views, cfg)?;
    if !current.total.is_finite() {
        return Err(Error::InvalidInitialization(format!(
            "initial loss is {}",
            current.total
        )));
    }
    let mut trace = vec![TraceRecord {
        iteration: 0,
        loss: current,
    }];
    let mut steps = cfg.step;
    let mut stalled = 0;
    let mut iterations_run = 0;
    for iteration in 1..=cfg.max_iterations {
        iterations_run = iteration;
        let grad = gradient(&x, model, views, cfg)?;
        let previous = current.total;
        for _ in 0..=MAX_HALVINGS {
            let candidate = descend(&x, &grad, &steps, &layout);
            let cand_params = params_at(&candidate, &layout)?;
            let loss = total_loss(&cand_params, model, views, cfg)?;
            if loss.total < current.total {
                x = cand_params.to_vector();
                current = loss;
                steps = capped(&scaled(&steps, 2.0), &cfg.step);
                break;
            }
            steps = scaled(&steps, 0.5);
        }
        trace.push(TraceRecord {
            iteration,
            loss: current,
        });
        log::debug!("jmbo iteration {iteration}: total {:.6}", current.total);
        let relative = if previous > 0.0 {
            (previous - current.total) / previous
        } else {
            0.0
        };
        stalled = if relative < cfg.tolerance { stalled + 1 } else { 0 };
        if stalled >= cfg.patience {
            break;
        }
    }
    let params = params_at(&x, &layout)?;
    let behind_camera = loss_landmarks(&params, model, views)?.behind_camera;
    Ok(JmboResult {
        params,
        loss_trace: trace,
        iterations_run,
        behind_camera,
    })
}
