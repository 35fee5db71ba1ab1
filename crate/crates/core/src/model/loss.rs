//! Spectrogram L1 and energy-decay losses on `[N', 2, F, T]` batches.

use crate::autodiff::{Graph, ReduceKind, Tensor, Var};
use crate::error::{Error, Result};

/// Decay curves below this fraction of the initial energy are clamped.
pub const DECAY_FLOOR: f64 = 1e-10;

fn check_batch(g: &Graph, pred: Var, target: &Tensor, op: &'static str) -> Result<()> {
    let s = g.shape(pred);
    if s.len() != 4 || s[1] != 2 || s != target.shape() {
        return Err(Error::ShapeMismatch {
            op,
            lhs: s.to_vec(),
            rhs: target.shape().to_vec(),
        });
    }
    Ok(())
}

/// Mean absolute log-magnitude error.
pub fn loss_stft(g: &mut Graph, pred: Var, target: &Tensor) -> Result<Var> {
    check_batch(g, pred, target, "loss_stft")?;
    let t = g.constant(target.clone());
    let diff = g.sub(pred, t)?;
    let abs = g.abs(diff)?;
    g.mean(abs)
}

/// Target decay curves `[N', 2, T]` in dB and the 0/1 mask of frames whose
/// decay is above the floor. The curve uses the same arithmetic as
/// [`decay_db`], so identical inputs give identical curves.
pub fn decay_target(target: &Tensor) -> Result<(Tensor, Tensor)> {
    let mut g = Graph::new();
    let t = g.constant(target.clone());
    let db = decay_db(&mut g, t)?;
    let db = g.value(db).clone();
    let shape = target.shape();
    let (bins, frames) = (shape[2], shape[3]);
    let mut mask = Vec::with_capacity(db.numel());
    for block in target.data().chunks(bins * frames) {
        let mut energy = vec![0.0; frames];
        for row in block.chunks(frames) {
            for (acc, &v) in energy.iter_mut().zip(row) {
                *acc += (v.exp() - 1.0).powi(2);
            }
        }
        let total: f64 = energy.iter().sum();
        let mut tail = total;
        for e in energy {
            mask.push(if tail > DECAY_FLOOR * total { 1.0 } else { 0.0 });
            tail -= e;
        }
    }
    if mask.iter().all(|&m| m == 0.0) {
        return Err(Error::InvalidDomain {
            op: "loss_edm",
            detail: "target has no energy".into(),
        });
    }
    Ok((db.clone(), Tensor::new(db.shape().to_vec(), mask)?))
}

/// Mean absolute difference of the energy decay curves in dB, over frames
/// where the target curve is above the floor.
pub fn loss_edm(g: &mut Graph, pred: Var, target: &Tensor) -> Result<Var> {
    check_batch(g, pred, target, "loss_edm")?;
    let (target_db, mask) = decay_target(target)?;
    let db = decay_db(g, pred)?;
    let t = g.constant(target_db);
    g.l1_masked(db, t, &mask)
}

/// Differentiable decay curves `[N', 2, T]` in dB, normalized per channel to
/// the first frame and clamped at the floor.
pub fn decay_db(g: &mut Graph, pred: Var) -> Result<Var> {
    let lin = g.exp(pred)?;
    let lin = g.add_scalar(lin, -1.0)?;
    let power = g.square(lin)?;
    let energy = g.reduce(power, ReduceKind::Sum, Some(2))?;
    let edc = g.reverse_cumsum(energy, 2)?;
    let first = g.narrow(edc, 2, 0, 1)?;
    let first = g.clamp_min(first, 1e-30)?;
    let ratio = g.div(edc, first)?;
    let ratio = g.clamp_min(ratio, DECAY_FLOOR)?;
    let ln = g.ln(ratio)?;
    g.scale(ln, 10.0 / std::f64::consts::LN_10)
}

/// `L_STFT + λ·L_EDM`.
pub fn loss_total(g: &mut Graph, pred: Var, target: &Tensor, lambda: f64) -> Result<Var> {
    if !(lambda >= 0.0 && lambda.is_finite()) {
        return Err(Error::InvalidArgument(format!("loss weight {lambda} must be >= 0")));
    }
    let stft = loss_stft(g, pred, target)?;
    if lambda == 0.0 {
        return Ok(stft);
    }
    let edm = loss_edm(g, pred, target)?;
    let edm = g.scale(edm, lambda)?;
    g.add(stft, edm)
}
