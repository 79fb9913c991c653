//! Negative-cosine objective, stop-gradient, and collapse monitoring.

use ndarray::{Array2, ArrayView1, Axis};

use crate::error::{Error, Result};
use crate::model::SimSiamForward;

/// Added to every norm inside the training loss so a zero vector cannot
/// produce NaN mid-run.
pub const NORM_EPS: f64 = 1e-12;

/// A scalar loss value.
#[derive(Clone, Copy, Debug, PartialEq, PartialOrd)]
pub struct LossValue(pub f64);

impl LossValue {
    pub fn value(self) -> f64 {
        self.0
    }
}

/// `-(p·z) / (‖p‖‖z‖)`. Errors on mismatched lengths or an exactly-zero
/// vector.
pub fn negative_cosine(p: &[f64], z: &[f64]) -> Result<f64> {
    if p.len() != z.len() {
        return Err(Error::Dimension(format!(
            "negative_cosine: lengths {} and {} differ",
            p.len(),
            z.len()
        )));
    }
    let np = p.iter().map(|v| v * v).sum::<f64>().sqrt();
    let nz = z.iter().map(|v| v * v).sum::<f64>().sqrt();
    if np == 0.0 || nz == 0.0 {
        return Err(Error::Degenerate(
            "negative_cosine of a zero-norm vector is undefined".into(),
        ));
    }
    let dot: f64 = p.iter().zip(z).map(|(a, b)| a * b).sum();
    Ok((-dot / (np * nz)).clamp(-1.0, 1.0))
}

/// An embedding batch that differentiation treats as a constant.
///
/// The value is untouched; the only effect is that loss gradients are never
/// routed back into whatever produced it.
#[derive(Clone, Debug, PartialEq)]
pub struct Detached(Array2<f64>);

impl Detached {
    pub fn value(&self) -> &Array2<f64> {
        &self.0
    }
}

pub fn stop_gradient(z: &Array2<f64>) -> Detached {
    Detached(z.clone())
}

/// Second argument of a cosine term: either a constant or a live embedding
/// whose gradient is wanted.
#[derive(Clone, Copy, Debug)]
pub enum Target<'a> {
    Frozen(&'a Detached),
    Live(&'a Array2<f64>),
}

impl Target<'_> {
    fn value(&self) -> &Array2<f64> {
        match self {
            Target::Frozen(d) => d.value(),
            Target::Live(z) => z,
        }
    }
}

/// Per-sample guarded negative cosine and its partial derivatives.
fn guarded_term(p: ArrayView1<f64>, z: ArrayView1<f64>) -> (f64, Vec<f64>, Vec<f64>) {
    let a = p.dot(&p).sqrt();
    let b = z.dot(&z).sqrt();
    let na = a + NORM_EPS;
    let nb = b + NORM_EPS;
    let s = p.dot(&z);
    let d = -s / (na * nb);
    let dp = p
        .iter()
        .zip(z.iter())
        .map(|(&pi, &zi)| {
            let radial = if a > 0.0 { s / (na * na * nb) * pi / a } else { 0.0 };
            -zi / (na * nb) + radial
        })
        .collect();
    let dz = p
        .iter()
        .zip(z.iter())
        .map(|(&pi, &zi)| {
            let radial = if b > 0.0 { s / (na * nb * nb) * zi / b } else { 0.0 };
            -pi / (na * nb) + radial
        })
        .collect();
    (d, dp, dz)
}

/// Per-sample values of the guarded negative cosine between matching rows.
pub fn rowwise_negative_cosine(p: &Array2<f64>, z: &Array2<f64>) -> Result<Vec<f64>> {
    if p.dim() != z.dim() {
        return Err(Error::Dimension(format!(
            "prediction {:?} and target {:?} differ in shape",
            p.dim(),
            z.dim()
        )));
    }
    Ok(p.rows()
        .into_iter()
        .zip(z.rows())
        .map(|(pr, zr)| guarded_term(pr, zr).0)
        .collect())
}

/// Gradients of the symmetric loss with respect to the four branch outputs.
#[derive(Clone, Debug)]
pub struct LossGradients {
    pub loss: LossValue,
    /// Per-sample symmetric losses, before batch averaging.
    pub per_sample: Vec<f64>,
    pub dp1: Array2<f64>,
    pub dp2: Array2<f64>,
    /// `None` when the target was frozen.
    pub dz1: Option<Array2<f64>>,
    pub dz2: Option<Array2<f64>>,
}

/// Half-weighted, batch-averaged `D(p, target)` and its gradients.
fn half_term(p: &Array2<f64>, target: Target<'_>) -> Result<(Vec<f64>, Array2<f64>, Option<Array2<f64>>)> {
    let z = target.value();
    if p.dim() != z.dim() {
        return Err(Error::Dimension(format!(
            "prediction {:?} and target {:?} differ in shape",
            p.dim(),
            z.dim()
        )));
    }
    let (batch, dim) = p.dim();
    let scale = 0.5 / batch as f64;
    let mut values = Vec::with_capacity(batch);
    let mut dp = Array2::zeros((batch, dim));
    let mut dz = Array2::zeros((batch, dim));
    for i in 0..batch {
        let (d, gp, gz) = guarded_term(p.row(i), z.row(i));
        values.push(0.5 * d);
        dp.row_mut(i).assign(&ArrayView1::from(&gp).mapv(|v| v * scale));
        dz.row_mut(i).assign(&ArrayView1::from(&gz).mapv(|v| v * scale));
    }
    let dz = matches!(target, Target::Live(_)).then_some(dz);
    Ok((values, dp, dz))
}

/// Whether the targets of the symmetric loss are detached. Disabling it is a
/// test-harness switch used to demonstrate collapse.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum StopGradient {
    #[default]
    Enabled,
    Disabled,
}

/// `L = ½·D(p1, sg(z2)) + ½·D(p2, sg(z1))`, averaged over the batch, with
/// gradients for back-propagation.
pub fn symmetric_loss_with_grads(fwd: &SimSiamForward, sg: StopGradient) -> Result<LossGradients> {
    let batch = fwd.p1.nrows();
    if batch == 0 {
        return Err(Error::Empty("symmetric loss over an empty batch".into()));
    }
    let (left, dp1, dz2, right, dp2, dz1) = match sg {
        StopGradient::Enabled => {
            let z2 = stop_gradient(&fwd.z2);
            let z1 = stop_gradient(&fwd.z1);
            let (l, dp1, dz2) = half_term(&fwd.p1, Target::Frozen(&z2))?;
            let (r, dp2, dz1) = half_term(&fwd.p2, Target::Frozen(&z1))?;
            (l, dp1, dz2, r, dp2, dz1)
        }
        StopGradient::Disabled => {
            let (l, dp1, dz2) = half_term(&fwd.p1, Target::Live(&fwd.z2))?;
            let (r, dp2, dz1) = half_term(&fwd.p2, Target::Live(&fwd.z1))?;
            (l, dp1, dz2, r, dp2, dz1)
        }
    };
    let per_sample: Vec<f64> = left.iter().zip(&right).map(|(a, b)| a + b).collect();
    let loss = per_sample.iter().sum::<f64>() / batch as f64;
    Ok(LossGradients {
        loss: LossValue(loss),
        per_sample,
        dp1,
        dp2,
        dz1,
        dz2,
    })
}

/// The symmetric stop-gradient loss value.
pub fn symmetric_loss(fwd: &SimSiamForward) -> Result<LossValue> {
    symmetric_loss_with_grads(fwd, StopGradient::Enabled).map(|g| g.loss)
}

/// Mean over dimensions of the per-dimension standard deviation of the
/// L2-normalized rows of `z`. Near `1/√d` for well-spread embeddings and 0
/// for collapsed ones.
pub fn collapse_statistic(z: &Array2<f64>) -> Result<f64> {
    let (batch, dim) = z.dim();
    if batch < 2 {
        return Err(Error::Validation(format!(
            "collapse statistic needs a batch of at least 2, got {batch}"
        )));
    }
    if dim == 0 {
        return Err(Error::Dimension("collapse statistic of zero-width embeddings".into()));
    }
    let mut normed = z.clone();
    for mut row in normed.rows_mut() {
        let n = row.dot(&row).sqrt() + NORM_EPS;
        row.mapv_inplace(|v| v / n);
    }
    let std = normed.std_axis(Axis(0), 1.0);
    Ok(std.mean().unwrap_or(0.0))
}
