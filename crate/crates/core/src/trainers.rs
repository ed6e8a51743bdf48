//! Full-batch session training with optional EWC or LwF regularization.

use rand::RngCore;

use crate::error::{Error, Result};
use crate::exec::{self, Exec};
use crate::numerics::loss::softmax_subset;
use crate::numerics::{adam_step, cross_entropy, model_backward, model_forward, AdamState, DenseMatrix, Gradients, ModelParams, SparseAdjacency};
use crate::rng::{self, domain};

/// One session's training inputs. Labels are logit column indices.
#[derive(Debug, Clone, Copy)]
pub struct SessionData<'a> {
    /// Required for graph models, absent for `mlp2`.
    pub propagation: Option<&'a SparseAdjacency>,
    pub features: &'a DenseMatrix,
    pub train_rows: &'a [usize],
    pub train_labels: &'a [usize],
}

impl SessionData<'_> {
    fn check(&self) -> Result<()> {
        if self.train_rows.is_empty() {
            return Err(Error::Empty("session train nodes"));
        }
        if self.train_rows.len() != self.train_labels.len() {
            return Err(Error::shape("session labels", self.train_rows.len(), self.train_labels.len()));
        }
        Ok(())
    }
}

/// Extra loss terms added to cross-entropy.
#[derive(Debug, Clone)]
pub struct Penalty {
    pub loss: f64,
    /// Gradient with respect to the full logit matrix.
    pub dlogits: Option<DenseMatrix>,
    /// Direct parameter gradient.
    pub grads: Option<Gradients>,
}

pub trait Regularizer {
    fn penalty(&mut self, p: &ModelParams, logits: &DenseMatrix, data: &SessionData<'_>) -> Result<Penalty>;
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    pub epochs: usize,
    pub final_loss: Option<f64>,
}

fn epoch_seeds(seed: u64) -> impl Iterator<Item = u64> {
    let mut rng = rng::stream(seed, rng::tag(domain::DROPOUT, u64::from(u32::MAX)));
    std::iter::repeat_with(move || rng.next_u64())
}

fn scatter_rows(rows: &[usize], src: &DenseMatrix, into: &mut DenseMatrix) {
    for (i, &r) in rows.iter().enumerate() {
        into.row_mut(r).iter_mut().zip(src.row(i)).for_each(|(d, s)| *d += s);
    }
}

/// Adam training for `epochs` full-batch steps with a fresh optimizer state.
pub fn train_session(
    p: &mut ModelParams,
    data: &SessionData<'_>,
    epochs: usize,
    lr: f64,
    mut extra: Option<&mut dyn Regularizer>,
    seed: u64,
) -> Result<TrainReport> {
    data.check()?;
    let mut state = AdamState::new(p, lr);
    let mut final_loss = None;
    for (epoch, dseed) in (0..epochs).zip(epoch_seeds(seed)) {
        let mut step = || -> Result<f64> {
            let (logits, cache) = model_forward(p, data.propagation, data.features, Some(dseed))?;
            let rows = logits.gather_rows(data.train_rows)?;
            let (mut loss, d_rows) = cross_entropy(&rows, data.train_labels, None)?;
            let mut dlogits = DenseMatrix::zeros(logits.rows(), logits.cols());
            scatter_rows(data.train_rows, &d_rows, &mut dlogits);
            let mut direct = None;
            if let Some(reg) = extra.as_deref_mut() {
                let pen = reg.penalty(p, &logits, data)?;
                loss += pen.loss;
                if let Some(d) = pen.dlogits {
                    dlogits.data_mut().iter_mut().zip(d.data()).for_each(|(a, b)| *a += b);
                }
                direct = pen.grads;
            }
            if !loss.is_finite() {
                return Err(Error::NonFinite(format!("training loss at epoch {epoch}")));
            }
            let mut grads = model_backward(p, &cache, &dlogits)?;
            if let Some(g) = direct {
                grads.add_assign(&g)?;
            }
            drop(cache);
            adam_step(p, &grads, &mut state)?;
            Ok(loss)
        };
        final_loss = Some(step().map_err(|e| match e {
            Error::NonFinite(m) if !m.contains("epoch") => Error::NonFinite(format!("{m} at epoch {epoch}")),
            other => other,
        })?);
    }
    Ok(TrainReport { epochs, final_loss })
}

/// Argmax column per row of `logits` restricted to `rows`.
pub fn predict_columns(logits: &DenseMatrix, rows: &[usize]) -> Vec<usize> {
    rows.iter()
        .map(|&r| {
            let row = logits.row(r);
            let mut best = 0;
            for (j, &v) in row.iter().enumerate().skip(1) {
                if v > row[best] {
                    best = j;
                }
            }
            best
        })
        .collect()
}

/// Element-wise mean of squared gradients.
pub fn mean_squared(per_sample: &[Gradients]) -> Result<Gradients> {
    let first = per_sample.first().ok_or(Error::Empty("Fisher samples"))?;
    let mut acc = first.clone();
    for s in acc.slices_mut() {
        s.iter_mut().for_each(|v| *v = 0.0);
    }
    for g in per_sample {
        if g.signature() != acc.signature() {
            return Err(Error::shape("Fisher sample", format!("{:?}", acc.signature()), format!("{:?}", g.signature())));
        }
        for (a, s) in acc.slices_mut().into_iter().zip(g.slices()) {
            a.iter_mut().zip(s).for_each(|(a, v)| *a += v * v);
        }
    }
    acc.scale(1.0 / per_sample.len() as f64);
    Ok(acc)
}

/// Diagonal empirical Fisher: per-parameter mean over train nodes of the
/// squared gradient of `log p(y | node)`, evaluated without dropout.
pub fn fisher_diagonal(p: &ModelParams, data: &SessionData<'_>, exec: Exec) -> Result<Gradients> {
    data.check()?;
    let (logits, cache) = model_forward(p, data.propagation, data.features, None)?;
    let cols: Vec<usize> = (0..logits.cols()).collect();
    let per_node: Vec<Result<Gradients>> = exec::map_range(exec, data.train_rows.len(), |i| {
        let r = data.train_rows[i];
        let probs = softmax_subset(logits.row(r), &cols, 1.0);
        let mut d = DenseMatrix::zeros(logits.rows(), logits.cols());
        d.row_mut(r).copy_from_slice(&probs);
        d.row_mut(r)[data.train_labels[i]] -= 1.0;
        model_backward(p, &cache, &d)
    });
    let per_node = per_node.into_iter().collect::<Result<Vec<_>>>()?;
    mean_squared(&per_node)
}

/// Online EWC state: latest anchor and the running Fisher sum.
#[derive(Debug, Clone, PartialEq)]
pub struct EwcAnchor {
    pub anchor: Gradients,
    pub fisher: Gradients,
    pub strength: f64,
}

impl EwcAnchor {
    pub fn new(p: &ModelParams, fisher: Gradients, strength: f64) -> Result<Self> {
        if strength < 0.0 {
            return Err(Error::Invalid(format!("EWC strength must be >= 0, got {strength}")));
        }
        if fisher.signature() != p.signature() {
            return Err(Error::shape("EWC Fisher", format!("{:?}", p.signature()), format!("{:?}", fisher.signature())));
        }
        Ok(Self {
            anchor: p.as_tensors(),
            fisher,
            strength,
        })
    }

    /// Adds `fisher` to the running sum and moves the anchor to `p`.
    pub fn absorb(&mut self, p: &ModelParams, fisher: Gradients) -> Result<()> {
        let mut sum = self.fisher.pad_to(&p.signature())?;
        sum.add_assign(&fisher)?;
        self.fisher = sum;
        self.anchor = p.as_tensors();
        Ok(())
    }
}

/// `λ Σ F (θ − θ*)²` and its gradient `2 λ F (θ − θ*)`. Parameters added
/// since the anchor (grown head columns) carry zero Fisher.
pub fn ewc_penalty(p: &ModelParams, anchor: &EwcAnchor) -> Result<(f64, Gradients)> {
    let sig = p.signature();
    let fisher = anchor.fisher.pad_to(&sig)?;
    let star = anchor.anchor.pad_to(&sig)?;
    let mut grad = p.zeros_like();
    let mut loss = 0.0;
    for (((g, th), f), s) in grad.slices_mut().into_iter().zip(p.slices()).zip(fisher.slices()).zip(star.slices()) {
        for i in 0..g.len() {
            let delta = th[i] - s[i];
            loss += f[i] * delta * delta;
            g[i] = 2.0 * anchor.strength * f[i] * delta;
        }
    }
    Ok((anchor.strength * loss, grad))
}

impl Regularizer for EwcAnchor {
    fn penalty(&mut self, p: &ModelParams, _logits: &DenseMatrix, _data: &SessionData<'_>) -> Result<Penalty> {
        let (loss, grads) = ewc_penalty(p, self)?;
        Ok(Penalty {
            loss,
            dlogits: None,
            grads: Some(grads),
        })
    }
}

/// `λ T² KL(softmax(old/T) ‖ softmax(new/T))` over `cols`, averaged over
/// rows. Returns the loss and the gradient with respect to `new`.
pub fn lwf_distill(new: &DenseMatrix, old: &DenseMatrix, cols: &[usize], temperature: f64, weight: f64) -> Result<(f64, DenseMatrix)> {
    if cols.is_empty() {
        return Err(Error::Empty("LwF old-class set"));
    }
    if new.rows() != old.rows() {
        return Err(Error::shape("lwf_distill rows", old.rows(), new.rows()));
    }
    if let Some(&c) = cols.iter().find(|&&c| c >= new.cols() || c >= old.cols()) {
        return Err(Error::OutOfRange {
            what: "LwF column",
            index: c,
            bound: new.cols().min(old.cols()),
        });
    }
    if !(temperature > 0.0) {
        return Err(Error::Invalid(format!("LwF temperature must be positive, got {temperature}")));
    }
    let rows = new.rows();
    let mut grad = DenseMatrix::zeros(rows, new.cols());
    if rows == 0 {
        return Ok((0.0, grad));
    }
    let scale = weight * temperature / rows as f64;
    let mut kl_sum = 0.0;
    for r in 0..rows {
        let p = softmax_subset(old.row(r), cols, temperature);
        let q = softmax_subset(new.row(r), cols, temperature);
        for (k, &c) in cols.iter().enumerate() {
            if p[k] > 0.0 {
                kl_sum += p[k] * (p[k].ln() - q[k].ln());
            }
            grad.row_mut(r)[c] = scale * (q[k] - p[k]);
        }
    }
    let loss = weight * temperature * temperature * kl_sum / rows as f64;
    Ok((loss, grad))
}

/// Frozen pre-session model whose logits on the old classes are distilled.
#[derive(Debug, Clone)]
pub struct DistillSource {
    frozen: ModelParams,
    pub temperature: f64,
    pub weight: f64,
    pub old_cols: Vec<usize>,
    old_logits: Option<DenseMatrix>,
}

impl DistillSource {
    pub fn new(frozen: ModelParams, temperature: f64, weight: f64) -> Result<Self> {
        if !(temperature > 0.0) || weight < 0.0 {
            return Err(Error::Invalid(format!("LwF needs T > 0 and weight >= 0, got T={temperature} weight={weight}")));
        }
        let old_cols = (0..frozen.num_classes()).collect();
        Ok(Self {
            frozen,
            temperature,
            weight,
            old_cols,
            old_logits: None,
        })
    }

    pub fn frozen(&self) -> &ModelParams {
        &self.frozen
    }
}

impl Regularizer for DistillSource {
    fn penalty(&mut self, _p: &ModelParams, logits: &DenseMatrix, data: &SessionData<'_>) -> Result<Penalty> {
        if self.old_logits.is_none() {
            let (all, _) = model_forward(&self.frozen, data.propagation, data.features, None)?;
            self.old_logits = Some(all.gather_rows(data.train_rows)?);
        }
        let old = self.old_logits.as_ref().expect("set above");
        let new = logits.gather_rows(data.train_rows)?;
        let (loss, d_rows) = lwf_distill(&new, old, &self.old_cols, self.temperature, self.weight)?;
        let mut dlogits = DenseMatrix::zeros(logits.rows(), logits.cols());
        scatter_rows(data.train_rows, &d_rows, &mut dlogits);
        Ok(Penalty {
            loss,
            dlogits: Some(dlogits),
            grads: None,
        })
    }
}
