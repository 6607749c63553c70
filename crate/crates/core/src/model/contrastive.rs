use super::embedding::Embedding;
use super::queue::EmbeddingQueue;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ContrastiveOutput {
    pub loss: f64,
    /// Raw (untempered) positive similarity `z . z_pos`.
    pub positive_logit: f64,
}

/// InfoNCE with the positive at logit index 0 and queue entries as negatives.
pub fn contrastive_loss(
    z: &Embedding,
    z_pos: &Embedding,
    queue: &EmbeddingQueue,
    temperature: f64,
) -> Result<ContrastiveOutput> {
    contrastive_loss_with_grad(z, z_pos, queue, temperature).map(|(out, _)| out)
}

/// Loss plus its gradient w.r.t. `z` (with `z_pos` and the queue held fixed).
pub fn contrastive_loss_with_grad(
    z: &Embedding,
    z_pos: &Embedding,
    queue: &EmbeddingQueue,
    temperature: f64,
) -> Result<(ContrastiveOutput, Vec<f64>)> {
    if queue.is_empty() {
        return Err(Error::State("contrastive loss needs a non-empty queue".into()));
    }
    if !(temperature > 0.0) {
        return Err(Error::Argument(format!("temperature {temperature} must be > 0")));
    }
    if z.dim() != z_pos.dim() || z.dim() != queue.dim() {
        return Err(Error::Argument("embedding dimensions disagree".into()));
    }
    let pos = z.dot(z_pos);
    let logits: Vec<f64> = std::iter::once(pos / temperature)
        .chain(queue.slots().iter().map(|n| z.dot(n) / temperature))
        .collect();
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
    let denom: f64 = exps.iter().sum();
    let loss = denom.ln() + max - logits[0];

    let mut grad: Vec<f64> = z_pos
        .as_slice()
        .iter()
        .map(|p| (exps[0] / denom - 1.0) * p)
        .collect();
    for (n, e) in queue.slots().iter().zip(&exps[1..]) {
        let w = e / denom;
        grad.iter_mut().zip(n.as_slice()).for_each(|(g, v)| *g += w * v);
    }
    grad.iter_mut().for_each(|g| *g /= temperature);
    Ok((
        ContrastiveOutput {
            loss,
            positive_logit: pos,
        },
        grad,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit(v: &[f64]) -> Embedding {
        Embedding::normalize(v).unwrap()
    }

    #[test]
    fn hand_computed_value() {
        // z.z_pos = 1, two orthogonal negatives, t = 1: -ln(e / (e + 2)).
        let z = unit(&[1.0, 0.0, 0.0]);
        let mut q = EmbeddingQueue::new(2, 3).unwrap();
        q.push_batch(&[unit(&[0.0, 1.0, 0.0]), unit(&[0.0, 0.0, 1.0])]).unwrap();
        let out = contrastive_loss(&z, &z, &q, 1.0).unwrap();
        assert!((out.loss - 0.551_444_713_932_051_4).abs() < 1e-12);
        assert_eq!(out.positive_logit, 1.0);
    }

    #[test]
    fn uniform_similarities_give_log_q_plus_one() {
        let z = unit(&[1.0, 0.0]);
        let mut q = EmbeddingQueue::new(5, 2).unwrap();
        q.push_batch(&vec![z.clone(); 5]).unwrap();
        for t in [0.07, 0.2, 1.0] {
            let out = contrastive_loss(&z, &z, &q, t).unwrap();
            assert!((out.loss - 6f64.ln()).abs() < 1e-12);
        }
    }

    #[test]
    fn empty_queue_is_a_state_error() {
        let z = unit(&[1.0, 0.0]);
        let q = EmbeddingQueue::new(3, 2).unwrap();
        assert!(matches!(contrastive_loss(&z, &z, &q, 0.2), Err(Error::State(_))));
    }
}
