use super::HagError;
use crate::attention::AttentionMap;
use crate::cam::SaliencyMap;
use crate::tensor::{Dense, Element, Map2D};

/// Loss `(1 - PCC) + mean squared error` with its components.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossValue {
    pub loss: f64,
    /// `None` when either map is constant; the PCC term then contributes 0.
    pub pcc: Option<f64>,
    pub mse: f64,
}

impl LossValue {
    pub fn pcc_undefined(&self) -> bool {
        self.pcc.is_none()
    }
}

struct Moments {
    centered_s: Vec<f64>,
    centered_t: Vec<f64>,
    ss: f64,
    tt: f64,
    st: f64,
}

fn moments<T: Element>(s: &Map2D<T>, t: &Map2D<T>) -> Moments {
    let (ms, mt) = (s.mean(), t.mean());
    let centered_s: Vec<f64> = s.values().iter().map(|v| v.as_f64() - ms).collect();
    let centered_t: Vec<f64> = t.values().iter().map(|v| v.as_f64() - mt).collect();
    let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();
    Moments {
        ss: dot(&centered_s, &centered_s),
        tt: dot(&centered_t, &centered_t),
        st: dot(&centered_s, &centered_t),
        centered_s,
        centered_t,
    }
}

fn mse<T: Element>(s: &Map2D<T>, t: &Map2D<T>) -> f64 {
    let n = s.len() as f64;
    s.values()
        .iter()
        .zip(t.values())
        .map(|(a, b)| {
            let d = a.as_f64() - b.as_f64();
            d * d
        })
        .sum::<f64>()
        / n
}

/// Loss between two equally shaped maps.
pub fn loss_terms<T: Element>(s: &Map2D<T>, t: &Map2D<T>) -> LossValue {
    assert_eq!(s.shape(), t.shape(), "loss needs equally shaped maps");
    let m = moments(s, t);
    let pcc = (m.ss > 0.0 && m.tt > 0.0).then(|| m.st / (m.ss * m.tt).sqrt());
    let mse = mse(s, t);
    LossValue {
        loss: 1.0 - pcc.unwrap_or(0.0) + mse,
        pcc,
        mse,
    }
}

/// Loss and its gradient with respect to every entry of `s`.
pub fn loss_and_saliency_gradient(s: &Map2D<f64>, t: &Map2D<f64>) -> (LossValue, Map2D<f64>) {
    let value = loss_terms(s, t);
    let m = moments(s, t);
    let n = s.len() as f64;
    let mut grad: Vec<f64> = s
        .values()
        .iter()
        .zip(t.values())
        .map(|(a, b)| 2.0 * (a - b) / n)
        .collect();
    if let Some(p) = value.pcc {
        let norm = (m.ss * m.tt).sqrt();
        for (i, g) in grad.iter_mut().enumerate() {
            *g -= m.centered_t[i] / norm - p * m.centered_s[i] / m.ss;
        }
    }
    let grad = Map2D::new(s.height(), s.width(), grad).expect("finite loss gradient");
    (value, grad)
}

/// Training objective of a saliency map against a human attention map.
pub fn hag_loss(saliency: &SaliencyMap, target: &AttentionMap) -> Result<LossValue, HagError> {
    if saliency.map.shape() != target.map.shape() {
        return Err(HagError::TargetShape {
            image_id: saliency.image_id.clone(),
            saliency: saliency.map.shape(),
            target: target.map.shape(),
        });
    }
    Ok(loss_terms(&saliency.map, &target.map))
}
