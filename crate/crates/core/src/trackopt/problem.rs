use nalgebra::Vector3;

use super::LossTerms;
use crate::tracks::Track3D;

/// One `(i, window)` acceleration term in compact (visible-only) indices.
/// The ray-projected Laplacian at offsets `delta` is
/// `base + c_next * delta[next] - 2 delta[center] + c_prev * delta[prev]`.
#[derive(Clone, Copy, Debug)]
struct LaplacianTerm {
    center: u32,
    next: u32,
    prev: u32,
    base: f64,
    c_next: f64,
    c_prev: f64,
}

/// Visible frames of one track, laid out for repeated objective evaluation.
pub(super) struct RayProblem {
    points: Vec<Vector3<f64>>,
    rays: Vec<Vector3<f64>>,
    dist: Vec<f64>,
    laplacians: Vec<LaplacianTerm>,
}

impl RayProblem {
    pub fn new(track: &Track3D, windows: &[usize]) -> Self {
        let n_frames = track.n_frames();
        let mut compact = vec![u32::MAX; n_frames];
        let mut points = Vec::new();
        let mut rays = Vec::new();
        let mut dist = Vec::new();
        for i in track.visible_frames() {
            compact[i] = points.len() as u32;
            points.push(track.points[i]);
            rays.push(track.rays[i]);
            dist.push((track.points[i] - track.camera_centers[i]).norm());
        }

        let mut windows: Vec<usize> = windows.to_vec();
        windows.sort_unstable();
        windows.dedup();
        let mut laplacians = Vec::new();
        for i in track.visible_frames() {
            for &w in &windows {
                if w > i || i + w >= n_frames {
                    continue;
                }
                let (prev, next) = (i - w, i + w);
                if !(track.visible[prev] && track.visible[next]) {
                    continue;
                }
                let r = track.rays[i];
                let accel = track.points[next] - 2.0 * track.points[i] + track.points[prev];
                laplacians.push(LaplacianTerm {
                    center: compact[i],
                    next: compact[next],
                    prev: compact[prev],
                    base: accel.dot(&r),
                    c_next: track.rays[next].dot(&r),
                    c_prev: track.rays[prev].dot(&r),
                });
            }
        }
        Self { points, rays, dist, laplacians }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn distances(&self) -> &[f64] {
        &self.dist
    }

    /// First offset at or below the depth singularity, with its distance.
    pub fn offset_violation(&self, deltas: &[f64]) -> Option<(f64, f64)> {
        deltas.iter().zip(&self.dist).find(|(d, dist)| !(**d + **dist > 0.0)).map(|(d, dist)| (*d, *dist))
    }

    /// Static term; when `grad` is given, `scale * d(static)/d(delta)` is
    /// added to it with the normaliser held fixed.
    pub fn static_term(&self, deltas: &[f64], grad: Option<(&mut [f64], f64)>) -> f64 {
        let n = self.points.len();
        if n == 0 {
            return 0.0;
        }
        let nf = n as f64;
        let moved = |k: usize| self.points[k] + self.rays[k] * deltas[k];
        let mut mean = Vector3::zeros();
        let mut norm_sum = 0.0;
        for k in 0..n {
            let p = moved(k);
            mean += p;
            norm_sum += p.norm();
        }
        mean /= nf;
        let normaliser = (norm_sum / nf).max(1e-12);
        let inv_n2 = 1.0 / (normaliser * normaliser);
        let mut spread = 0.0;
        for k in 0..n {
            spread += (moved(k) - mean).norm_squared();
        }
        if let Some((grad, scale)) = grad {
            let c = scale * 4.0 * nf * inv_n2;
            for (k, g) in grad.iter_mut().enumerate().take(n) {
                *g += c * (moved(k) - mean).dot(&self.rays[k]);
            }
        }
        2.0 * nf * spread * inv_n2
    }

    pub fn dynamic_term(&self, deltas: &[f64], grad: Option<(&mut [f64], f64)>) -> f64 {
        let mut total = 0.0;
        match grad {
            None => {
                for t in &self.laplacians {
                    let a = self.laplacian(t, deltas);
                    total += a * a;
                }
            }
            Some((grad, scale)) => {
                for t in &self.laplacians {
                    let a = self.laplacian(t, deltas);
                    total += a * a;
                    let g = 2.0 * scale * a;
                    grad[t.next as usize] += g * t.c_next;
                    grad[t.center as usize] -= 2.0 * g;
                    grad[t.prev as usize] += g * t.c_prev;
                }
            }
        }
        total
    }

    #[inline]
    fn laplacian(&self, t: &LaplacianTerm, deltas: &[f64]) -> f64 {
        t.base + t.c_next * deltas[t.next as usize] - 2.0 * deltas[t.center as usize]
            + t.c_prev * deltas[t.prev as usize]
    }

    pub fn reg_term(&self, deltas: &[f64], lambda: f64, grad: Option<&mut [f64]>) -> f64 {
        let mut total = 0.0;
        match grad {
            None => {
                for (d, dist) in deltas.iter().zip(&self.dist) {
                    let diff = 1.0 / (d + dist) - 1.0 / dist;
                    total += diff * diff;
                }
            }
            Some(grad) => {
                for ((d, dist), g) in deltas.iter().zip(&self.dist).zip(grad.iter_mut()) {
                    let moved = d + dist;
                    let diff = 1.0 / moved - 1.0 / dist;
                    total += diff * diff;
                    *g += -2.0 * lambda * diff / (moved * moved);
                }
            }
        }
        lambda * total
    }

    /// All terms at `deltas`; overwrites `grad` with the full gradient when given.
    pub fn evaluate(&self, deltas: &[f64], sigma: f64, lambda: f64, mut grad: Option<&mut [f64]>) -> LossTerms {
        if let Some(g) = grad.as_deref_mut() {
            g.iter_mut().for_each(|v| *v = 0.0);
        }
        let static_loss = self.static_term(deltas, grad.as_deref_mut().map(|g| (g, sigma)));
        let dynamic_loss = self.dynamic_term(deltas, grad.as_deref_mut().map(|g| (g, 1.0 - sigma)));
        let reg_loss = self.reg_term(deltas, lambda, grad);
        LossTerms { static_loss, dynamic_loss, reg_loss, sigma }
    }
}
