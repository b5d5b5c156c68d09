use std::collections::VecDeque;

use crate::error::Result;
use crate::tensor::Tensor;

/// 4-connected components of one mask channel.
#[derive(Clone, Debug, PartialEq)]
pub struct Components {
    pub height: usize,
    pub width: usize,
    /// Per pixel, 0 for background, otherwise component id starting at 1.
    pub labels: Vec<usize>,
    pub areas: Vec<usize>,
    /// `(y, x)` centroid per component.
    pub centroids: Vec<(f64, f64)>,
}

impl Components {
    pub fn count(&self) -> usize {
        self.areas.len()
    }
}

/// Labels channel `channel` of an `(H, W, C)` mask (pixels `>= 0.5` are set).
pub fn label_components(masks: &Tensor, channel: usize) -> Result<Components> {
    let plane = masks.channel(channel)?;
    let (h, w, _) = plane.hwc()?;
    let on: Vec<bool> = plane.data().iter().map(|&v| v >= 0.5).collect();
    let mut labels = vec![0usize; h * w];
    let mut areas = Vec::new();
    let mut centroids = Vec::new();
    let mut queue = VecDeque::new();
    for start in 0..h * w {
        if !on[start] || labels[start] != 0 {
            continue;
        }
        let id = areas.len() + 1;
        labels[start] = id;
        queue.push_back(start);
        let (mut area, mut sy, mut sx) = (0usize, 0.0, 0.0);
        while let Some(p) = queue.pop_front() {
            let (y, x) = (p / w, p % w);
            area += 1;
            sy += y as f64;
            sx += x as f64;
            let neighbours = [
                (y > 0).then(|| p - w),
                (y + 1 < h).then(|| p + w),
                (x > 0).then(|| p - 1),
                (x + 1 < w).then(|| p + 1),
            ];
            for q in neighbours.into_iter().flatten() {
                if on[q] && labels[q] == 0 {
                    labels[q] = id;
                    queue.push_back(q);
                }
            }
        }
        areas.push(area);
        centroids.push((sy / area as f64, sx / area as f64));
    }
    Ok(Components {
        height: h,
        width: w,
        labels,
        areas,
        centroids,
    })
}
