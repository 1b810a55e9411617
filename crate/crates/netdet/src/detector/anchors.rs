//! Anchor generation: per level, one anchor per (cell, scale·ratio) at the
//! cell center, scales ramping linearly over the pyramid depth. Order is
//! deterministic — level-major, cell row-major, then ratio — and must match
//! the head reshape order.

use super::boxes::Anchor;

#[derive(Clone, Debug, PartialEq)]
pub struct AnchorConfig {
    /// Aspect ratios w/h; each contributes one anchor per cell.
    pub ratios: Vec<f64>,
    /// Anchor side as a fraction of the image at the shallowest level.
    pub scale_min: f64,
    /// ... and at the deepest level.
    pub scale_max: f64,
}

impl Default for AnchorConfig {
    fn default() -> Self {
        AnchorConfig {
            ratios: vec![1.0, 2.0, 0.5],
            // the shallowest scale sits mid-way through the smallest object
            // band so those objects clear the positive-match IoU threshold
            // with more than just their single forced best anchor
            scale_min: 0.08,
            scale_max: 0.9,
        }
    }
}

impl AnchorConfig {
    pub fn anchors_per_cell(&self) -> usize {
        self.ratios.len()
    }

    /// Anchor side for pyramid level `l` of `num_levels`.
    pub fn level_scale(&self, l: usize, num_levels: usize) -> f64 {
        if num_levels == 1 {
            return self.scale_min;
        }
        self.scale_min + (self.scale_max - self.scale_min) * l as f64 / (num_levels - 1) as f64
    }
}

pub fn generate_anchors(config: &AnchorConfig, level_sizes: &[usize]) -> Vec<Anchor> {
    let mut anchors = Vec::new();
    for (l, &size) in level_sizes.iter().enumerate() {
        let s = config.level_scale(l, level_sizes.len());
        for cy in 0..size {
            for cx in 0..size {
                for &r in &config.ratios {
                    anchors.push(Anchor {
                        cx: (cx as f64 + 0.5) / size as f64,
                        cy: (cy as f64 + 0.5) / size as f64,
                        w: s * r.sqrt(),
                        h: s / r.sqrt(),
                        level: l,
                    });
                }
            }
        }
    }
    anchors
}
