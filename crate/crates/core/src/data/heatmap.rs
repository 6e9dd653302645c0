//! Attention heatmaps: one row per output step, one column per window.

use std::path::Path;

use super::pgm::{quantize, Greymap};
use crate::error::{Result, ScanError};
use crate::seq2seq::AttentionMap;

/// Layer `layer` weights as a greymap, columns sorted by window center.
pub fn heatmap(am: &AttentionMap, layer: usize, centers: &[usize]) -> Result<Greymap> {
    if layer >= am.layers() {
        return Err(ScanError::InvalidArgument(format!("layer {layer} of {}", am.layers())));
    }
    if centers.len() != am.windows() {
        return Err(ScanError::shape(
            "heatmap",
            format!("{} centers for {} windows", centers.len(), am.windows()),
        ));
    }
    let mut order: Vec<usize> = (0..centers.len()).collect();
    order.sort_by_key(|&i| centers[i]);
    let mut data = Vec::with_capacity(am.steps() * am.windows());
    for s in 0..am.steps() {
        let row = am.row(layer, s);
        data.extend(order.iter().map(|&j| quantize(row[j])));
    }
    Greymap::new(am.windows(), am.steps(), data)
}

pub fn export_heatmap(am: &AttentionMap, layer: usize, centers: &[usize], path: &Path) -> Result<()> {
    heatmap(am, layer, centers)?.save(path)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn uniform_and_one_hot() {
        let uniform = AttentionMap::new(1, 3, 4, vec![0.25; 12]).unwrap();
        let g = heatmap(&uniform, 0, &[16, 20, 24, 28]).unwrap();
        assert_eq!((g.height, g.width), (3, 4));
        assert!(g.data.iter().all(|&v| v == 64));

        let mut w = vec![0.0; 8];
        w[1] = 1.0;
        w[4 + 2] = 1.0;
        let hot = AttentionMap::new(1, 2, 4, w).unwrap();
        let g = heatmap(&hot, 0, &[16, 20, 24, 28]).unwrap();
        assert_eq!(g.data, vec![0, 255, 0, 0, 0, 0, 255, 0]);
        // Columns follow the centers, not storage order.
        let g = heatmap(&hot, 0, &[28, 24, 20, 16]).unwrap();
        assert_eq!(g.data, vec![0, 0, 255, 0, 0, 255, 0, 0]);
        assert!(heatmap(&hot, 1, &[1, 2, 3, 4]).is_err());
        assert!(heatmap(&hot, 0, &[1, 2]).is_err());
    }
}
