//! Binary PPM heat map of proposal scores.

use crate::scene_graph::Proposal;

/// Blue (lowest) to red (highest).
fn heat(t: f64) -> [f64; 3] {
    let t = t.clamp(0.0, 1.0);
    [255.0 * t, 64.0 * (1.0 - (2.0 * t - 1.0).abs()), 255.0 * (1.0 - t)]
}

/// Draws every proposal filled with its min-max normalized score colour,
/// lowest first so the best-scoring box ends up on top. Returns a P6 image.
pub fn render_heatmap(proposals: &[Proposal], scores: &[f64], width: usize, height: usize) -> Vec<u8> {
    let mut px = vec![[24.0f64; 3]; width * height];
    let lo = scores.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let span = if hi > lo { hi - lo } else { 1.0 };
    let mut order: Vec<usize> = (0..proposals.len().min(scores.len())).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    for i in order {
        let p = &proposals[i];
        let colour = heat((scores[i] - lo) / span);
        let to_px = |v: f64, n: usize| ((v * n as f64).round().max(0.0) as usize).min(n);
        let (x0, x1) = (to_px(p.left(), width), to_px(p.right(), width));
        let (y0, y1) = (to_px(p.top(), height), to_px(p.bottom(), height));
        for y in y0..y1 {
            for x in x0..x1 {
                let border = y == y0 || y + 1 == y1 || x == x0 || x + 1 == x1;
                let a = if border { 1.0 } else { 0.55 };
                let cell = &mut px[y * width + x];
                for c in 0..3 {
                    cell[c] = a * colour[c] + (1.0 - a) * cell[c];
                }
            }
        }
    }
    let mut out = format!("P6\n{width} {height}\n255\n").into_bytes();
    out.extend(px.iter().flat_map(|c| c.map(|v| v.round() as u8)));
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn header_and_size() {
        let p = Proposal::new(0.5, 0.5, 0.5, 0.5, vec![]).unwrap();
        let img = render_heatmap(&[p], &[1.0], 8, 4);
        let header = b"P6\n8 4\n255\n";
        assert_eq!(&img[..header.len()], header);
        assert_eq!(img.len(), header.len() + 8 * 4 * 3);
    }

    #[test]
    fn top_box_is_red() {
        let a = Proposal::new(0.5, 0.5, 1.0, 1.0, vec![]).unwrap();
        let b = Proposal::new(0.5, 0.5, 1.0, 1.0, vec![]).unwrap();
        let img = render_heatmap(&[a, b], &[2.0, -1.0], 4, 4);
        // pixel (0,0) is a border pixel painted last by the higher score
        let off = b"P6\n4 4\n255\n".len();
        assert_eq!(&img[off..off + 3], &[255, 0, 0]);
    }
}
