//! Fixed five-stop heat colormap for false-color depth previews. Purely
//! cosmetic; documented in the README.

const STOPS: [(f32, [f32; 3]); 5] = [
    (0.00, [0.0, 0.0, 128.0]),
    (0.25, [0.0, 128.0, 255.0]),
    (0.50, [0.0, 255.0, 128.0]),
    (0.75, [255.0, 255.0, 0.0]),
    (1.00, [255.0, 0.0, 0.0]),
];

/// Maps t in [0, 1] to RGB.
pub fn heat(t: f32) -> [u8; 3] {
    let t = t.clamp(0.0, 1.0);
    let mut rgb = STOPS[STOPS.len() - 1].1;
    for pair in STOPS.windows(2) {
        let (t0, c0) = pair[0];
        let (t1, c1) = pair[1];
        if t <= t1 {
            let f = if t1 > t0 { (t - t0) / (t1 - t0) } else { 0.0 };
            rgb = [
                c0[0] + (c1[0] - c0[0]) * f,
                c0[1] + (c1[1] - c0[1]) * f,
                c0[2] + (c1[2] - c0[2]) * f,
            ];
            break;
        }
    }
    [rgb[0].round() as u8, rgb[1].round() as u8, rgb[2].round() as u8]
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn endpoints_and_clamping() {
        assert_eq!(heat(0.0), [0, 0, 128]);
        assert_eq!(heat(1.0), [255, 0, 0]);
        assert_eq!(heat(-1.0), heat(0.0));
        assert_eq!(heat(2.0), heat(1.0));
    }
}
