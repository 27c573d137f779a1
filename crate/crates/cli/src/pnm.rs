//! Binary PGM/PPM writers.

use fqln::data::Image;

fn to_u8(v: f32) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// 8-bit `P5` for one channel, `P6` (interleaved RGB) for three.
/// Returns the file extension alongside the bytes.
pub fn image_bytes(img: &Image) -> Result<(&'static str, Vec<u8>), String> {
    let (h, w) = (img.height, img.width);
    match img.channels {
        1 => {
            let mut out = format!("P5\n{w} {h}\n255\n").into_bytes();
            out.extend(img.data.iter().map(|&v| to_u8(v)));
            Ok(("pgm", out))
        }
        3 => {
            let mut out = format!("P6\n{w} {h}\n255\n").into_bytes();
            for i in 0..h * w {
                for c in 0..3 {
                    out.push(to_u8(img.plane(c)[i]));
                }
            }
            Ok(("ppm", out))
        }
        c => Err(format!("cannot write a {c}-channel image as PGM/PPM")),
    }
}

/// 16-bit big-endian `P5`.
pub fn pgm16_bytes(values: &[u16], height: usize, width: usize) -> Vec<u8> {
    assert_eq!(values.len(), height * width, "pixel count matches geometry");
    let mut out = format!("P5\n{width} {height}\n65535\n").into_bytes();
    for v in values {
        out.extend_from_slice(&v.to_be_bytes());
    }
    out
}
