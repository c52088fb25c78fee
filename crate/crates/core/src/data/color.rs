use super::{check_dims, ColorDomain, Image, ParsingMap};
use crate::error::Result;

/// Median of `v`; even counts average the two central values.
fn median(v: &mut [f32]) -> f32 {
    v.sort_by(f32::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Fills every parsing region with its per-channel median color. The
/// background region is filled with −1.
pub fn extract_color_domain(image: &Image, parsing: &ParsingMap) -> Result<ColorDomain> {
    check_dims("color domain", image.dims(), parsing.dims())?;
    let (h, w) = image.dims();
    let n = h * w;
    let mut members: Vec<Vec<usize>> = vec![Vec::new(); parsing.num_classes()];
    for (i, &l) in parsing.labels().iter().enumerate() {
        members[l as usize].push(i);
    }
    let mut data = vec![-1.0f32; 3 * n];
    let mut scratch = Vec::new();
    for idx in members.iter().skip(1) {
        if idx.is_empty() {
            continue;
        }
        for c in 0..3 {
            let plane = image.plane(c);
            scratch.clear();
            scratch.extend(idx.iter().map(|&i| plane[i]));
            let m = median(&mut scratch);
            for &i in idx {
                data[c * n + i] = m;
            }
        }
    }
    Ok(ColorDomain { pixels: Image::from_planar(h, w, data)? })
}
