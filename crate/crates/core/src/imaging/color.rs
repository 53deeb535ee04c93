use super::{Image, Plane};

/// BT.601 studio-swing luma, `16 + (65.481 R + 128.553 G + 24.966 B) / 255`,
/// in `[16, 235]`. Grayscale images are returned unchanged as floats.
pub fn rgb_to_y(img: &Image) -> Plane {
    let n = img.width() * img.height();
    let data = if img.channels() == 1 {
        img.data().iter().map(|&v| v as f64).collect()
    } else {
        (0..n)
            .map(|i| {
                let px = &img.data()[i * 3..i * 3 + 3];
                let (r, g, b) = (px[0] as f64, px[1] as f64, px[2] as f64);
                16.0 + (65.481 * r + 128.553 * g + 24.966 * b) / 255.0
            })
            .collect()
    };
    Plane {
        width: img.width(),
        height: img.height(),
        data,
    }
}
