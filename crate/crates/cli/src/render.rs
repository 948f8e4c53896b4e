use hagxai::tensor::Dense;
use hagxai::Map2D;
use image::{Rgb, RgbImage};

pub const COLORMAP: &str = "viridis";

/// Colours a map already scaled to `[0, 1]`.
pub fn heatmap(map: &Map2D) -> RgbImage {
    let (h, w) = map.shape();
    let values = map.values();
    RgbImage::from_fn(w as u32, h as u32, |x, y| {
        let v = values[y as usize * w + x as usize].clamp(0.0, 1.0) as f64;
        let c = colorous::VIRIDIS.eval_continuous(v);
        Rgb([c.r, c.g, c.b])
    })
}

pub fn png_bytes(image: &RgbImage) -> Vec<u8> {
    let mut buf = std::io::Cursor::new(Vec::new());
    image
        .write_to(&mut buf, image::ImageFormat::Png)
        .expect("in-memory PNG encoding");
    buf.into_inner()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn endpoints_follow_the_colormap() {
        let map = Map2D::from_rows(&[[0.0f32, 1.0]]);
        let img = heatmap(&map);
        let lo = colorous::VIRIDIS.eval_continuous(0.0);
        let hi = colorous::VIRIDIS.eval_continuous(1.0);
        assert_eq!(img.get_pixel(0, 0).0, [lo.r, lo.g, lo.b]);
        assert_eq!(img.get_pixel(1, 0).0, [hi.r, hi.g, hi.b]);
    }
}
