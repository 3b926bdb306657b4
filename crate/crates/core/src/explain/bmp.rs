use crate::dataio::Image;

/// Uncompressed 24-bit BMP (bottom-up rows, 4-byte row padding).
pub fn encode_bmp(img: &Image) -> Vec<u8> {
    let rgb = img.to_channels(3);
    let (w, h) = (rgb.width, rgb.height);
    let row = (3 * w + 3) & !3;
    let pixels = row * h;
    let mut out = Vec::with_capacity(54 + pixels);
    out.extend_from_slice(b"BM");
    out.extend_from_slice(&((54 + pixels) as u32).to_le_bytes());
    out.extend_from_slice(&[0; 4]);
    out.extend_from_slice(&54u32.to_le_bytes());
    out.extend_from_slice(&40u32.to_le_bytes());
    out.extend_from_slice(&(w as i32).to_le_bytes());
    out.extend_from_slice(&(h as i32).to_le_bytes());
    out.extend_from_slice(&1u16.to_le_bytes());
    out.extend_from_slice(&24u16.to_le_bytes());
    out.extend_from_slice(&0u32.to_le_bytes());
    out.extend_from_slice(&(pixels as u32).to_le_bytes());
    out.extend_from_slice(&2835i32.to_le_bytes());
    out.extend_from_slice(&2835i32.to_le_bytes());
    out.extend_from_slice(&[0; 8]);
    for y in (0..h).rev() {
        let start = out.len();
        for x in 0..w {
            let p = &rgb.data[(y * w + x) * 3..][..3];
            out.extend([p[2], p[1], p[0]].map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8));
        }
        out.resize(start + row, 0);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn header_and_padding() {
        let img = Image::new(1, 2, 3, vec![1.0, 0.0, 0.0, 0.0, 0.0, 1.0]);
        let b = encode_bmp(&img);
        assert_eq!(&b[..2], b"BM");
        assert_eq!(b.len(), 54 + 2 * 4);
        assert_eq!(u32::from_le_bytes(b[2..6].try_into().unwrap()) as usize, b.len());
        // bottom row first, stored as BGR
        assert_eq!(&b[54..58], &[255, 0, 0, 0]);
        assert_eq!(&b[58..62], &[0, 0, 255, 0]);
    }
}
