use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;

use png::{BitDepth, ColorType, Transformations};

use super::Image;
use crate::error::{Error, Result};

/// Reads an 8-bit PNG. Palette and low-bit-depth images are expanded;
/// alpha channels are dropped. 16-bit images are rejected.
pub fn read_png(path: &Path) -> Result<Image> {
    let file = BufReader::new(File::open(path)?);
    let mut decoder = png::Decoder::new(file);
    decoder.set_transformations(Transformations::EXPAND);
    let mut reader = decoder.read_info()?;
    let (color, depth) = reader.output_color_type();
    if depth != BitDepth::Eight {
        return Err(Error::UnsupportedImage(format!(
            "{}: bit depth {:?}",
            path.display(),
            depth
        )));
    }
    let size = reader
        .output_buffer_size()
        .ok_or_else(|| Error::UnsupportedImage(format!("{}: image too large", path.display())))?;
    let mut buf = vec![0; size];
    let info = reader.next_frame(&mut buf)?;
    buf.truncate(info.buffer_size());
    let (w, h) = (info.width as usize, info.height as usize);
    let (channels, keep): (usize, usize) = match color {
        ColorType::Grayscale => (1, 1),
        ColorType::GrayscaleAlpha => (2, 1),
        ColorType::Rgb => (3, 3),
        ColorType::Rgba => (4, 3),
        ColorType::Indexed => {
            return Err(Error::UnsupportedImage(format!(
                "{}: palette was not expanded",
                path.display()
            )))
        }
    };
    let data = if channels == keep {
        buf
    } else {
        buf.chunks_exact(channels)
            .flat_map(|px| px[..keep].iter().copied())
            .collect()
    };
    Image::new(w, h, keep, data)
}

pub fn write_png(path: &Path, img: &Image) -> Result<()> {
    let file = BufWriter::new(File::create(path)?);
    let mut encoder = png::Encoder::new(file, img.width() as u32, img.height() as u32);
    encoder.set_color(if img.channels() == 1 {
        ColorType::Grayscale
    } else {
        ColorType::Rgb
    });
    encoder.set_depth(BitDepth::Eight);
    let mut writer = encoder.write_header()?;
    writer.write_image_data(img.data())?;
    writer.finish()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_is_lossless() {
        let dir = tempfile::tempdir().unwrap();
        for channels in [1, 3] {
            let img = Image::from_fn(13, 7, channels, |x, y, c| (x * 19 + y * 31 + c * 7) as u8).unwrap();
            let path = dir.path().join(format!("rt{channels}.png"));
            write_png(&path, &img).unwrap();
            assert_eq!(read_png(&path).unwrap(), img);
        }
    }

    fn write_raw(path: &Path, w: u32, h: u32, color: ColorType, depth: BitDepth, palette: Option<&[u8]>, data: &[u8]) {
        let file = BufWriter::new(File::create(path).unwrap());
        let mut enc = png::Encoder::new(file, w, h);
        enc.set_color(color);
        enc.set_depth(depth);
        if let Some(p) = palette {
            enc.set_palette(p.to_vec());
        }
        let mut wr = enc.write_header().unwrap();
        wr.write_image_data(data).unwrap();
        wr.finish().unwrap();
    }

    #[test]
    fn sixteen_bit_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("deep.png");
        write_raw(&path, 2, 2, ColorType::Rgb, BitDepth::Sixteen, None, &[0u8; 24]);
        assert!(matches!(read_png(&path), Err(Error::UnsupportedImage(_))));
    }

    #[test]
    fn palette_is_expanded_to_rgb() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("pal.png");
        let palette = [10u8, 20, 30, 200, 100, 50, 0, 255, 7];
        let indices = [0u8, 1, 2, 2, 1, 0];
        write_raw(
            &path,
            3,
            2,
            ColorType::Indexed,
            BitDepth::Eight,
            Some(&palette),
            &indices,
        );
        let img = read_png(&path).unwrap();
        assert_eq!(img.channels(), 3);
        let expected: Vec<u8> = indices
            .iter()
            .flat_map(|&i| palette[i as usize * 3..i as usize * 3 + 3].to_vec())
            .collect();
        assert_eq!(img.data(), expected.as_slice());
    }

    #[test]
    fn missing_file_is_io_error() {
        assert!(matches!(read_png(Path::new("/nonexistent/x.png")), Err(Error::Io(_))));
    }
}
