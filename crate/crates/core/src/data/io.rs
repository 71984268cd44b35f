use std::path::Path;

use image::{DynamicImage, ImageBuffer, Luma, Rgb};

use crate::error::{Error, Result};
use crate::geometry::NormalMap;
use crate::raster::{Mask, Raster};

fn quantize16(v: f64) -> u16 {
    (v.clamp(0.0, 1.0) * 65535.0).round() as u16
}

/// Reads a PNG or TIFF as intensities in `[0, 1]`: one channel for gray
/// inputs, three for color (alpha is dropped).
pub fn read_image(path: &Path) -> Result<Raster> {
    let img = image::open(path).map_err(|e| Error::image(path, e))?;
    let (w, h) = (img.width() as usize, img.height() as usize);
    if img.color().channel_count() <= 2 {
        let buf = img.to_luma32f();
        Raster::from_vec(w, h, 1, buf.into_raw().into_iter().map(f64::from).collect())
    } else {
        let buf = img.to_rgb32f();
        Ok(Raster::from_fn(w, h, 3, |c, y, x| {
            buf.get_pixel(x as u32, y as u32)[c] as f64
        }))
    }
}

/// Reads a single-channel image; color inputs are an error.
pub fn read_gray(path: &Path) -> Result<Raster> {
    let r = read_image(path)?;
    if r.channels() != 1 {
        return Err(Error::Format(format!("{}: expected a grayscale image", path.display())));
    }
    Ok(r)
}

/// Writes a 1- or 3-channel raster as a 16-bit PNG, clamping to `[0, 1]`.
pub fn write_png16(path: &Path, raster: &Raster) -> Result<()> {
    let (w, h) = (raster.width() as u32, raster.height() as u32);
    let img = match raster.channels() {
        1 => DynamicImage::ImageLuma16(
            ImageBuffer::<Luma<u16>, _>::from_raw(w, h, raster.data().iter().map(|&v| quantize16(v)).collect())
                .expect("buffer matches dimensions"),
        ),
        3 => {
            let mut buf = Vec::with_capacity(raster.pixel_count() * 3);
            for y in 0..raster.height() {
                for x in 0..raster.width() {
                    for c in 0..3 {
                        buf.push(quantize16(raster.get(c, y, x)));
                    }
                }
            }
            DynamicImage::ImageRgb16(
                ImageBuffer::<Rgb<u16>, _>::from_raw(w, h, buf).expect("buffer matches dimensions"),
            )
        }
        c => {
            return Err(Error::Shape(format!("cannot write a {c}-channel raster as PNG")));
        }
    };
    img.save(path).map_err(|e| Error::image(path, e))
}

/// Reads a mask: any non-zero pixel is set.
pub fn read_mask(path: &Path) -> Result<Mask> {
    let img = image::open(path).map_err(|e| Error::image(path, e))?;
    let buf = img.to_luma32f();
    let (w, h) = (buf.width() as usize, buf.height() as usize);
    Mask::from_vec(w, h, buf.into_raw().into_iter().map(|v| v > 0.0).collect())
}

/// Writes a mask as an 8-bit PNG with values 0 and 255.
pub fn write_mask(path: &Path, mask: &Mask) -> Result<()> {
    let buf: Vec<u8> = mask.bits().iter().map(|&b| if b { 255 } else { 0 }).collect();
    let img = ImageBuffer::<Luma<u8>, _>::from_raw(mask.width() as u32, mask.height() as u32, buf)
        .expect("buffer matches dimensions");
    img.save(path).map_err(|e| Error::image(path, e))
}

/// Writes normals as a 16-bit RGB PNG with channel `c` holding `(n_c + 1) / 2`,
/// plus the validity mask as a separate PNG.
pub fn write_normal_map(path: &Path, mask_path: &Path, nmap: &NormalMap) -> Result<()> {
    let r = nmap.to_raster();
    let enc = Raster::from_fn(r.width(), r.height(), 3, |c, y, x| (r.get(c, y, x) + 1.0) / 2.0);
    write_png16(path, &enc)?;
    let valid = Mask::from_vec(nmap.width(), nmap.height(), nmap.valid().to_vec())?;
    write_mask(mask_path, &valid)
}

/// Inverse of [`write_normal_map`]; a missing mask marks every pixel valid.
/// Decoded normals are renormalized.
pub fn read_normal_map(path: &Path, mask_path: Option<&Path>) -> Result<NormalMap> {
    let enc = read_image(path)?;
    if enc.channels() != 3 {
        return Err(Error::Format(format!(
            "{}: normal map must have 3 channels",
            path.display()
        )));
    }
    let (w, h) = (enc.width(), enc.height());
    let valid = match mask_path {
        Some(p) => {
            let m = read_mask(p)?;
            if (m.width(), m.height()) != (w, h) {
                return Err(Error::Shape(format!(
                    "{}: mask is {}x{}, normal map is {w}x{h}",
                    p.display(),
                    m.width(),
                    m.height()
                )));
            }
            m.bits().to_vec()
        }
        None => vec![true; w * h],
    };
    let mut normals = Vec::with_capacity(w * h);
    let mut ok = valid;
    for y in 0..h {
        for x in 0..w {
            let n = [0, 1, 2].map(|c| enc.get(c, y, x) * 2.0 - 1.0);
            let len = (n[0] * n[0] + n[1] * n[1] + n[2] * n[2]).sqrt();
            let i = y * w + x;
            if ok[i] && len > 1e-6 {
                normals.push([n[0] / len, n[1] / len, n[2] / len]);
            } else {
                ok[i] = false;
                normals.push([0.0, 0.0, 1.0]);
            }
        }
    }
    let albedo = ok.iter().map(|&v| if v { 1.0 } else { 0.0 }).collect();
    NormalMap::new(w, h, normals, albedo, ok)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn png16_round_trip_within_quantization() {
        let dir = tempfile::tempdir().unwrap();
        for c in [1, 3] {
            let r = Raster::from_fn(7, 5, c, |c, y, x| ((c + 2 * y + 3 * x) % 11) as f64 / 10.0);
            let p = dir.path().join(format!("img{c}.png"));
            write_png16(&p, &r).unwrap();
            let back = read_image(&p).unwrap();
            assert_eq!((back.width(), back.height(), back.channels()), (7, 5, c));
            for (a, b) in r.data().iter().zip(back.data()) {
                assert!((a - b).abs() <= 0.5 / 65535.0 + 1e-7);
            }
        }
    }

    #[test]
    fn tiff_gray_is_read() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("g.tiff");
        let buf: Vec<u16> = (0..12).map(|i| i * 5000).collect();
        ImageBuffer::<Luma<u16>, _>::from_raw(4, 3, buf)
            .unwrap()
            .save(&p)
            .unwrap();
        let r = read_gray(&p).unwrap();
        assert!((r.get(0, 2, 3) - 55000.0 / 65535.0).abs() < 1e-6);
    }

    #[test]
    fn mask_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let mut m = Mask::empty(6, 4);
        m.set(1, 2, true);
        m.set(3, 5, true);
        let p = dir.path().join("mask.png");
        write_mask(&p, &m).unwrap();
        assert_eq!(read_mask(&p).unwrap(), m);
    }

    #[test]
    fn normal_map_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let normals: Vec<[f64; 3]> = (0..20)
            .map(|i| {
                let t = i as f64 * 0.07;
                [t.sin() * 0.5, t.cos() * 0.3, 1.0]
            })
            .collect();
        let unit = NormalMap::from_normals(5, 4, normals).unwrap();
        let mut valid = vec![true; 20];
        valid[3] = false;
        let nmap = NormalMap::new(5, 4, unit.normals().to_vec(), vec![1.0; 20], valid).unwrap();
        let (p, mp) = (dir.path().join("n.png"), dir.path().join("nv.png"));
        write_normal_map(&p, &mp, &nmap).unwrap();
        let back = read_normal_map(&p, Some(&mp)).unwrap();
        assert!(!back.valid()[3]);
        for i in (0..20).filter(|&i| i != 3) {
            let a = nmap.normals()[i];
            let b = back.normals()[i];
            let dot = a[0] * b[0] + a[1] * b[1] + a[2] * b[2];
            assert!(dot > 1.0 - 1e-8);
        }
    }

    #[test]
    fn unreadable_file_is_an_image_error() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("x.png");
        std::fs::write(&p, b"not a png").unwrap();
        assert!(matches!(read_image(&p), Err(Error::Image { .. })));
    }
}
