//! CIEDE2000 colour difference (kL = kC = kH = 1).

use crate::error::{Error, Result};
use crate::imgio::{LabImage, Plane};
use crate::scalar::Scalar;

const POW25_7: f64 = 6_103_515_625.0; // 25^7

/// Delta E 2000 between two CIELAB triples.
pub fn ciede2000_pixel(lab1: [f64; 3], lab2: [f64; 3]) -> f64 {
    let [l1, a1, b1] = lab1;
    let [l2, a2, b2] = lab2;

    let c1 = a1.hypot(b1);
    let c2 = a2.hypot(b2);
    let c_bar7 = ((c1 + c2) / 2.0).powi(7);
    let g = 0.5 * (1.0 - (c_bar7 / (c_bar7 + POW25_7)).sqrt());

    let a1p = (1.0 + g) * a1;
    let a2p = (1.0 + g) * a2;
    let c1p = a1p.hypot(b1);
    let c2p = a2p.hypot(b2);
    let h1p = hue_degrees(b1, a1p);
    let h2p = hue_degrees(b2, a2p);

    let d_l = l2 - l1;
    let d_c = c2p - c1p;
    let chroma_product = c1p * c2p;
    let dh = if chroma_product == 0.0 {
        0.0
    } else {
        let d = h2p - h1p;
        if d > 180.0 {
            d - 360.0
        } else if d < -180.0 {
            d + 360.0
        } else {
            d
        }
    };
    let d_h = 2.0 * chroma_product.sqrt() * (dh.to_radians() / 2.0).sin();

    let l_bar = (l1 + l2) / 2.0;
    let c_bar_p = (c1p + c2p) / 2.0;
    let h_sum = h1p + h2p;
    let h_bar = if chroma_product == 0.0 {
        h_sum
    } else if (h1p - h2p).abs() <= 180.0 {
        h_sum / 2.0
    } else if h_sum < 360.0 {
        (h_sum + 360.0) / 2.0
    } else {
        (h_sum - 360.0) / 2.0
    };

    let t = 1.0 - 0.17 * (h_bar - 30.0).to_radians().cos()
        + 0.24 * (2.0 * h_bar).to_radians().cos()
        + 0.32 * (3.0 * h_bar + 6.0).to_radians().cos()
        - 0.20 * (4.0 * h_bar - 63.0).to_radians().cos();
    let d_theta = 30.0 * (-((h_bar - 275.0) / 25.0).powi(2)).exp();
    let c_bar_p7 = c_bar_p.powi(7);
    let r_c = 2.0 * (c_bar_p7 / (c_bar_p7 + POW25_7)).sqrt();
    let l_off = (l_bar - 50.0).powi(2);
    let s_l = 1.0 + 0.015 * l_off / (20.0 + l_off).sqrt();
    let s_c = 1.0 + 0.045 * c_bar_p;
    let s_h = 1.0 + 0.015 * c_bar_p * t;
    let r_t = -(2.0 * d_theta).to_radians().sin() * r_c;

    let tl = d_l / s_l;
    let tc = d_c / s_c;
    let th = d_h / s_h;
    (tl * tl + tc * tc + th * th + r_t * tc * th).max(0.0).sqrt()
}

fn hue_degrees(b: f64, a_prime: f64) -> f64 {
    if b == 0.0 && a_prime == 0.0 {
        return 0.0;
    }
    let h = b.atan2(a_prime).to_degrees();
    if h < 0.0 {
        h + 360.0
    } else {
        h
    }
}

/// Per-pixel Delta E 2000 map and its mean.
pub fn ciede2000<T: Scalar>(a: &LabImage<T>, b: &LabImage<T>) -> Result<(Plane<T>, T)> {
    if a.width != b.width || a.height != b.height || a.len() != b.len() {
        return Err(Error::Shape(format!(
            "Lab images {}x{} vs {}x{}",
            a.width, a.height, b.width, b.height
        )));
    }
    if a.is_empty() {
        return Err(Error::Argument("empty Lab image".into()));
    }
    let to64 = |p: [T; 3]| p.map(|v| v.as_f64());
    let mut sum = 0.0;
    let data: Vec<T> = (0..a.len())
        .map(|i| {
            let d = ciede2000_pixel(to64(a.pixel(i)), to64(b.pixel(i)));
            sum += d;
            T::lit(d)
        })
        .collect();
    let mean = T::lit(sum / a.len() as f64);
    Ok((Plane::from_vec(a.width, a.height, data)?, mean))
}
