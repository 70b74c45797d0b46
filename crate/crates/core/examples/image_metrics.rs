//! PSNR, SSIM, complex-field fidelity and box statistics on small
//! synthetic inputs.

use wavecopy::metrics::{field_fidelity, psnr, ssim, summarize, ImageU8};
use wavecopy::Complex64;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let (h, w) = (32, 32);
    let base: Vec<u8> = (0..h * w * 3).map(|i| ((i * 37) % 251) as u8).collect();
    let a = ImageU8::new(h, w, base);
    let b = a.map(|x| x.saturating_add(1));
    let inverted = a.map(|x| 255 - x);
    println!("PSNR unit offset {:.4} dB", psnr(&a, &b)?);
    println!("SSIM self {:.4}, unit offset {:.4}, inverted {:.4}", ssim(&a, &a)?, ssim(&a, &b)?, ssim(&a, &inverted)?);

    let f: Vec<Complex64> = (0..100).map(|i| Complex64::from_polar(1.0, 0.1 * i as f64)).collect();
    let g: Vec<Complex64> = f.iter().map(|z| z * Complex64::from_polar(3.0, 1.0)).collect();
    println!("fidelity under global gain and phase {:.6}", field_fidelity(&f, &g)?);

    let s = summarize(&[31.2, 28.4, f64::INFINITY, 25.0, 30.1, 27.7])?;
    println!("box: min {} q1 {} median {} q3 {} max {} (excluded inf {})", s.min, s.q1, s.median, s.q3, s.max, s.excluded_infinite);

    Ok(())
}
