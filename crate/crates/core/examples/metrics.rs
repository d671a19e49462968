//! PSNR, SSIM and the perceptual proxy on a degraded image and on a few
//! simple distortions of it.

use rsd::data::{make_paired, DataConfig};
use rsd::eval::{psnr, ssim, SsimWindow};
use rsd::nn::PerceptualProxy;

fn main() -> rsd::Result<()> {
    let (_, test) = make_paired(&DataConfig { count: 4, test_count: 1, ..DataConfig::default() })?;
    let pair = &test.pairs[0];
    let x = &pair.x0;
    let proxy = PerceptualProxy::new(x.channels());
    let mut rng = rsd::rng::stream(1);
    let noise = rsd::Tensor::randn(x.shape(), &mut rng).scale(0.1);

    let cases = [
        ("identical", x.clone()),
        ("offset +0.1", x.map(|v| v + 0.1)),
        ("gaussian noise 0.1", x.add(&noise)),
        ("degraded input", pair.y0.clone()),
    ];
    println!("{:<20} {:>9} {:>8} {:>10}", "distortion", "PSNR", "SSIM", "PercProxy");
    for (name, y) in &cases {
        let p = psnr(x, y, true)?;
        let q = ssim(x, y, SsimWindow::default(), true)?;
        println!("{name:<20} {p:>9.3} {q:>8.4} {:>10.4}", proxy.distance(x, y));
    }
    Ok(())
}
