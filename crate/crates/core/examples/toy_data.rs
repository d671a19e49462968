//! Synthetic HR images, the degradation pipeline and the latent codecs.
//! Writes the paired set to a temporary `.rsdt` file and reads it back.

use rsd::data::{load_dataset, make_paired, save_dataset, CodecKind, DataConfig, ToyKind};
use rsd::eval::psnr;

fn main() -> rsd::Result<()> {
    for kind in [ToyKind::Mixed, ToyKind::Shapes] {
        let cfg = DataConfig { kind, count: 64, test_count: 8, ..DataConfig::default() };
        let (train, test) = make_paired(&cfg)?;
        let mean_psnr: f64 =
            test.pairs.iter().map(|p| psnr(&p.x0, &p.y0, true).unwrap()).sum::<f64>() / test.len() as f64;
        println!("{kind:?}: {} train, {} test, shape {:?}, LR vs HR PSNR {mean_psnr:.2} dB", train.len(), test.len(), train.shape);
    }

    let cfg = DataConfig { count: 16, test_count: 4, ..DataConfig::default() };
    let (train, _) = make_paired(&cfg)?;
    for kind in [CodecKind::Identity, CodecKind::Haar] {
        let codec = kind.build();
        let x = &train.pairs[0].x0;
        let z = codec.encode(x);
        let err = codec.decode(&z).max_abs_diff(x);
        println!("{kind:?} codec: latent shape {:?}, round-trip error {err:.2e}", z.shape());
    }

    let path = std::env::temp_dir().join("rsd_example_train.rsdt");
    save_dataset(&path, &train)?;
    let back = load_dataset(&path)?;
    println!("wrote {} ({} pairs, f32 storage)", path.display(), back.len());
    Ok(())
}
