use modelprint::error::Result;
use modelprint::numerics::Rng;
use modelprint::render::{
    image_distance, locality_check, CosineRenderer, FingerprintImage, Provenance, Renderer, DEFAULT_SIZE,
};
use sha2::{Digest, Sha256};

fn gaussian(rng: &mut Rng) -> Vec<f32> {
    (0..512).map(|_| rng.normal() as f32).collect()
}

fn norm(v: &[f32]) -> f64 {
    v.iter().map(|&x| (x as f64).powi(2)).sum::<f64>().sqrt()
}

/// Every distinct input gets unrelated noise: no locality at all.
struct HashRenderer;

impl Renderer for HashRenderer {
    fn render(&self, v: &[f32], size: usize) -> Result<FingerprintImage> {
        let mut h = Sha256::new();
        for x in v {
            h.update(x.to_le_bytes());
        }
        let seed = u64::from_le_bytes(h.finalize()[..8].try_into().unwrap());
        let mut rng = Rng::new(seed);
        Ok(FingerprintImage {
            width: size,
            height: size,
            pixels: (0..size * size * 3).map(|_| rng.below(256) as u8).collect(),
            provenance: Provenance {
                encoder_hash: String::new(),
                renderer_version: "hash".into(),
            },
        })
    }
}

#[test]
fn same_vector_gives_identical_png_bytes() {
    let r = CosineRenderer::new("enc");
    let v = gaussian(&mut Rng::new(1));
    let a = r.render(&v, DEFAULT_SIZE).unwrap().to_png().unwrap();
    let b = CosineRenderer::new("enc").render(&v, DEFAULT_SIZE).unwrap().to_png().unwrap();
    assert_eq!(a, b);
}

#[test]
fn one_percent_perturbation_stays_close() {
    let r = CosineRenderer::default();
    let mut rng = Rng::new(2);
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let v = gaussian(&mut rng);
        let d = gaussian(&mut rng);
        let scale = 0.01 * norm(&v) / norm(&d);
        let w: Vec<f32> = v.iter().zip(&d).map(|(&a, &b)| a + (scale as f32) * b).collect();
        let dist = image_distance(&r.render(&v, 64).unwrap(), &r.render(&w, 64).unwrap()).unwrap();
        worst = worst.max(dist);
    }
    assert!(worst < 0.05, "{worst}");
}

#[test]
fn independent_vectors_look_different() {
    let r = CosineRenderer::default();
    let mut rng = Rng::new(3);
    let far = (0..100)
        .filter(|_| {
            let (a, b) = (gaussian(&mut rng), gaussian(&mut rng));
            image_distance(&r.render(&a, 64).unwrap(), &r.render(&b, 64).unwrap()).unwrap() > 0.2
        })
        .count();
    assert!(far >= 95, "{far}");
}

#[test]
fn measured_distances_respect_the_lipschitz_constant() {
    let r = CosineRenderer::default();
    let lip = r.lipschitz_constant();
    let mut rng = Rng::new(4);
    for _ in 0..50 {
        let v = gaussian(&mut rng);
        let w: Vec<f32> = v.iter().map(|&x| x + 0.05 * rng.normal() as f32).collect();
        let delta: Vec<f32> = v.iter().zip(&w).map(|(a, b)| a - b).collect();
        let dist = image_distance(&r.render(&v, 32).unwrap(), &r.render(&w, 32).unwrap()).unwrap();
        // One 8-bit rounding step per pixel on either side.
        assert!(dist <= lip * norm(&delta) + 1.0 / 255.0, "{dist} vs {}", lip * norm(&delta));
    }
}

#[test]
fn builtin_renderer_is_local_and_hash_renderer_is_not() {
    let good = locality_check(&CosineRenderer::default(), 100, 32, &mut Rng::new(5)).unwrap();
    assert!(good.rank_correlation > 0.8, "{}", good.rank_correlation);
    let bad = locality_check(&HashRenderer, 100, 32, &mut Rng::new(5)).unwrap();
    assert!(bad.rank_correlation.abs() < 0.25, "{}", bad.rank_correlation);
    assert!(locality_check(&HashRenderer, 99, 8, &mut Rng::new(5)).is_err());
}

#[test]
fn write_produces_png_and_sidecar() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("fp.png");
    let img = CosineRenderer::new("abc123").render(&gaussian(&mut Rng::new(6)), 16).unwrap();
    let sidecar = img.write(&path).unwrap();
    let back = FingerprintImage::from_png(&std::fs::read(&path).unwrap()).unwrap();
    assert_eq!(back.pixels, img.pixels);
    let meta: serde_json::Value = serde_json::from_slice(&std::fs::read(sidecar).unwrap()).unwrap();
    assert_eq!(meta["encoder_hash"], "abc123");
    assert_eq!(meta["width"], 16);
}
