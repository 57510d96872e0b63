//! Renders a Gaussian vector, a 1% perturbation of it and an unrelated
//! vector, and prints the pairwise image distances.

use modelprint::numerics::Rng;
use modelprint::render::{image_distance, CosineRenderer, Renderer, DEFAULT_SIZE};

fn main() -> modelprint::Result<()> {
    let mut rng = Rng::new(8);
    let mut gaussian = || -> Vec<f32> { (0..512).map(|_| rng.normal() as f32).collect() };
    let v = gaussian();
    let noise = gaussian();
    let w = gaussian();
    let norm = |x: &[f32]| x.iter().map(|&a| (a as f64).powi(2)).sum::<f64>().sqrt();
    let scale = (0.01 * norm(&v) / norm(&noise)) as f32;
    let near: Vec<f32> = v.iter().zip(&noise).map(|(a, b)| a + scale * b).collect();

    let renderer = CosineRenderer::new("example");
    let [a, b, c] = [&v, &near, &w].map(|x| renderer.render(x, DEFAULT_SIZE));
    let (a, b, c) = (a?, b?, c?);
    println!("distance to 1% perturbation: {:.4}", image_distance(&a, &b)?);
    println!("distance to unrelated vector: {:.4}", image_distance(&a, &c)?);
    println!("Lipschitz bound: {:.4} per unit of latent distance", renderer.lipschitz_constant());
    let dir = std::env::temp_dir().join("modelprint-render");
    std::fs::create_dir_all(&dir)?;
    for (name, img) in [("anchor", &a), ("near", &b), ("far", &c)] {
        let path = dir.join(format!("{name}.png"));
        img.write(&path)?;
        println!("wrote {}", path.display());
    }
    Ok(())
}
