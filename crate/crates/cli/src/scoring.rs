//! Seeded stand-in classifier for offline end-to-end runs.

use radlabel_core::scores::ScoreMatrix;
use radlabel_core::BinaryLabelSheet;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

/// Scores `sigmoid(z)` with `z ~ N(separation * y, 1)` for truth `y`.
///
/// `stream` separates sets scored with the same seed.
pub fn synthetic_scores(truth: &[BinaryLabelSheet], labels: &[String], separation: f64, seed: u64, stream: u64) -> ScoreMatrix {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    let mut m = ScoreMatrix::new(labels.to_vec());
    for sheet in truth {
        let row = labels
            .iter()
            .map(|l| {
                let y = f64::from(u8::from(sheet.get(l).unwrap_or(false)));
                let z: f64 = StandardNormal.sample(&mut rng);
                1.0 / (1.0 + (-(z + separation * y)).exp())
            })
            .collect();
        m.push(sheet.report_id.clone(), row).expect("fresh ids, finite scores in [0, 1]");
    }
    m
}
