//! Every sparsification scheme applied to one teacher distribution.
//!
//! `cargo run --example sparse_schemes`

use sparse_kd::distributions::{zipf, Rng};
use sparse_kd::kd_loss::{ghost_loss, kld_loss};
use sparse_kd::sparsify::{self, SparseTarget};

fn show(name: &str, s: &SparseTarget, logits: &[f64]) -> sparse_kd::Result<()> {
    let head: Vec<String> = s.entries().iter().take(6).map(|(i, w)| format!("{i}:{w:.3}")).collect();
    println!(
        "{name:<16} n={:<3} sum={:.3} loss={:.4}  {}",
        s.len(),
        s.weight_sum(),
        kld_loss(logits, s)?,
        head.join(" ")
    );
    Ok(())
}

fn main() -> sparse_kd::Result<()> {
    let t = zipf(32)?;
    let logits = vec![0.0; t.len()];
    let mut rng = Rng::new(7);
    println!("teacher zipf(32), student uniform");
    show("dense", &SparseTarget::dense(&t), &logits)?;
    show("top-k raw", &sparsify::top_k(&t, 4, false)?, &logits)?;
    show("top-k norm", &sparsify::top_k(&t, 4, true)?, &logits)?;
    show("top-p 0.6", &sparsify::top_p(&t, 0.6, 16)?, &logits)?;
    show("label smooth", &sparsify::label_smoothing(&t, 4)?, &logits)?;
    show("naive fix gt=9", &sparsify::naive_fix(&t, 4, 9)?, &logits)?;
    show("sampled N=8", &sparsify::random_sampling(&t, 8, 1.0, &mut rng)?, &logits)?;
    show("sampled N=8 t.5", &sparsify::random_sampling(&t, 8, 0.5, &mut rng)?, &logits)?;
    let g = sparsify::ghost_token(&t, 4)?;
    println!("{:<16} n={:<3} ghost={:.3} loss={:.4}", "ghost", g.base().len(), g.ghost_weight(), ghost_loss(&logits, &g)?);
    Ok(())
}
