use crate::error::{Error, Result};
use crate::ndtensor::{Tape, Var};

/// One latent draw together with the noise that produced it.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentSample {
    pub mu: Vec<f64>,
    pub logvar: Vec<f64>,
    pub eps: Vec<f64>,
    pub z: Vec<f64>,
}

impl LatentSample {
    /// `z = mu + exp(logvar / 2) * eps`, elementwise.
    pub fn draw(mu: Vec<f64>, logvar: Vec<f64>, eps: Vec<f64>) -> Result<Self> {
        if mu.len() != logvar.len() || mu.len() != eps.len() {
            return Err(Error::shape(
                "LatentSample::draw",
                &[mu.len(), mu.len(), mu.len()],
                &[mu.len(), logvar.len(), eps.len()],
            ));
        }
        let z = mu
            .iter()
            .zip(&logvar)
            .zip(&eps)
            .map(|((m, lv), e)| m + (0.5 * lv).exp() * e)
            .collect();
        Ok(Self { mu, logvar, eps, z })
    }
}

/// Differentiable reparameterization: `z = mu + exp(0.5 * logvar) * eps`
/// with `eps` recorded as a constant.
pub fn reparameterize(tape: &mut Tape, mu: Var, logvar: Var, eps: &[f64]) -> Result<Var> {
    let shape = tape.shape(mu).to_vec();
    let eps = tape.constant(shape, eps.to_vec())?;
    let half = tape.scale(logvar, 0.5)?;
    let sigma = tape.exp(half)?;
    let noise = tape.mul(sigma, eps)?;
    tape.add(mu, noise)
}

/// Per-row KL divergence of `N(mu, exp(logvar))` from the standard normal,
/// averaged over rows of length `latent_dim`.
pub fn kl_divergence(mu: &[f64], logvar: &[f64], latent_dim: usize) -> f64 {
    let total: f64 = mu
        .iter()
        .zip(logvar)
        .map(|(m, lv)| -0.5 * (1.0 + lv - m * m - lv.exp()))
        .sum();
    total / (mu.len() / latent_dim.max(1)).max(1) as f64
}

/// Handles to the pieces of the ELBO recorded on a tape.
#[derive(Debug, Clone, Copy)]
pub struct ElboTerms {
    pub loss: Var,
    pub reconstruction: Var,
    pub kl: Var,
}

/// Pixel MSE plus `beta` times the batch-mean KL term. `mu` and `logvar`
/// are `[N, latent_dim]`.
pub fn elbo_loss(
    tape: &mut Tape,
    reconstruction: Var,
    target: Var,
    mu: Var,
    logvar: Var,
    beta: f64,
) -> Result<ElboTerms> {
    let recon = tape.mse(reconstruction, target)?;
    let batch = tape.shape(mu).first().copied().unwrap_or(1).max(1);
    let one_plus = tape.offset(logvar, 1.0)?;
    let mu_sq = tape.mul(mu, mu)?;
    let var = tape.exp(logvar)?;
    let t = tape.sub(one_plus, mu_sq)?;
    let t = tape.sub(t, var)?;
    let total = tape.sum(t)?;
    let kl = tape.scale(total, -0.5 / batch as f64)?;
    let weighted = tape.scale(kl, beta)?;
    let loss = tape.add(recon, weighted)?;
    Ok(ElboTerms {
        loss,
        reconstruction: recon,
        kl,
    })
}
