//! Checks tape gradients of the training objective against central finite
//! differences, then flips one gradient entry to show the check catching it.

use persona::crl::{
    gradient_check, largest_gradient_entry, Architecture, Coefficients, CrlModel, ModalityDims,
    ModelDims,
};
use persona::synth::{default_fig5_spec, sample_rows};

fn main() -> persona::error::Result<()> {
    let mut spec = default_fig5_spec();
    for m in &mut spec.modalities {
        m.obs_dim = 3;
        m.measurements = 1;
    }
    let batch = sample_rows(&spec, 8, 2)?;
    let dims = ModelDims {
        d_s: 1,
        modalities: batch
            .x
            .iter()
            .map(|xs| ModalityDims {
                latent_dim: 2,
                eta_dim: 1,
                obs_dims: xs.iter().map(|x| x.ncols()).collect(),
            })
            .collect(),
    };
    let arch = Architecture {
        hidden: 6,
        flow_hidden: 6,
        ..Architecture::default()
    };
    let model = CrlModel::new(dims, arch, 3)?.jittered(0.2, 4);
    let coeffs = Coefficients::SYNTHETIC;

    let ok = gradient_check(&model, &batch.x, &coeffs, 5, None)?;
    println!(
        "{} entries, max relative error {:.2e} at {}",
        ok.checked, ok.max_rel_error, ok.worst_param
    );
    let target = largest_gradient_entry(&model, &batch.x, &coeffs, 5)?;
    let bad = gradient_check(&model, &batch.x, &coeffs, 5, Some(target))?;
    println!(
        "sabotaged: max relative error {:.2e} at {} (tape {:.4}, numeric {:.4})",
        bad.max_rel_error, bad.worst_param, bad.worst_analytic, bad.worst_numeric
    );
    Ok(())
}
