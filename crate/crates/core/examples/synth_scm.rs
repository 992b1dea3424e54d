//! Samples the default two-modality SCM, prints its ground truth and the
//! Markov-network oracle, and writes the batch to a temporary directory.

use persona::synth::{default_fig5_spec, latent_markov_oracle, load_batch, sample_rows, save_batch};

fn main() -> persona::error::Result<()> {
    let spec = default_fig5_spec();
    let batch = sample_rows(&spec, 1000, 1)?;
    let truth = spec.ground_truth()?;

    println!("rows {}  latents {}  edges {}", batch.n(), spec.total_latents(), spec.edge_count());
    println!("edge weights (row i <- column j):");
    for i in 0..truth.edges.nrows() {
        let row: Vec<String> = (0..truth.edges.ncols())
            .map(|j| format!("{:>7.3}", truth.edges[(i, j)]))
            .collect();
        println!("  {}", row.join(" "));
    }
    println!("markov oracle:");
    for row in latent_markov_oracle(&spec)? {
        let cells: Vec<&str> = row.iter().map(|&b| if b { "1" } else { "." }).collect();
        println!("  {}", cells.join(" "));
    }
    for (m, xs) in batch.x.iter().enumerate() {
        let shapes: Vec<String> = xs.iter().map(|x| format!("{}x{}", x.nrows(), x.ncols())).collect();
        println!("modality {m}: {}", shapes.join(", "));
    }

    let dir = tempfile::tempdir().expect("temporary directory");
    let manifest = save_batch(&batch, 1, dir.path())?;
    let stored = load_batch(dir.path())?;
    println!("saved {} ({} rows reloaded)", manifest.display(), stored.manifest.rows);
    Ok(())
}
