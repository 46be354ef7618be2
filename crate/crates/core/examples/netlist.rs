//! The plain netlist of a small DSEM, its wiring graph, and the Gaussian
//! Markov random field of the same model.

use dsem_sheaf::dsem::{assemble_precision, build_path_matrix, log_density, Coefficient, DsemSpec};
use dsem_sheaf::netlist::netlist_from_dsem;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let spec = DsemSpec::builder(["ice", "pool", "prey"])
        .edge("ice", "pool", 0, Coefficient::Fixed(0.6))
        .edge("pool", "prey", 1, Coefficient::Fixed(0.4))
        .build()?;
    let netlist = netlist_from_dsem(&spec, 5);
    println!("diagnostics: {:?}", netlist.validate());
    let graph = netlist.graph();
    println!(
        "{} vertices, acyclic: {}, bipartite: {}",
        graph.vertex_count(),
        graph.is_acyclic(),
        graph.is_bipartite()
    );
    for (a, b, port, dir) in graph.canonical_edges() {
        println!("  {a} -- {b} via {port} ({dir:?})");
    }
    let (inputs, outputs) = netlist.external_io();
    println!(
        "external inputs {:?}, outputs {:?}",
        netlist.net_names(&inputs),
        netlist.net_names(&outputs)
    );

    let p = build_path_matrix(&spec)?;
    let gmrf = assemble_precision(&p, &[1.0; 3])?;
    let zero = vec![0.0; p.dim()];
    println!(
        "path matrix is {}x{}; log density at 0 = {:.4}",
        p.dim(),
        p.dim(),
        log_density(&gmrf, &zero)?
    );
    Ok(())
}
