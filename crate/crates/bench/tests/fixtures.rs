use plim_bench::{block_at, lorenz_atlas, lorenz_block_problem};
use plim_core::gsolve::assemble_objective;

#[test]
fn lorenz_atlas_fills_every_block() {
    let (_, atlas) = lorenz_atlas(3);
    assert_eq!(atlas.len(), 3 * 144);
    let block = block_at(&atlas, &[1.0, 20.0]);
    assert_eq!(atlas.block_len(&block), 3);
}

#[test]
fn constant_field_objective_is_positive() {
    // G ≡ 8 solves the sheet equation only on a curve, so the block objective is positive.
    let p = lorenz_block_problem();
    let x = p.dofs_from_nodal(&vec![8.0; p.grid.n_nodes()], None);
    assert!(assemble_objective(&p, &x) > 0.0);
}
