//! Sensitivity sweeps: the cross product of (workload, sparsity, flags,
//! fifo depth, bank count), one CSV row per cell.

use std::collections::BTreeMap;
use std::fs;

use rayon::prelude::*;

use espim_core::*;

use crate::config::{ExperimentConfig, Workload};
use crate::pipeline::Paths;

pub const REPORT_HEADER: &str = "#espim-report v1";
pub const REPORT_COLUMNS: &str = "workload,rows,cols,format,seed,sparsity,flags,fifo,banks,nnz,\
cycles_espim,cycles_newton,cycles_ideal_espim,cycles_ideal_nonpim,\
speedup_vs_newton,speedup_vs_ideal_nonpim,\
broadcasts,broadcast_stalls,efifo_stalls,drain_columns,lidx_columns,normal_columns,\
mac_ops,mean_extract_per_row_broadcast,elem_use_fraction,activation_cycles,\
e_newton_access,e_newton_compute,e_newton_total,\
e_espim_access,e_espim_compute,e_espim_rest,e_espim_total,e_espim_total_vs_nonpim";

#[derive(Debug, Clone)]
struct CellSpec {
    workload: usize,
    sparsity: f64,
    flags: FeatureFlags,
    fifo: usize,
    banks: usize,
}

fn enumerate_cells(cfg: &ExperimentConfig) -> Vec<CellSpec> {
    let mut cells = Vec::new();
    for (wi, _) in cfg.workloads.iter().enumerate() {
        for &s in &cfg.sparsity {
            for &flags in &cfg.flags {
                for &fifo in &cfg.fifo_depth {
                    for &banks in &cfg.banks {
                        cells.push(CellSpec {
                            workload: wi,
                            sparsity: s,
                            flags,
                            fifo,
                            banks,
                        });
                    }
                }
            }
        }
    }
    cells
}

struct Shared {
    pruned: BTreeMap<(usize, u64), SparseMatrix>,
    vectors: Vec<Vector>,
    /// Newton cycles per (workload, sparsity-bits, banks).
    newton: BTreeMap<(usize, u64, usize), u64>,
}

fn sparsity_key(s: f64) -> u64 {
    s.to_bits()
}

fn prepare_shared(cfg: &ExperimentConfig, cells: &[CellSpec]) -> Result<Shared> {
    let mut pruned = BTreeMap::new();
    let mut vectors = Vec::new();
    for w in &cfg.workloads {
        vectors.push(generate_vector(w.cols, cfg.seed + 1, cfg.dist, cfg.format)?);
    }
    for (wi, w) in cfg.workloads.iter().enumerate() {
        let dense = generate_dense(w.rows, w.cols, cfg.seed, cfg.dist, cfg.format)?;
        for &s in &cfg.sparsity {
            pruned.insert((wi, sparsity_key(s)), prune_magnitude(&dense, s)?);
        }
    }
    let mut newton = BTreeMap::new();
    for cell in cells {
        let key = (cell.workload, sparsity_key(cell.sparsity), cell.banks);
        if newton.contains_key(&key) {
            continue;
        }
        let m = &pruned[&(cell.workload, sparsity_key(cell.sparsity))];
        let g = GeometryConfig {
            num_banks: cell.banks,
            ..cfg.geometry
        };
        let (img, stream, _) = compile_dense(&m.to_dense(), &g, &FeatureFlags::dense())?;
        let r = run_newton(
            &img,
            &stream,
            &vectors[cell.workload],
            &cfg.timing,
            &g,
            None,
        )?;
        newton.insert(key, r.total_cycles);
    }
    Ok(Shared { pruned, vectors, newton })
}

fn fnum(x: f64) -> String {
    format!("{x:.6}")
}

fn compute_cell(cfg: &ExperimentConfig, shared: &Shared, cell: &CellSpec) -> Result<String> {
    let w: &Workload = &cfg.workloads[cell.workload];
    let m = &shared.pruned[&(cell.workload, sparsity_key(cell.sparsity))];
    let v = &shared.vectors[cell.workload];
    let g = GeometryConfig {
        num_banks: cell.banks,
        ..cfg.geometry
    };
    let flags = FeatureFlags {
        fifo_depth: cell.fifo,
        ..cell.flags
    };
    let act = cfg.activation_overhead_cycles;
    let newton_cycles = shared.newton[&(cell.workload, sparsity_key(cell.sparsity), cell.banks)];
    let vector_bytes = (v.len() * 2) as u64;

    let (report, stats, matrix_bytes) = if flags.dense_mode {
        let (img, stream, stats) = compile_dense(&m.to_dense(), &g, &flags)?;
        let bytes =
            (g.num_banks * img.banks[0].len() * g.columns_per_dram_row * 32) as u64;
        let r = run(&Image::Dense(img), &stream, v, None, &cfg.timing, &g, None)?;
        (r, stats, bytes)
    } else {
        let comp = compile_sparse(m, &g, &flags)?;
        let bytes = comp.image.matrix_bytes();
        let r = run(
            &Image::Sparse(comp.image),
            &comp.stream,
            v,
            Some(&comp.placement),
            &cfg.timing,
            &g,
            None,
        )?;
        if !r.violations.is_empty() {
            return Err(Error::Sim(format!(
                "cell reported violations: {}",
                r.violations[0]
            )));
        }
        (r, comp.stats, bytes)
    };

    let ideal_espim = ideal_espim_cycles(&stats, &cfg.timing, &g);
    let nonpim = ideal_nonpim_cycles(matrix_bytes, vector_bytes, &g, &cfg.timing);
    let cycles = report.total_cycles + act;
    let newton_total = newton_cycles + act;
    let speedup_newton = newton_total as f64 / cycles.max(1) as f64;
    let speedup_nonpim = nonpim as f64 / cycles.max(1) as f64;

    let e_newton = energy_newton(m.nnz() as u64, w.rows as u64, w.cols as u64, &cfg.energy);
    let e_espim = if flags.dense_mode {
        // flexible configuration with FIFOs and switch power-gated off
        e_newton
    } else {
        energy_espim(
            &EnergyActivity {
                columns_per_bank: report.columns_read,
                banks: g.num_banks as u64,
                mac_ops: report.mac_ops,
                rows: w.rows as u64,
                cols: w.cols as u64,
            },
            &cfg.energy,
        )
    };
    let e_espim_vs_nonpim = e_espim.vs_nonpim_baseline(&cfg.energy);

    let t = &stats.totals;
    Ok([
        w.name.clone(),
        w.rows.to_string(),
        w.cols.to_string(),
        cfg.format.name().to_string(),
        cfg.seed.to_string(),
        fnum(cell.sparsity),
        flags.to_token_string(),
        cell.fifo.to_string(),
        cell.banks.to_string(),
        m.nnz().to_string(),
        cycles.to_string(),
        newton_total.to_string(),
        (ideal_espim + act).to_string(),
        nonpim.to_string(),
        fnum(speedup_newton),
        fnum(speedup_nonpim),
        t.broadcasts.to_string(),
        t.broadcast_stalls.to_string(),
        t.efifo_full_stalls.to_string(),
        t.drain_columns.to_string(),
        t.index_only_columns.to_string(),
        t.normal_columns.to_string(),
        report.mac_ops.to_string(),
        fnum(stats.mean_extracted_per_row_per_broadcast()),
        fnum(stats.broadcast_elem_use_fraction()),
        act.to_string(),
        fnum(e_newton.access),
        fnum(e_newton.compute),
        fnum(e_newton.total),
        fnum(e_espim.access),
        fnum(e_espim.compute),
        fnum(e_espim.rest),
        fnum(e_espim.total),
        fnum(e_espim_vs_nonpim.total),
    ]
    .join(","))
}

/// Runs the whole sweep (or one cell) and writes `sweep.csv`. With
/// `only_cell`, the cell's row goes to stdout instead, so single cells are
/// independently recomputable.
pub fn cmd_sweep(cfg: &ExperimentConfig, paths: &Paths, only_cell: Option<usize>) -> Result<()> {
    let cells = enumerate_cells(cfg);
    if let Some(i) = only_cell {
        if i >= cells.len() {
            return Err(Error::invalid(format!(
                "cell {i} out of range; sweep has {} cells",
                cells.len()
            )));
        }
        let shared = prepare_shared(cfg, &cells[i..i + 1])?;
        let row = compute_cell(cfg, &shared, &cells[i])?;
        println!("{row}");
        return Ok(());
    }

    let shared = prepare_shared(cfg, &cells)?;
    let mut rows: Vec<(usize, Result<String>)> = cells
        .par_iter()
        .enumerate()
        .map(|(i, cell)| (i, compute_cell(cfg, &shared, cell)))
        .collect();
    rows.sort_by_key(|(i, _)| *i);

    let mut out = String::new();
    out.push_str(REPORT_HEADER);
    out.push('\n');
    out.push_str(REPORT_COLUMNS);
    out.push('\n');
    for (_, row) in rows {
        out.push_str(&row?);
        out.push('\n');
    }
    fs::create_dir_all(paths_dir(paths))?;
    fs::write(paths.sweep_csv(), out)?;
    println!("sweep: {} cells -> {}", cells.len(), paths.sweep_csv().display());
    Ok(())
}

fn paths_dir(paths: &Paths) -> std::path::PathBuf {
    paths.sweep_csv().parent().unwrap().to_path_buf()
}
