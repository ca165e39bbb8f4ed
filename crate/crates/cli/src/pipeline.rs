//! Pipeline stages: each writes its artifact into the output directory and
//! later stages read them back.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use espim_core::*;

use crate::config::ExperimentConfig;

pub struct Paths {
    out: PathBuf,
}

impl Paths {
    pub fn new(out: &Path) -> Self {
        Paths { out: out.to_path_buf() }
    }

    fn p(&self, name: &str) -> PathBuf {
        self.out.join(name)
    }

    pub fn matrix(&self) -> PathBuf {
        self.p("matrix.espm")
    }
    pub fn vector(&self) -> PathBuf {
        self.p("vector.espv")
    }
    pub fn pruned(&self) -> PathBuf {
        self.p("pruned.espm")
    }
    pub fn placement(&self) -> PathBuf {
        self.p("placement.txt")
    }
    pub fn image(&self) -> PathBuf {
        self.p("image.bin")
    }
    pub fn stream(&self) -> PathBuf {
        self.p("stream.txt")
    }
    pub fn schedule_stats(&self) -> PathBuf {
        self.p("schedule_stats.json")
    }
    pub fn report_csv(&self) -> PathBuf {
        self.p("report.csv")
    }
    pub fn report_json(&self) -> PathBuf {
        self.p("report.json")
    }
    pub fn trace(&self) -> PathBuf {
        self.p("trace.txt")
    }
    pub fn sweep_csv(&self) -> PathBuf {
        self.p("sweep.csv")
    }

    fn ensure_dir(&self) -> Result<()> {
        fs::create_dir_all(&self.out)?;
        Ok(())
    }
}

/// Generates the dense workload matrix (stored as a full sparse image) and
/// the input vector.
pub fn cmd_gen(cfg: &ExperimentConfig, paths: &Paths) -> Result<()> {
    paths.ensure_dir()?;
    let w = cfg.workload();
    let dense = generate_dense(w.rows, w.cols, cfg.seed, cfg.dist, cfg.format)?;
    dense.to_sparse().save(&paths.matrix())?;
    let v = generate_vector(w.cols, cfg.seed + 1, cfg.dist, cfg.format)?;
    v.save(&paths.vector())?;
    println!(
        "gen: {} ({}x{}) seed {} -> {}",
        w.name,
        w.rows,
        w.cols,
        cfg.seed,
        paths.matrix().display()
    );
    Ok(())
}

/// Prunes the generated matrix to the first configured sparsity.
pub fn cmd_prune(cfg: &ExperimentConfig, paths: &Paths) -> Result<()> {
    paths.ensure_dir()?;
    let full = SparseMatrix::load(&paths.matrix(), cfg.format)?;
    let sparsity = cfg.sparsity[0];
    let pruned = prune_magnitude(&full.to_dense(), sparsity)?;
    pruned.save(&paths.pruned())?;
    println!(
        "prune: sparsity {:.3} -> nnz {} of {}",
        sparsity,
        pruned.nnz(),
        pruned.rows * pruned.cols
    );
    Ok(())
}

/// Compiles the pruned matrix into the DRAM image and command stream.
pub fn cmd_compile(cfg: &ExperimentConfig, paths: &Paths) -> Result<()> {
    paths.ensure_dir()?;
    let m = SparseMatrix::load(&paths.pruned(), cfg.format)?;
    let f = cfg.single_flags();
    let g = cfg.single_geometry();
    let stats = if f.dense_mode {
        let (img, stream, stats) = compile_dense(&m.to_dense(), &g, &f)?;
        img.save(&paths.image(), &g)?;
        stream.save(&paths.stream())?;
        stats
    } else {
        let comp = compile_sparse(&m, &g, &f)?;
        let mut w = BufWriter::new(fs::File::create(paths.placement())?);
        comp.placement.write_text(&mut w)?;
        w.flush()?;
        comp.image.save(&paths.image())?;
        comp.stream.save(&paths.stream())?;
        comp.stats
    };
    let json = serde_json::to_string_pretty(&stats)
        .map_err(|e| Error::Format(format!("stats serialization: {e}")))?;
    fs::write(paths.schedule_stats(), json)?;
    println!(
        "compile: {} columns/bank over {} groups, {} broadcasts, {} stalls",
        stats.totals.normal_columns + stats.totals.index_only_columns,
        stats.groups.len(),
        stats.totals.broadcasts,
        stats.totals.stalls(),
    );
    Ok(())
}

fn load_image(paths: &Paths) -> Result<Image> {
    // the 8th byte of the magic distinguishes dense from sparse
    let bytes = fs::read(paths.image())?;
    if bytes.len() < 8 {
        return Err(Error::Format("image file truncated".into()));
    }
    if bytes[7] == 1 {
        Ok(Image::Dense(DenseImage::read_binary(&mut bytes.as_slice())?))
    } else {
        Ok(Image::Sparse(CompressedImage::read_binary(
            &mut bytes.as_slice(),
        )?))
    }
}

fn geometry_from_header(cfg: &ExperimentConfig, header: &StreamHeader) -> GeometryConfig {
    GeometryConfig {
        num_banks: header.banks,
        macs_per_bank: if header.flags.dense_mode {
            cfg.geometry.macs_per_bank
        } else {
            header.macs
        },
        ..cfg.geometry
    }
}

/// Executes the compiled stream and writes the report CSV row plus a
/// structured detail file.
pub fn cmd_sim(cfg: &ExperimentConfig, paths: &Paths, trace: bool) -> Result<()> {
    paths.ensure_dir()?;
    let image = load_image(paths)?;
    let stream = CommandStream::load(&paths.stream())?;
    let v = Vector::load(&paths.vector(), cfg.format)?;
    let g = geometry_from_header(cfg, &stream.header);
    let placement = match &image {
        Image::Sparse(_) => Some(Placement::read_text(fs::File::open(paths.placement())?)?),
        Image::Dense(_) => None,
    };
    let mut trace_file = if trace {
        Some(BufWriter::new(fs::File::create(paths.trace())?))
    } else {
        None
    };
    let report = run(
        &image,
        &stream,
        &v,
        placement.as_ref(),
        &cfg.timing,
        &g,
        trace_file.as_mut().map(|w| w as &mut dyn Write),
    )?;
    if let Some(mut w) = trace_file {
        w.flush()?;
    }

    let mut csv = String::new();
    csv.push_str("#espim-simreport v1\n");
    csv.push_str(
        "cycles,lgb,act,lidx,cnb,cbr,rd,broadcasts,columns_read,mac_ops,\
         stall_broadcast,stall_efifo,stall_warmup,stall_drain,extracted,\
         ififo_pushes,ififo_pops,efifo_pushes,efifo_pops,violations\n",
    );
    let c = &report.commands;
    csv.push_str(&format!(
        "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}\n",
        report.total_cycles,
        c.lgb,
        c.act,
        c.lidx,
        c.cnb,
        c.cbr,
        c.rd,
        report.broadcasts,
        report.columns_read,
        report.mac_ops,
        report.stall_cycles.broadcast,
        report.stall_cycles.efifo_full,
        report.stall_cycles.warmup,
        report.stall_cycles.drain,
        report.extracted,
        report.fifo.ififo_pushes,
        report.fifo.ififo_pops,
        report.fifo.efifo_pushes,
        report.fifo.efifo_pops,
        report.violations.len(),
    ));
    fs::write(paths.report_csv(), csv)?;
    let json = serde_json::to_string_pretty(&report)
        .map_err(|e| Error::Format(format!("report serialization: {e}")))?;
    fs::write(paths.report_json(), json)?;
    println!(
        "sim: {} cycles, {} MAC ops, {} violations",
        report.total_cycles,
        report.mac_ops,
        report.violations.len()
    );
    if !report.violations.is_empty() {
        return Err(Error::Sim(format!(
            "run reported violations: {}",
            report.violations[0]
        )));
    }
    Ok(())
}

/// Independent re-check of all written artifacts. Any mismatch is a
/// verification failure.
pub fn cmd_verify(cfg: &ExperimentConfig, paths: &Paths) -> Result<()> {
    let m = SparseMatrix::load(&paths.pruned(), cfg.format)?;
    let image = load_image(paths)?;
    let stream = CommandStream::load(&paths.stream())?;
    let v = Vector::load(&paths.vector(), cfg.format)?;
    let g = geometry_from_header(cfg, &stream.header);

    if stream.header.digest != m.digest() {
        return Err(Error::Sim(
            "command stream was compiled from a different matrix".into(),
        ));
    }

    let f = stream.header.flags;
    match &image {
        Image::Sparse(img) => {
            let violations = validate_schedule(img, &stream, &g, &f);
            if !violations.is_empty() {
                return Err(Error::Sim(format!(
                    "schedule validation found {} violations: {}",
                    violations.len(),
                    violations[0]
                )));
            }
            let placement = Placement::read_text(fs::File::open(paths.placement())?)?;
            let report = run(&image, &stream, &v, Some(&placement), &cfg.timing, &g, None)?;
            if !report.violations.is_empty() {
                return Err(Error::Sim(format!(
                    "runtime checks found {} violations: {}",
                    report.violations.len(),
                    report.violations[0]
                )));
            }
            // bit-exact replay oracle over the placement actually on disk
            let mut streams = build_lane_streams(&m, &placement, &g)?;
            if f.reorder_active() {
                reorder_streams(&mut streams, &g);
            }
            let order = derive_accum_order(&streams, &placement, &m, &g);
            let expect = reference_mv_ordered(&order, &m, &v)?;
            if report.output != expect {
                let bad = report
                    .output
                    .iter()
                    .zip(&expect)
                    .position(|(a, b)| a != b)
                    .unwrap_or(0);
                return Err(Error::Sim(format!(
                    "output mismatch at row {bad}: {} vs expected {}",
                    report.output[bad], expect[bad]
                )));
            }
            check_against_wide(&report.output, &m, &v)?;
            println!("verify: OK ({} rows bit-exact)", expect.len());
        }
        Image::Dense(_) => {
            let report = run(&image, &stream, &v, None, &cfg.timing, &g, None)?;
            if !report.violations.is_empty() {
                return Err(Error::Sim(format!(
                    "runtime checks found violations: {}",
                    report.violations[0]
                )));
            }
            let order = derive_newton_order(&m.to_dense(), &g);
            let expect = reference_mv_ordered(&order, &m, &v)?;
            if report.output != expect {
                return Err(Error::Sim("dense output mismatch".into()));
            }
            check_against_wide(&report.output, &m, &v)?;
            println!("verify: OK ({} rows bit-exact, dense)", expect.len());
        }
    }
    Ok(())
}

/// Secondary sanity bound: the 16-bit pipeline output stays near the wide
/// reference, scaled by each row's absolute-product mass.
fn check_against_wide(output: &[f64], m: &SparseMatrix, v: &Vector) -> Result<()> {
    let wide = reference_mv(m, v, MvPrecision::Wide)?;
    let fmt = m.format;
    for (r, (a, b)) in output.iter().zip(&wide).enumerate() {
        let mass: f64 = m
            .row(r)
            .map(|(c, val)| {
                (fmt.decode(val) as f64 * fmt.decode(v.get_padded(c as usize)) as f64).abs()
            })
            .sum();
        if (a - b).abs() > 0.02 * mass.max(1e-6) + 1e-9 {
            return Err(Error::Sim(format!(
                "row {r} drifted from the wide reference: {a} vs {b}"
            )));
        }
    }
    Ok(())
}
