//! Command execution behind the `wgspec` binary: artifact files, the run
//! manifest, and exit-code mapping.
//!
//! Every run writes `manifest.txt` into the output directory, success or
//! not, so a failed run still leaves a record of what was attempted. Data
//! files print floats with 17 significant digits; two runs of the same
//! binary on the same config produce byte-identical CSVs.

use std::fmt::Display;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use num_complex::Complex64;
use sha2::{Digest, Sha256};

use crate::assembly::{assemble_norm_mass, assemble_operator, l2_norm, DofMap};
use crate::config::{parse_config, DumpModes, RunConfig};
use crate::eigensolver::shift_invert_arnoldi;
use crate::mesh::{build_structured_mesh_aniso, Mesh};
use crate::scattering::{sweep_r00, write_sweep_csv};
use crate::spectra::{
    classify_entry, compute_spectrum, conjugation_pairing, default_branch_count,
    essential_distance, flux_defect, incident_coefficients, read_eigenvalues_csv,
    write_branches_csv, write_eigenvalues_csv, write_field_csv, Classification, SpectrumEntry,
};
use crate::{Error, Result};

pub const EXIT_OK: i32 = 0;
/// Configuration rejected before any numerics ran.
pub const EXIT_CONFIG: i32 = 2;
/// The computation itself failed or finished incomplete.
pub const EXIT_NUMERICAL: i32 = 3;

/// Conjugate partners in the k-plane must agree to this absolute
/// distance to count as paired in the manifest census.
const PAIR_TOL: f64 = 1e-4;

/// A re-solved eigenvalue must land this close (relative) to the table
/// entry it refines, or the row is flagged unreliable.
const CLASSIFY_MATCH_TOL: f64 = 1e-3;

/// Eigenpairs requested per classify re-solve; the target is a single
/// known eigenvalue, a few spares guard against near-degeneracy.
const CLASSIFY_NEV: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CliCommand {
    Spectrum,
    Sweep,
    Classify,
    MeshDump,
}

impl CliCommand {
    pub fn label(self) -> &'static str {
        match self {
            CliCommand::Spectrum => "spectrum",
            CliCommand::Sweep => "sweep",
            CliCommand::Classify => "classify",
            CliCommand::MeshDump => "mesh-dump",
        }
    }
}

/// One invocation of the tool, as parsed from the command line.
#[derive(Debug, Clone)]
pub struct CliRequest {
    pub command: CliCommand,
    pub config_path: PathBuf,
    pub out_dir: PathBuf,
    /// Worker-thread cap; `None` leaves the default pool.
    pub threads: Option<usize>,
    /// Exit 0 even when some shifts fail to converge.
    pub allow_partial: bool,
}

/// Everything a run reports besides its data files.
#[derive(Default)]
struct CommandOutput {
    /// Files written, relative to the output directory.
    outputs: Vec<String>,
    warnings: Vec<String>,
    /// Extra manifest lines, in insertion order.
    facts: Vec<(&'static str, String)>,
    /// At least one shift delivered fewer pairs than requested.
    partial: bool,
}

impl CommandOutput {
    fn fact(&mut self, key: &'static str, value: impl Display) {
        self.facts.push((key, value.to_string()));
    }

    fn timing(&mut self, key: &'static str, since: Instant) {
        self.facts.push((key, format!("{:.3}", since.elapsed().as_secs_f64())));
    }
}

/// Runs one command to completion and returns the process exit code.
/// Prints progress to stdout and diagnostics to stderr; all structured
/// results go to files under the request's output directory.
pub fn execute(req: &CliRequest) -> i32 {
    let start = Instant::now();
    if let Err(e) = fs::create_dir_all(&req.out_dir) {
        eprintln!("error: cannot create output directory {}: {e}", req.out_dir.display());
        return EXIT_CONFIG;
    }

    let mut out = CommandOutput::default();
    let (config_sha, result) = match fs::read(&req.config_path) {
        Err(e) => (
            "unreadable".to_string(),
            Err(Error::Config(format!(
                "cannot read config {}: {e}",
                req.config_path.display()
            ))),
        ),
        Ok(bytes) => {
            let sha = hex_sha256(&bytes);
            let run = match std::str::from_utf8(&bytes) {
                Err(e) => Err(Error::Config(format!("config is not UTF-8: {e}"))),
                Ok(text) => execute_parsed(req, text, &mut out),
            };
            (sha, run)
        }
    };

    let status = match &result {
        Err(_) => "error",
        Ok(()) if out.partial => "partial",
        Ok(()) => "ok",
    };
    let mut manifest = String::new();
    let mut line = |k: &str, v: &str| {
        manifest.push_str(k);
        manifest.push_str(" = ");
        manifest.push_str(v);
        manifest.push('\n');
    };
    line("command", req.command.label());
    line("config", &req.config_path.display().to_string());
    line("config_sha256", &config_sha);
    line("threads", &req.threads.map_or("default".into(), |n| n.to_string()));
    line("allow_partial", if req.allow_partial { "true" } else { "false" });
    line("status", status);
    if let Err(e) = &result {
        line("error", &e.to_string());
    }
    for (k, v) in &out.facts {
        line(k, v);
    }
    line("elapsed_total_s", &format!("{:.3}", start.elapsed().as_secs_f64()));
    for w in &out.warnings {
        line("warning", w);
    }
    for o in &out.outputs {
        line("output", o);
    }
    let manifest_path = req.out_dir.join("manifest.txt");
    let manifest_failed = fs::write(&manifest_path, manifest).is_err();
    if manifest_failed {
        eprintln!("error: cannot write {}", manifest_path.display());
    }

    for w in &out.warnings {
        eprintln!("warning: {w}");
    }
    match result {
        Ok(()) => {
            if out.partial && !req.allow_partial {
                eprintln!(
                    "error: some shifts did not converge; pass --allow-partial to accept the partial spectrum"
                );
                EXIT_NUMERICAL
            } else if manifest_failed {
                EXIT_NUMERICAL
            } else {
                EXIT_OK
            }
        }
        Err(e) => {
            eprintln!("error: {e}");
            exit_code_of(&e)
        }
    }
}

pub fn exit_code_of(e: &Error) -> i32 {
    if e.is_config() {
        EXIT_CONFIG
    } else {
        EXIT_NUMERICAL
    }
}

fn hex_sha256(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

fn execute_parsed(req: &CliRequest, text: &str, out: &mut CommandOutput) -> Result<()> {
    let cfg = parse_config(text)?;
    let mut dispatch = || match req.command {
        CliCommand::Spectrum => run_spectrum(&cfg, &req.out_dir, out),
        CliCommand::Sweep => run_sweep(&cfg, &req.out_dir, out),
        CliCommand::Classify => run_classify(&cfg, &req.out_dir, out),
        CliCommand::MeshDump => run_mesh_dump(&cfg, &req.out_dir, out),
    };
    match req.threads {
        None => dispatch(),
        Some(0) => Err(Error::Config("threads must be at least 1".into())),
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| Error::Config(format!("cannot build a {n}-thread pool: {e}")))?
            .install(dispatch),
    }
}

fn build_mesh(cfg: &RunConfig) -> Result<Mesh> {
    build_structured_mesh_aniso(&cfg.problem, cfg.mesh_h, cfg.mesh_hy.unwrap_or(cfg.mesh_h))
}

/// Creates `name` under `dir` (subdirectories included) and hands the
/// buffered writer to `fill`; registers the file on success.
fn write_file(
    dir: &Path,
    name: &str,
    out: &mut CommandOutput,
    fill: impl FnOnce(&mut dyn std::io::Write) -> Result<()>,
) -> Result<()> {
    let path = dir.join(name);
    let io = |e: std::io::Error| Error::io(path.display().to_string(), e);
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(io)?;
    }
    let file = fs::File::create(&path).map_err(io)?;
    let mut writer = std::io::BufWriter::new(file);
    fill(&mut writer)?;
    writer.flush().map_err(io)?;
    println!("wrote {}", path.display());
    out.outputs.push(name.to_string());
    Ok(())
}

fn run_spectrum(cfg: &RunConfig, dir: &Path, out: &mut CommandOutput) -> Result<()> {
    if cfg.shifts.is_empty() {
        return Err(Error::Config("a spectrum run needs at least one shift".into()));
    }
    let t_mesh = Instant::now();
    let mesh = build_mesh(cfg)?;
    let dofs = DofMap::new(&mesh);
    out.fact("dof_count", dofs.n_dofs());
    out.timing("elapsed_mesh_s", t_mesh);

    let t_solve = Instant::now();
    let result = compute_spectrum(&cfg.problem, &mesh, cfg.operator, &cfg.shifts, &cfg.params)?;
    out.timing("elapsed_solve_s", t_solve);
    out.warnings.extend(result.warnings.iter().cloned());
    out.partial = !result.warnings.is_empty();

    let t_write = Instant::now();
    write_file(dir, "eigenvalues.csv", out, |w| {
        write_eigenvalues_csv(&result, w).map_err(|e| Error::io("eigenvalues.csv", e))
    })?;

    let k_max = cfg.branches_k_max.unwrap_or_else(|| {
        (cfg.shifts.iter().map(|s| s.norm()).fold(0.0, f64::max) + 1.0).max(4.0)
    });
    write_file(dir, "branches.csv", out, |w| {
        write_branches_csv(cfg.problem.theta, cfg.operator, k_max, cfg.branch_samples, w)
            .map_err(|e| Error::io("branches.csv", e))
    })?;

    for (i, entry) in result.entries.iter().enumerate() {
        let wanted = match cfg.dump_modes {
            DumpModes::None => false,
            DumpModes::Real => matches!(
                entry.classification,
                Classification::Trapped | Classification::ReflectionlessMode
            ),
            DumpModes::NonArtifact => {
                entry.classification != Classification::EssentialArtifact
            }
            DumpModes::All => true,
        };
        if !wanted {
            continue;
        }
        let name = format!("modes/mode_{i:03}.csv");
        write_file(dir, &name, out, |w| {
            write_field_csv(&result.modes[i], &mesh, &dofs, cfg.field_step, w)
        })?;
    }
    out.timing("elapsed_write_s", t_write);

    let report = conjugation_pairing(&result, cfg.params.real_tol, PAIR_TOL);
    out.fact("pairing_pairs", report.pairs.len());
    out.fact("pairing_unmatched", report.unmatched.len());
    out.fact("pairing_max_defect", format!("{:.3e}", report.max_defect));
    out.fact("pairing_passed", report.passed());
    Ok(())
}

fn run_sweep(cfg: &RunConfig, dir: &Path, out: &mut CommandOutput) -> Result<()> {
    let spec = cfg
        .sweep
        .ok_or_else(|| Error::Config("a sweep run needs k_min, k_max and k_step".into()))?;
    let ks = spec.wavenumbers();
    if ks.is_empty() {
        return Err(Error::Config("the sweep grid is empty".into()));
    }
    let t_mesh = Instant::now();
    let mesh = build_mesh(cfg)?;
    out.fact("dof_count", DofMap::new(&mesh).n_dofs());
    out.timing("elapsed_mesh_s", t_mesh);

    let t_solve = Instant::now();
    let points = sweep_r00(&cfg.problem, &mesh, &ks, &cfg.avoid, cfg.exclusion)?;
    out.timing("elapsed_solve_s", t_solve);
    for p in &points {
        if let Some(flag) = &p.flag {
            out.warnings.push(format!("k = {}: {flag}", p.k));
        }
    }
    write_file(dir, "sweep.csv", out, |w| {
        write_sweep_csv(&points, w).map_err(|e| Error::io("sweep.csv", e))
    })
}

/// One output row of the classify command.
struct ClassifiedRow {
    entry: SpectrumEntry,
    flux_defect: Option<f64>,
    /// `|b_p^−|` over the propagating modes, present for real entries.
    b_minus_abs: Option<Vec<f64>>,
    unreliable: bool,
}

const CLASSIFIED_CSV_HEADER: &str =
    "re_k,im_k,re_lambda,im_lambda,residual,ess_distance,rho,classification,flux_defect,b_minus_abs,flag";

fn write_classified_csv(rows: &[ClassifiedRow], w: &mut dyn std::io::Write) -> Result<()> {
    let io = |e: std::io::Error| Error::io("classified.csv", e);
    writeln!(w, "{CLASSIFIED_CSV_HEADER}").map_err(io)?;
    for row in rows {
        let e = &row.entry;
        let rho = e.rho.map_or(String::new(), |r| format!("{r:.16e}"));
        let flux = row.flux_defect.map_or(String::new(), |f| format!("{f:.16e}"));
        let b = row.b_minus_abs.as_ref().map_or(String::new(), |bs| {
            bs.iter().map(|b| format!("{b:.16e}")).collect::<Vec<_>>().join(";")
        });
        let flag = if row.unreliable { "unreliable" } else { "" };
        writeln!(
            w,
            "{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{},{},{},{},{}",
            e.k.re,
            e.k.im,
            e.lambda.re,
            e.lambda.im,
            e.residual,
            e.ess_distance,
            rho,
            e.classification.label(),
            flux,
            b,
            flag
        )
        .map_err(io)?;
    }
    Ok(())
}

/// Re-derives the classification data for an existing eigenvalue table:
/// every row is re-solved on the configured mesh with a shift detuned
/// slightly off the tabulated eigenvalue, then annotated with recomputed
/// `ρ`, classification, section-flux defect, and left-trace modal
/// amplitudes. Rows whose re-solve misses the tabulated value or exceeds
/// the residual tolerance keep their input data and an `unreliable` flag.
fn run_classify(cfg: &RunConfig, dir: &Path, out: &mut CommandOutput) -> Result<()> {
    let table = cfg
        .eigenvalues_csv
        .as_ref()
        .ok_or_else(|| Error::Config("a classify run needs eigenvalues_csv".into()))?;
    let text = fs::read_to_string(table)
        .map_err(|e| Error::Config(format!("cannot read eigenvalue table {table}: {e}")))?;
    let entries = read_eigenvalues_csv(&text)?;
    if entries.is_empty() {
        return write_file(dir, "classified.csv", out, |w| write_classified_csv(&[], w));
    }

    let t_mesh = Instant::now();
    let mesh = build_mesh(cfg)?;
    let op = assemble_operator(&mesh, &cfg.operator.profile(&cfg.problem))?;
    let norm_mass = assemble_norm_mass(&mesh, &op.dof_map);
    out.fact("dof_count", op.dof_map.n_dofs());
    out.timing("elapsed_mesh_s", t_mesh);

    let t_solve = Instant::now();
    let h = mesh.max_cell_size();
    let params = &cfg.params;
    let mut rows = Vec::with_capacity(entries.len());
    for entry in entries {
        let scale = 1.0 + entry.lambda.norm();
        // The exact eigenvalue makes the shifted pencil singular; a small
        // complex detuning keeps the factorization solid while the target
        // stays by far the nearest eigenvalue.
        let sigma = entry.lambda + Complex64::new(1e-4, 1e-4) * scale;
        let refined = shift_invert_arnoldi(
            &op.s,
            &op.m,
            sigma,
            CLASSIFY_NEV,
            params.tol,
            params.max_restarts,
        )
        .ok()
        .and_then(|outcome| {
            outcome
                .pairs
                .into_iter()
                .map(|p| ((p.lambda - entry.lambda).norm(), p))
                .min_by(|a, b| a.0.total_cmp(&b.0))
                .filter(|(d, _)| *d <= CLASSIFY_MATCH_TOL * scale)
                .map(|(_, p)| p)
        });

        let row = match refined {
            None => {
                out.warnings.push(format!(
                    "k = {}: no eigenvalue within {:.1e} of the tabulated value",
                    entry.k,
                    CLASSIFY_MATCH_TOL * scale
                ));
                ClassifiedRow { entry, flux_defect: None, b_minus_abs: None, unreliable: true }
            }
            Some(pair) => {
                let mut vector = pair.vector;
                let l2 = l2_norm(&norm_mass, &vector);
                if l2 > 0.0 {
                    for v in &mut vector {
                        *v /= l2;
                    }
                }
                let lambda = pair.lambda;
                let k = lambda.sqrt();
                let ess = essential_distance(
                    lambda,
                    cfg.problem.theta,
                    cfg.operator,
                    default_branch_count(lambda),
                );
                let artifact_tol = params.artifact_scale * h * h * (1.0 + lambda.norm());
                let real = ess > artifact_tol && k.im.abs() <= params.real_tol;
                let coeffs = if real {
                    incident_coefficients(&vector, &mesh, &op.dof_map, &cfg.problem, k.re).ok()
                } else {
                    None
                };
                let rho = coeffs.as_ref().map(|c| c.iter().map(|a| a.norm_sqr()).sum());
                let classification = classify_entry(
                    cfg.operator,
                    k,
                    ess,
                    artifact_tol,
                    rho,
                    params.real_tol,
                    params.rho_tol,
                );
                let flux = if real {
                    flux_defect(&vector, &mesh, &op.dof_map, &cfg.problem).ok()
                } else {
                    None
                };
                ClassifiedRow {
                    entry: SpectrumEntry {
                        k,
                        lambda,
                        residual: pair.residual,
                        ess_distance: ess,
                        rho,
                        classification,
                    },
                    flux_defect: flux,
                    b_minus_abs: coeffs
                        .map(|c| c.iter().map(|a| a.norm()).collect()),
                    unreliable: pair.residual > params.tol,
                }
            }
        };
        rows.push(row);
    }
    out.timing("elapsed_solve_s", t_solve);
    out.fact("rows", rows.len());
    out.fact("unreliable_rows", rows.iter().filter(|r| r.unreliable).count());
    write_file(dir, "classified.csv", out, |w| write_classified_csv(&rows, w))
}

fn run_mesh_dump(cfg: &RunConfig, dir: &Path, out: &mut CommandOutput) -> Result<()> {
    let mesh = build_mesh(cfg)?;
    out.fact("dof_count", DofMap::new(&mesh).n_dofs());
    out.fact("triangles", mesh.triangles.len());
    write_file(dir, "mesh.txt", out, |w| {
        mesh.dump(w).map_err(|e| Error::io("mesh.txt", e))
    })
}
