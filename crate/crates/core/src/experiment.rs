//! Configuration-driven experiment runner: builds the full pipeline for one
//! method (mesh, coefficient, assembly, decomposition, Schur complements,
//! adaptive eigenproblems, scalings, preconditioner, PCG solve) and emits
//! reports and spectrum dumps.

use crate::adaptive::{
    change_of_basis, edge_gevp, face_gevp, face_gevp_pair, select_primal,
    select_primal_two_sided, ChangeOfBasis, EigSelection,
};
use crate::bddc::{assemble_rhs, interface_apply, BddcPreconditioner, PartiallyCoupledOperator};
use crate::coeff::{generate_coefficient, CoefficientField, Pattern};
use crate::decomp::{build_jump_operator, classify_interface, ClassKind, Decomposition, WSpace};
use crate::fem::{assemble_subdomain, LocalSystem};
use crate::fetidp::{assemble_gtilde, build_u, mpp_apply, DualSystem, Projector};
use crate::krylov::{pcg, PcgOptions, SolveReport};
use crate::mesh::{build_mesh, StructuredMesh};
use crate::scaling::{build_scalings, transformed_deluxe, ScalingKind, ScalingSet};
use crate::schur::{class_blocks, schur_interface, ClassBlocks, Eta, SchurOperator};
use crate::{DMat, DVec, Error, Result};
use rayon::prelude::*;
use std::io::Write;
use std::time::Instant;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    M0,
    M1,
    M2,
    M3,
    M4,
}

impl Method {
    pub fn from_index(i: usize) -> Result<Method> {
        Ok(match i {
            0 => Method::M0,
            1 => Method::M1,
            2 => Method::M2,
            3 => Method::M3,
            4 => Method::M4,
            _ => return Err(Error::InvalidParameter(format!("method must be 0..=4, got {i}"))),
        })
    }

    pub fn name(&self) -> &'static str {
        match self {
            Method::M0 => "method0",
            Method::M1 => "method1",
            Method::M2 => "method2",
            Method::M3 => "method3",
            Method::M4 => "method4",
        }
    }

    /// Default scaling of the method: multiplicity for 0-2, deluxe for 3-4.
    pub fn scaling(&self) -> ScalingKind {
        match self {
            Method::M0 | Method::M1 | Method::M2 => ScalingKind::Multiplicity,
            Method::M3 | Method::M4 => ScalingKind::Deluxe,
        }
    }

    pub fn adaptive(&self) -> bool {
        !matches!(self, Method::M0)
    }

    pub fn projector(&self) -> bool {
        matches!(self, Method::M4)
    }
}

/// Tolerance specification: a literal, or one of the mesh-dependent
/// formulas (`1+log(H/h)` with the natural logarithm, `4H/h`).
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum TolSpec {
    Literal(f64),
    OnePlusLogHh,
    FourHh,
}

impl TolSpec {
    pub fn parse(text: &str) -> Result<TolSpec> {
        let t = text.trim();
        let squeezed: String = t.chars().filter(|c| !c.is_whitespace()).collect();
        match squeezed.as_str() {
            "1+log(H/h)" | "1+ln(H/h)" => Ok(TolSpec::OnePlusLogHh),
            "4H/h" | "4*H/h" => Ok(TolSpec::FourHh),
            _ => t
                .parse::<f64>()
                .map(TolSpec::Literal)
                .map_err(|_| Error::InvalidParameter(format!("bad tolerance spec '{text}'"))),
        }
    }

    pub fn value(&self, m: usize) -> f64 {
        match self {
            TolSpec::Literal(x) => *x,
            TolSpec::OnePlusLogHh => 1.0 + (m as f64).ln(),
            TolSpec::FourHh => 4.0 * m as f64,
        }
    }
}

#[derive(Debug, Clone)]
pub struct ExperimentConfig {
    pub dim: usize,
    pub n_sub: usize,
    pub m: usize,
    pub method: Method,
    /// Override of the method's default scaling (not exposed by the CLI;
    /// used by verification harnesses).
    pub scaling_override: Option<ScalingKind>,
    /// Face tolerance; defaults to 1+log(H/h).
    pub tol_face: Option<TolSpec>,
    /// Edge tolerance; defaults to 4H/h.
    pub tol_edge: Option<TolSpec>,
    pub pattern: Pattern,
    pub seed: u64,
    pub eta: Eta,
    pub rtol: f64,
    pub maxit: usize,
}

impl ExperimentConfig {
    pub fn new(dim: usize, n_sub: usize, m: usize, method: Method, pattern: Pattern) -> Self {
        ExperimentConfig {
            dim,
            n_sub,
            m,
            method,
            scaling_override: None,
            tol_face: None,
            tol_edge: None,
            pattern,
            seed: 0,
            eta: Eta::Full,
            rtol: 1e-10,
            maxit: 1000,
        }
    }

    pub fn scaling(&self) -> ScalingKind {
        self.scaling_override.unwrap_or_else(|| self.method.scaling())
    }

    pub fn lambda_face(&self) -> f64 {
        self.tol_face.unwrap_or(TolSpec::OnePlusLogHh).value(self.m)
    }

    pub fn lambda_edge(&self) -> f64 {
        self.tol_edge.unwrap_or(TolSpec::FourHh).value(self.m)
    }

    fn validate(&self) -> Result<()> {
        if self.method == Method::M0 && (self.tol_face.is_some() || self.tol_edge.is_some()) {
            eprintln!("warning: method0 ignores eigenvalue tolerances");
        }
        Ok(())
    }
}

struct Pipeline {
    mesh: StructuredMesh,
    coeff: CoefficientField,
    decomp: Decomposition,
    locals: Vec<LocalSystem>,
    schur: Vec<SchurOperator>,
    /// Pure-Neumann interface Schur complements feeding the eigenproblems
    /// (empty for the non-adaptive method).
    schur_neumann: Vec<SchurOperator>,
}

fn prepare(cfg: &ExperimentConfig, with_neumann: bool) -> Result<Pipeline> {
    let mesh = build_mesh(cfg.dim, cfg.n_sub, cfg.m)?;
    let coeff = generate_coefficient(&mesh, cfg.pattern.clone(), cfg.seed)?;
    let decomp = classify_interface(&mesh)?;
    let locals: Vec<LocalSystem> = (0..mesh.num_subdomains())
        .into_par_iter()
        .map(|s| assemble_subdomain(&mesh, s, &coeff))
        .collect::<Result<_>>()?;
    let schur: Vec<SchurOperator> = locals.par_iter().map(schur_interface).collect();
    let schur_neumann: Vec<SchurOperator> = if with_neumann {
        (0..mesh.num_subdomains())
            .into_par_iter()
            .map(|s| {
                crate::fem::assemble_subdomain_neumann(&mesh, s, &coeff)
                    .map(|ls| schur_interface(&ls))
            })
            .collect::<Result<_>>()?
    } else {
        Vec::new()
    };
    Ok(Pipeline {
        mesh,
        coeff,
        decomp,
        locals,
        schur,
        schur_neumann,
    })
}

fn principal_blocks(p: &Pipeline, schur: &[SchurOperator]) -> Vec<Vec<DMat>> {
    p.decomp
        .classes
        .par_iter()
        .map(|c| {
            (0..c.sharers.len())
                .map(|pos| crate::schur::class_block(&schur[c.sharers[pos]], &p.decomp, c.id, pos))
                .collect()
        })
        .collect()
}

/// GEVP blocks for every face/edge class at the requested slab thickness,
/// from the pure-Neumann local problems.
fn gevp_blocks(p: &Pipeline, eta: Eta) -> Result<Vec<Vec<ClassBlocks>>> {
    p.decomp
        .classes
        .par_iter()
        .map(|c| {
            if c.kind == ClassKind::Vertex {
                return Ok(Vec::new());
            }
            (0..c.sharers.len())
                .map(|pos| {
                    class_blocks(
                        &p.mesh,
                        &p.coeff,
                        &p.schur_neumann[c.sharers[pos]],
                        &p.decomp,
                        c.id,
                        pos,
                        eta,
                        true,
                    )
                })
                .collect::<Result<Vec<_>>>()
        })
        .collect()
}

/// Selections of one class: one eigenproblem per face/edge, two for the
/// two-problem face variant.
struct ClassSelection {
    class_id: usize,
    selections: Vec<EigSelection>,
}

impl ClassSelection {
    fn primal_vectors(&self) -> Vec<DVec> {
        self.selections
            .iter()
            .flat_map(|s| s.selected_vectors())
            .collect()
    }
}

/// Run the per-class eigenproblems. The left-hand quadratic forms are built
/// from the solver's principal blocks (the quantities the condition-number
/// bound controls); the right-hand sides are the pure-Neumann condensations
/// at the requested slab thickness.
fn run_gevps(
    p: &Pipeline,
    cfg: &ExperimentConfig,
    scalings: &ScalingSet,
    principal: &[Vec<DMat>],
    blocks: &[Vec<ClassBlocks>],
) -> Result<Vec<Option<ClassSelection>>> {
    let lam_f = cfg.lambda_face();
    let lam_e = cfg.lambda_edge();
    p.decomp
        .classes
        .par_iter()
        .map(|c| -> Result<Option<ClassSelection>> {
            match c.kind {
                ClassKind::Vertex => Ok(None),
                ClassKind::Face => {
                    let s = &principal[c.id];
                    let b = &blocks[c.id];
                    let d = &scalings.blocks[c.id];
                    let selections = if cfg.method == Method::M1 {
                        let (mut t1, mut t2) = face_gevp_pair(
                            c.id,
                            &b[0].condensed,
                            &b[1].condensed,
                            &s[0],
                            &s[1],
                        )?;
                        select_primal_two_sided(&mut t1, lam_f);
                        select_primal(&mut t2, lam_f);
                        vec![t1, t2]
                    } else {
                        let mut sel = face_gevp(
                            c.id,
                            &s[0],
                            &s[1],
                            &b[0].condensed,
                            &b[1].condensed,
                            &d[0],
                            &d[1],
                        )?;
                        select_primal(&mut sel, lam_f);
                        vec![sel]
                    };
                    Ok(Some(ClassSelection {
                        class_id: c.id,
                        selections,
                    }))
                }
                ClassKind::Edge => {
                    let st: Vec<DMat> = blocks[c.id].iter().map(|x| x.condensed.clone()).collect();
                    let mut sel = edge_gevp(c.id, &principal[c.id], &st, &scalings.blocks[c.id])?;
                    select_primal(&mut sel, lam_e);
                    Ok(Some(ClassSelection {
                        class_id: c.id,
                        selections: vec![sel],
                    }))
                }
            }
        })
        .collect()
}

fn count_primal(
    decomp: &Decomposition,
    selections: &[Option<ClassSelection>],
    method: Method,
) -> (usize, usize, usize, Vec<(usize, usize)>) {
    let mut pnum1 = 0;
    let mut pnum2 = 0;
    let mut pnum_e = 0;
    let mut per_class = Vec::new();
    for cs in selections.iter().flatten() {
        let kind = decomp.classes[cs.class_id].kind;
        let total: usize = cs.selections.iter().map(|s| s.selected_count()).sum();
        match kind {
            ClassKind::Face => {
                if method == Method::M1 {
                    pnum1 += cs.selections[0].selected_count();
                    pnum2 += cs.selections[1].selected_count();
                } else {
                    pnum2 += total;
                }
            }
            ClassKind::Edge => pnum_e += total,
            ClassKind::Vertex => {}
        }
        per_class.push((cs.class_id, total));
    }
    (pnum1, pnum2, pnum_e, per_class)
}

/// Run one experiment end to end and return the report. The manufactured
/// right-hand side is f = 1.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<SolveReport> {
    cfg.validate()?;
    let start = Instant::now();
    let p = prepare(cfg, cfg.method.adaptive())?;
    let scaling_kind = cfg.scaling();

    let principal = principal_blocks(&p, &p.schur);
    let nodal_scalings = build_scalings(&p.decomp, scaling_kind, Some(&principal))?;

    let selections: Vec<Option<ClassSelection>> = if cfg.method.adaptive() {
        let blocks = gevp_blocks(&p, cfg.eta)?;
        run_gevps(&p, cfg, &nodal_scalings, &principal, &blocks)?
    } else {
        p.decomp.classes.iter().map(|_| None).collect()
    };
    let (pnum1, pnum2, pnum_e, per_class) = count_primal(&p.decomp, &selections, cfg.method);

    let loads: Vec<DVec> = p.locals.iter().map(|ls| ls.condensed_load()).collect();

    let mut report = if cfg.method.projector() {
        solve_fetidp(&p, cfg, &nodal_scalings, &selections, &loads)?
    } else {
        solve_bddc(&p, cfg, &nodal_scalings, &principal, &selections, &loads)?
    };

    report.method = cfg.method.name().into();
    report.pnum1 = pnum1;
    report.pnum2 = pnum2;
    report.pnum_e = pnum_e;
    report.per_class_selected = per_class;
    report.wall_time_s = start.elapsed().as_secs_f64();

    // Condition-number audit against the explicit-constant bound.
    if cfg.method.adaptive() {
        let lam = if p.decomp.num_edges() > 0 {
            cfg.lambda_face().max(cfg.lambda_edge())
        } else {
            cfg.lambda_face()
        };
        let bound = p.decomp.bound_constant() * lam;
        report.bound_value = Some(bound);
        report.bound_ok = Some(report.kappa <= bound);
        if report.kappa > bound {
            eprintln!(
                "warning: {} kappa {:.3e} exceeds bound {:.3e}",
                report.method, report.kappa, bound
            );
        }
    }
    Ok(report)
}

fn basis_for_class(
    decomp: &Decomposition,
    selections: &[Option<ClassSelection>],
    class_id: usize,
) -> Result<ChangeOfBasis> {
    let c = &decomp.classes[class_id];
    if c.kind == ClassKind::Vertex {
        return Ok(ChangeOfBasis {
            p: DMat::identity(1, 1),
            k: 1,
        });
    }
    match &selections[class_id] {
        None => Ok(ChangeOfBasis::identity(c.size())),
        Some(cs) => {
            let vectors = cs.primal_vectors();
            if vectors.is_empty() {
                return Ok(ChangeOfBasis::identity(c.size()));
            }
            // The last selection holds the method's quadratic form (for the
            // two-problem variant that is the type-2 left side).
            let a_c = &cs.selections.last().unwrap().left;
            change_of_basis(a_c, &vectors)
        }
    }
}

fn solve_bddc(
    p: &Pipeline,
    cfg: &ExperimentConfig,
    nodal_scalings: &ScalingSet,
    principal: &[Vec<DMat>],
    selections: &[Option<ClassSelection>],
    loads: &[DVec],
) -> Result<SolveReport> {
    let basis: Vec<ChangeOfBasis> = (0..p.decomp.classes.len())
        .map(|cid| basis_for_class(&p.decomp, selections, cid))
        .collect::<Result<_>>()?;
    let k: Vec<usize> = basis.iter().map(|b| b.k).collect();
    let space = WSpace::new(&p.decomp, k)?;
    let op = PartiallyCoupledOperator::new(&p.decomp, space, &basis, &p.schur)?;

    // Scalings in transformed coordinates: deluxe is rebuilt from the
    // transformed principal blocks, multiplicity is coordinate-free.
    let scalings = match nodal_scalings.kind {
        ScalingKind::Multiplicity => nodal_scalings.clone(),
        ScalingKind::Deluxe => {
            let blocks: Vec<Vec<DMat>> = p
                .decomp
                .classes
                .par_iter()
                .map(|c| -> Result<Vec<DMat>> {
                    if c.kind == ClassKind::Vertex {
                        return Ok(crate::scaling::multiplicity_scaling(1, c.sharers.len()));
                    }
                    let transformed: Vec<DMat> = (0..c.sharers.len())
                        .map(|pos| basis[c.id].transform(&principal[c.id][pos]))
                        .collect();
                    transformed_deluxe(&transformed)
                })
                .collect::<Result<_>>()?;
            ScalingSet {
                kind: ScalingKind::Deluxe,
                blocks,
            }
        }
    };

    let rhs = assemble_rhs(&op, loads);
    let pre = BddcPreconditioner::new(&op, &scalings);
    let out = pcg(
        |w| interface_apply(&op, w),
        |r| pre.apply(r),
        &rhs,
        PcgOptions {
            rtol: cfg.rtol,
            maxit: cfg.maxit,
            stop_ref: None,
        },
    )?;
    Ok(out.report)
}

fn solve_fetidp(
    p: &Pipeline,
    cfg: &ExperimentConfig,
    nodal_scalings: &ScalingSet,
    selections: &[Option<ClassSelection>],
    loads: &[DVec],
) -> Result<SolveReport> {
    let basis: Vec<ChangeOfBasis> = p
        .decomp
        .classes
        .iter()
        .map(|c| {
            if c.kind == ClassKind::Vertex {
                ChangeOfBasis {
                    p: DMat::identity(1, 1),
                    k: 1,
                }
            } else {
                ChangeOfBasis::identity(c.size())
            }
        })
        .collect();
    let space = WSpace::vertex_primal(&p.decomp);
    let op = PartiallyCoupledOperator::new(&p.decomp, space, &basis, &p.schur)?;
    let jump = build_jump_operator(&p.decomp);
    let dual = DualSystem::new(&op, &jump)?;

    let single: Vec<Option<&EigSelection>> = selections
        .iter()
        .map(|cs| cs.as_ref().map(|c| &c.selections[0]))
        .collect();
    let u = build_u(&p.decomp, &jump, &single);
    let projector = Projector::new(u, |v| dual.f_apply(v))?;

    let gtilde = assemble_gtilde(&op, loads);
    let d = dual.rhs(&gtilde);
    let lambda0 = projector.initial_guess(&d);
    let r0 = &d - dual.f_apply(&lambda0);

    // Convergence is measured against the unprojected right-hand side: the
    // initial multiplier already satisfies the adaptive constraints and may
    // leave nothing to iterate on.
    let out = pcg(
        |lam| dual.f_apply(lam),
        |r| mpp_apply(&projector, |v| dual.m_feti_apply(nodal_scalings, v), r),
        &r0,
        PcgOptions {
            rtol: cfg.rtol,
            maxit: cfg.maxit,
            stop_ref: Some(d.norm()),
        },
    )?;
    let mut report = out.report;
    report.gram_condition = Some(projector.gram_condition);
    Ok(report)
}

/// One row of the spectrum dump.
#[derive(Debug)]
pub struct SpectrumRow {
    pub eta: Eta,
    pub class_id: usize,
    pub kind: ClassKind,
    pub infinite: usize,
    pub finite: Vec<f64>,
}

/// GEVP spectra of every face/edge class for each requested slab thickness.
pub fn dump_spectra(cfg: &ExperimentConfig, etas: &[Eta]) -> Result<Vec<SpectrumRow>> {
    let p = prepare(cfg, true)?;
    let principal = principal_blocks(&p, &p.schur);
    let scalings = build_scalings(&p.decomp, cfg.scaling(), Some(&principal))?;
    let mut rows = Vec::new();
    for &eta in etas {
        let blocks = gevp_blocks(&p, eta)?;
        let selections = run_gevps(&p, cfg, &scalings, &principal, &blocks)?;
        for cs in selections.iter().flatten() {
            let sel = cs.selections.last().unwrap();
            rows.push(SpectrumRow {
                eta,
                class_id: cs.class_id,
                kind: p.decomp.classes[cs.class_id].kind,
                infinite: sel.infinite_count(),
                finite: sel.finite_values(),
            });
        }
    }
    Ok(rows)
}

pub fn spectra_csv(rows: &[SpectrumRow]) -> String {
    let mut out = String::from("eta,class,kind,infinite,eigenvalues\n");
    for r in rows {
        let eta = match r.eta {
            Eta::Full => "full".to_string(),
            Eta::Cells(k) => format!("{k}h"),
        };
        let kind = match r.kind {
            ClassKind::Face => "face",
            ClassKind::Edge => "edge",
            ClassKind::Vertex => "vertex",
        };
        let eigs: Vec<String> = r.finite.iter().map(|v| format!("{v:.12e}")).collect();
        out.push_str(&format!(
            "{eta},{},{kind},{},{}\n",
            r.class_id,
            r.infinite,
            eigs.join(";")
        ));
    }
    out
}

/// Fixed CSV header of the run report.
pub const REPORT_CSV_HEADER: &str = "method,pnum1,pnum2,pnumE,iter,lambda_min,lambda_max,kappa,time";

pub fn report_csv(r: &SolveReport) -> String {
    format!(
        "{}\n{},{},{},{},{},{:.6e},{:.6e},{:.6e},{:.3}\n",
        REPORT_CSV_HEADER,
        r.method,
        r.pnum1,
        r.pnum2,
        r.pnum_e,
        r.iterations,
        r.lambda_min,
        r.lambda_max,
        r.kappa,
        r.wall_time_s
    )
}

pub fn report_json(r: &SolveReport) -> Result<String> {
    Ok(serde_json::to_string_pretty(r)?)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Csv,
    Json,
}

/// Write a report to a file in the requested format.
pub fn emit_report(r: &SolveReport, format: ReportFormat, path: &std::path::Path) -> Result<()> {
    let text = match format {
        ReportFormat::Csv => report_csv(r),
        ReportFormat::Json => report_json(r)?,
    };
    let mut f = std::fs::File::create(path)?;
    f.write_all(text.as_bytes())?;
    Ok(())
}
