//! Potential flow around a cylinder, from the oracle or a velocity CSV.

use physkrig::calibration::Criterion;
use physkrig::flowlab::{
    build_flow_system, cylinder_flow_oracle, cylinder_problem, ingest_velocity_csv, predict_flow_ck,
    predict_flow_lk_twostep, ContinuityLayout, CylinderGeometry, CylinderLayout, FlowField, FlowProblem,
    ObservationPlacement, Point2, TwoStepOptions,
};
use physkrig::SqExpKernel;

use super::{errors, resolve_kernel};
use crate::config::{Experiment, Method, Placement, RunConfig};
use crate::error::RunError;
use crate::report::{Artifacts, Cell, RunReport, Table};

fn config_err(field: &str, reason: String) -> RunError {
    RunError::Config {
        field: field.to_string(),
        reason,
    }
}

/// Continuity layout of the config, in units of the radius.
fn continuity(cfg: &RunConfig) -> Result<ContinuityLayout, RunError> {
    let c = &cfg.flow.continuity;
    let x = (c.x_range[0], c.x_range[1]);
    let y = (c.y_range[0], c.y_range[1]);
    let mut l = match c.aspect {
        Some(a) => ContinuityLayout::with_aspect(x, y, c.ny, a, c.margin)?,
        None => ContinuityLayout {
            nx: c.nx,
            ny: c.ny,
            x_range: x,
            y_range: y,
            margin: c.margin,
            outer_radius: None,
        },
    };
    l.outer_radius = c.outer_radius;
    Ok(l)
}

pub fn cylinder_layout(cfg: &RunConfig) -> Result<CylinderLayout, RunError> {
    let c = cfg.resolved_counts();
    let f = &cfg.flow;
    Ok(CylinderLayout {
        n_obs: c.n.unwrap(),
        placement: match f.placement {
            Placement::Ring => ObservationPlacement::Ring { radius: f.ring_radius },
            Placement::Scattered => ObservationPlacement::Scattered {
                r_min: f.scatter[0],
                r_max: f.scatter[1],
                seed: cfg.seed,
            },
        },
        n_boundary: c.q1.unwrap(),
        continuity: continuity(cfg)?,
        pred_n: f.pred_n,
        pred_radius: f.pred_radius,
    })
}

/// The flow problem of the config and whether the oracle is the truth.
pub fn flow_problem(cfg: &RunConfig) -> Result<(FlowProblem, CylinderGeometry, bool, Vec<String>), RunError> {
    let f = &cfg.flow;
    let geom = CylinderGeometry::new(f.center, f.radius)?;
    let (p, truth, warnings) = match cfg.experiment {
        Experiment::FlowCsv => {
            let path = f.input.as_ref().expect("validated");
            let frag = ingest_velocity_csv(path)?;
            let warnings = frag.warnings.clone();
            let l = continuity(cfg)?;
            let (c, r) = (f.center, f.radius);
            let scaled = ContinuityLayout {
                x_range: (c[0] + r * l.x_range.0, c[0] + r * l.x_range.1),
                y_range: (c[1] + r * l.y_range.0, c[1] + r * l.y_range.1),
                outer_radius: l.outer_radius.map(|o| o * r),
                ..l
            };
            let p = frag.into_problem(f.freestream, Some(&scaled));
            for (field, want, got) in [
                ("counts.n", cfg.counts.n, p.velocity_obs.len()),
                ("counts.q1", cfg.counts.q1, p.boundary_points.len()),
            ] {
                if let Some(w) = want {
                    if w != got {
                        return Err(config_err(field, format!("expected {w}, the input has {got}")));
                    }
                }
            }
            (p, f.oracle_truth, warnings)
        }
        _ => (cylinder_problem(&geom, f.freestream, &cylinder_layout(cfg)?)?, true, Vec::new()),
    };
    if let Some(q2) = cfg.counts.q2 {
        if q2 != p.continuity_points.len() {
            return Err(config_err(
                "counts.q2",
                format!("the continuity layout generates {} points, not {q2}", p.continuity_points.len()),
            ));
        }
    }
    p.validate()?;
    Ok((p, geom, truth, warnings))
}

pub fn run_flow(cfg: &RunConfig, rep: &mut RunReport, art: &mut Artifacts) -> Result<(), RunError> {
    let (p, geom, has_truth, warnings) = flow_problem(cfg)?;
    rep.warnings.extend(warnings);
    rep.layout_entry("n_obs", p.velocity_obs.len());
    rep.layout_entry("n_boundary", p.boundary_points.len());
    rep.layout_entry("n_continuity", p.continuity_points.len());
    rep.layout_entry("n_pred", p.pred_grid.len());
    rep.layout_entry(
        "placement",
        match cfg.flow.placement {
            Placement::Ring => "ring",
            Placement::Scattered => "scattered",
        },
    );

    let scfg = cfg.solve_config();
    let (obs, ops, _) = build_flow_system(&p)?;
    let vinf = cfg.flow.freestream[0].hypot(cfg.flow.freestream[1]);
    let field: FlowField = match cfg.method {
        Method::Sk => {
            let fit = resolve_kernel(cfg, Criterion::SimpleLoo, &obs, 2, rep)?;
            let bare = FlowProblem {
                continuity_points: Vec::new(),
                boundary_points: Vec::new(),
                ..p.clone()
            };
            predict_flow_ck(&SqExpKernel::new(fit.sigma2, fit.theta, 2)?, &bare, &scfg)?
        }
        Method::Ck => {
            let fit = resolve_kernel(cfg, Criterion::CoKrigingLoo(&ops), &obs, 2, rep)?;
            predict_flow_ck(&SqExpKernel::new(fit.sigma2, fit.theta, 2)?, &p, &scfg)?
        }
        Method::Lk => {
            let fit = resolve_kernel(cfg, Criterion::SimpleLoo, &obs, 2, rep)?;
            let opts = TwoStepOptions {
                theta2: cfg.flow.theta2.value(),
                search: cfg.search(),
            };
            let r = predict_flow_lk_twostep(&SqExpKernel::new(fit.sigma2, fit.theta, 2)?, &p, &scfg, &opts)?;
            rep.detail("theta2", r.theta2);
            rep.detail("sigma2_step2", vec![r.sigma2[0], r.sigma2[1]]);
            r.field
        }
        Method::Ok | Method::LkInterp => unreachable!("rejected by validation"),
    };
    rep.add_fit(&field.meta);
    if cfg.method != Method::Sk {
        rep.constraint_residual_max = Some(field.boundary_residual_max);
        rep.detail("boundary_residual_rel", field.boundary_residual_max / vinf.max(f64::MIN_POSITIVE));
    }

    if has_truth {
        let truth: Vec<Point2> = field
            .points
            .iter()
            .map(|&x| cylinder_flow_oracle(&geom, cfg.flow.freestream, x))
            .collect::<Result<_, _>>()?;
        let flat = |v: &[Point2]| v.iter().flat_map(|a| [a[0], a[1]]).collect::<Vec<f64>>();
        let (mse, rel) = errors(&flat(&field.velocity), &flat(&truth));
        // per-point squared error, not per component
        rep.mse_vs_truth = Some(2.0 * mse);
        rep.rel_l2 = Some(rel);
    }

    let mut t = Table::new(vec![
        "x", "y", "vx", "vy", "var_vx", "var_vy", "cov_vxy", "magsq_mean", "magsq_var",
    ]);
    let nan = f64::NAN;
    for (i, (x, v)) in field.points.iter().zip(&field.velocity).enumerate() {
        let var = field.variance.as_ref().map_or([nan, nan], |s| s[i]);
        let cxy = field.cov_xy.as_ref().map_or(nan, |c| c[i]);
        let (mm, mv) = field.magsq.as_ref().map_or((nan, nan), |m| (m[i].mean, m[i].variance));
        t.push(
            [x[0], x[1], v[0], v[1], var[0], var[1], cxy, mm, mv]
                .into_iter()
                .map(Cell::Real)
                .collect(),
        );
    }
    art.add("predictions.csv", t);

    if !field.boundary_velocity.is_empty() {
        let mut b = Table::new(vec!["x", "y", "vx", "vy", "normal_velocity"]);
        for (bp, v) in p.boundary_points.iter().zip(&field.boundary_velocity) {
            let nv = bp.normal[0] * v[0] + bp.normal[1] * v[1];
            b.push([bp.x[0], bp.x[1], v[0], v[1], nv].into_iter().map(Cell::Real).collect());
        }
        art.add("boundary.csv", b);
    }
    Ok(())
}
