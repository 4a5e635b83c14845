//! Two-dimensional potential flow: the cylinder oracle, operator rows for
//! continuity and slip boundaries, and velocity-field CSV exchange.
//!
//! The velocity is modelled as `∇φ` of a single centered scalar field, so
//! the two components are cross-correlated through kernel derivatives.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::calibration::{calibrate, Criterion, SearchConfig};
use crate::design::{encode_pointwise, ExtendedPoint, ObservationSet, OperatorRow, OperatorSystem};
use crate::error::{KrigingError, Result};
use crate::kernel::{MultiIndex, SqExpKernel};
use crate::predictors::{lagrangian_kriging, FitMeta, SolveConfig};
use crate::uq::{quadform_moments, var_ck, QuadFormMoments};

pub type Point2 = [f64; 2];

fn dx() -> MultiIndex {
    MultiIndex::new(vec![1, 0])
}

fn dy() -> MultiIndex {
    MultiIndex::new(vec![0, 1])
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CylinderGeometry {
    pub center: Point2,
    pub radius: f64,
}

impl CylinderGeometry {
    pub fn new(center: Point2, radius: f64) -> Result<Self> {
        if !(radius > 0.0 && radius.is_finite()) || center.iter().any(|c| !c.is_finite()) {
            return Err(KrigingError::InvalidParameter {
                name: "radius",
                reason: format!("need a finite positive radius, got {radius}"),
            });
        }
        Ok(CylinderGeometry { center, radius })
    }

    fn offset(&self, at: Point2) -> Result<(Point2, f64)> {
        let d = [at[0] - self.center[0], at[1] - self.center[1]];
        let r2 = d[0] * d[0] + d[1] * d[1];
        if r2.sqrt() < self.radius * (1.0 - 1e-12) {
            return Err(KrigingError::Domain(format!(
                "point ({}, {}) lies inside the cylinder",
                at[0], at[1]
            )));
        }
        Ok((d, r2))
    }
}

/// Velocity of uniform potential flow past a cylinder.
pub fn cylinder_flow_oracle(geom: &CylinderGeometry, freestream: Point2, at: Point2) -> Result<Point2> {
    let (d, r2) = geom.offset(at)?;
    let a2 = geom.radius * geom.radius;
    let vd = freestream[0] * d[0] + freestream[1] * d[1];
    let s = a2 / (r2 * r2);
    Ok([
        freestream[0] + s * (freestream[0] * r2 - 2.0 * vd * d[0]),
        freestream[1] + s * (freestream[1] * r2 - 2.0 * vd * d[1]),
    ])
}

/// Velocity potential `φ = (V∞·d)(1 + R²/r²)` of the same flow.
pub fn cylinder_potential(geom: &CylinderGeometry, freestream: Point2, at: Point2) -> Result<f64> {
    let (d, r2) = geom.offset(at)?;
    let vd = freestream[0] * d[0] + freestream[1] * d[1];
    Ok(vd * (1.0 + geom.radius * geom.radius / r2))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VelocityObs {
    pub x: Point2,
    pub v: Point2,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundaryPoint {
    pub x: Point2,
    pub normal: Point2,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FlowProblem {
    pub velocity_obs: Vec<VelocityObs>,
    pub continuity_points: Vec<Point2>,
    pub boundary_points: Vec<BoundaryPoint>,
    pub pred_grid: Vec<Point2>,
    pub freestream: Point2,
}

impl FlowProblem {
    pub fn validate(&self) -> Result<()> {
        for (i, b) in self.boundary_points.iter().enumerate() {
            let n = b.normal[0].hypot(b.normal[1]);
            if (n - 1.0).abs() > 1e-10 {
                return Err(KrigingError::InvalidParameter {
                    name: "boundary_points",
                    reason: format!("normal {i} has norm {n}"),
                });
            }
        }
        Ok(())
    }
}

/// Uniform collocation grid for the continuity equation. Candidates are
/// cell centers of an `nx × ny` partition of the box; those inside the
/// obstacle outline or within `margin · size` of it are dropped, where
/// `size` is the largest distance from the outline centroid to its points.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ContinuityLayout {
    pub nx: usize,
    pub ny: usize,
    pub x_range: (f64, f64),
    pub y_range: (f64, f64),
    pub margin: f64,
    /// Keep only candidates within this distance of the outline centroid.
    pub outer_radius: Option<f64>,
}

fn seg_distance(p: Point2, a: Point2, b: Point2) -> f64 {
    let ab = [b[0] - a[0], b[1] - a[1]];
    let ap = [p[0] - a[0], p[1] - a[1]];
    let len2 = ab[0] * ab[0] + ab[1] * ab[1];
    let t = if len2 > 0.0 {
        ((ap[0] * ab[0] + ap[1] * ab[1]) / len2).clamp(0.0, 1.0)
    } else {
        0.0
    };
    (ap[0] - t * ab[0]).hypot(ap[1] - t * ab[1])
}

fn inside_polygon(p: Point2, poly: &[Point2]) -> bool {
    let mut inside = false;
    let n = poly.len();
    for i in 0..n {
        let (a, b) = (poly[i], poly[(i + 1) % n]);
        if (a[1] > p[1]) != (b[1] > p[1]) {
            let x = a[0] + (p[1] - a[1]) / (b[1] - a[1]) * (b[0] - a[0]);
            if p[0] < x {
                inside = !inside;
            }
        }
    }
    inside
}

fn centroid(points: &[Point2]) -> Point2 {
    let n = points.len().max(1) as f64;
    let s = points.iter().fold([0.0, 0.0], |a, p| [a[0] + p[0], a[1] + p[1]]);
    [s[0] / n, s[1] / n]
}

impl ContinuityLayout {
    /// Box grid with `aspect` times as many cells along x as along y.
    pub fn with_aspect(x_range: (f64, f64), y_range: (f64, f64), ny: usize, aspect: f64, margin: f64) -> Result<Self> {
        if ny == 0 || !(aspect > 0.0 && aspect.is_finite()) {
            return Err(KrigingError::InvalidParameter {
                name: "aspect",
                reason: format!("need ny ≥ 1 and a positive aspect, got {ny} and {aspect}"),
            });
        }
        Ok(ContinuityLayout {
            nx: ((ny as f64 * aspect).round() as usize).max(1),
            ny,
            x_range,
            y_range,
            margin,
            outer_radius: None,
        })
    }

    pub fn points(&self, outline: &[Point2]) -> Vec<Point2> {
        let c = centroid(outline);
        let size = outline
            .iter()
            .map(|p| (p[0] - c[0]).hypot(p[1] - c[1]))
            .fold(0.0, f64::max);
        let cell = |r: (f64, f64), n: usize, i: usize| r.0 + (r.1 - r.0) * (i as f64 + 0.5) / n as f64;
        let mut out = Vec::new();
        for j in 0..self.ny {
            for i in 0..self.nx {
                let p = [cell(self.x_range, self.nx, i), cell(self.y_range, self.ny, j)];
                if let Some(r) = self.outer_radius {
                    if (p[0] - c[0]).hypot(p[1] - c[1]) > r {
                        continue;
                    }
                }
                if outline.len() >= 3 {
                    if inside_polygon(p, outline) {
                        continue;
                    }
                    let n = outline.len();
                    let near = (0..n).any(|k| seg_distance(p, outline[k], outline[(k + 1) % n]) < self.margin * size);
                    if near {
                        continue;
                    }
                }
                out.push(p);
            }
        }
        out
    }
}

/// Where the cylinder experiment observes the velocity, in units of the
/// radius and relative to the center.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ObservationPlacement {
    /// Equispaced in angle on a circle, starting on the positive x axis.
    Ring { radius: f64 },
    /// Uniform in angle and radius over an annulus.
    Scattered { r_min: f64, r_max: f64, seed: u64 },
}

/// Documented cylinder experiment layout. Lengths are in units of the
/// cylinder radius.
#[derive(Debug, Clone, PartialEq)]
pub struct CylinderLayout {
    pub n_obs: usize,
    pub placement: ObservationPlacement,
    pub n_boundary: usize,
    pub continuity: ContinuityLayout,
    /// Prediction grid resolution per axis over `[-pred_radius, pred_radius]²`.
    pub pred_n: usize,
    /// Grid points farther than this from the center are dropped.
    pub pred_radius: f64,
}

impl Default for CylinderLayout {
    fn default() -> Self {
        CylinderLayout {
            n_obs: 12,
            placement: ObservationPlacement::Ring { radius: 2.0 },
            n_boundary: 10,
            continuity: ContinuityLayout {
                nx: 11,
                ny: 11,
                x_range: (-3.0, 3.0),
                y_range: (-3.0, 3.0),
                margin: 0.05,
                outer_radius: Some(3.0),
            },
            pred_n: 25,
            pred_radius: 2.0,
        }
    }
}

impl CylinderLayout {
    /// Default layout with observations scattered over `[1.5, 3]` radii.
    pub fn scattered(seed: u64) -> Self {
        CylinderLayout {
            placement: ObservationPlacement::Scattered {
                r_min: 1.5,
                r_max: 3.0,
                seed,
            },
            pred_radius: 3.0,
            ..Self::default()
        }
    }

    fn observation_offsets(&self) -> Result<Vec<Point2>> {
        let tau = std::f64::consts::TAU;
        match self.placement {
            ObservationPlacement::Ring { radius } => {
                if !(radius >= 1.0) {
                    return Err(KrigingError::InvalidParameter {
                        name: "placement.radius",
                        reason: format!("ring radius {radius} lies inside the cylinder"),
                    });
                }
                Ok((0..self.n_obs)
                    .map(|i| {
                        let t = tau * i as f64 / self.n_obs as f64;
                        [radius * t.cos(), radius * t.sin()]
                    })
                    .collect())
            }
            ObservationPlacement::Scattered { r_min, r_max, seed } => {
                if !(r_min >= 1.0 && r_max > r_min && r_max.is_finite()) {
                    return Err(KrigingError::InvalidParameter {
                        name: "placement",
                        reason: format!("need 1 ≤ r_min < r_max, got [{r_min}, {r_max}]"),
                    });
                }
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                Ok((0..self.n_obs)
                    .map(|_| {
                        let r = rng.random_range(r_min..r_max);
                        let t = rng.random_range(0.0..tau);
                        [r * t.cos(), r * t.sin()]
                    })
                    .collect())
            }
        }
    }
}

/// Observations from the oracle, slip rows equispaced in angle on the
/// surface, continuity rows on the layout grid and a prediction grid
/// filling the annulus between the surface and `pred_radius`.
pub fn cylinder_problem(geom: &CylinderGeometry, freestream: Point2, layout: &CylinderLayout) -> Result<FlowProblem> {
    let (c, r) = (geom.center, geom.radius);
    let tau = std::f64::consts::TAU;
    let velocity_obs = layout
        .observation_offsets()?
        .into_iter()
        .map(|o| {
            let x = [c[0] + r * o[0], c[1] + r * o[1]];
            Ok(VelocityObs {
                x,
                v: cylinder_flow_oracle(geom, freestream, x)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let boundary_points: Vec<BoundaryPoint> = (0..layout.n_boundary)
        .map(|i| {
            let t = tau * i as f64 / layout.n_boundary as f64;
            BoundaryPoint {
                x: [c[0] + r * t.cos(), c[1] + r * t.sin()],
                normal: [t.cos(), t.sin()],
            }
        })
        .collect();
    let scaled = ContinuityLayout {
        x_range: (c[0] + r * layout.continuity.x_range.0, c[0] + r * layout.continuity.x_range.1),
        y_range: (c[1] + r * layout.continuity.y_range.0, c[1] + r * layout.continuity.y_range.1),
        outer_radius: layout.continuity.outer_radius.map(|o| o * r),
        ..layout.continuity
    };
    let outline: Vec<Point2> = boundary_points.iter().map(|b| b.x).collect();
    let continuity_points = scaled.points(&outline);
    let outer = layout.pred_radius * r;
    let mut pred_grid = Vec::new();
    if layout.pred_n >= 2 {
        let step = 2.0 * outer / (layout.pred_n - 1) as f64;
        for j in 0..layout.pred_n {
            for i in 0..layout.pred_n {
                let p = [c[0] - outer + step * i as f64, c[1] - outer + step * j as f64];
                let d = (p[0] - c[0]).hypot(p[1] - c[1]);
                if d >= r && d <= outer {
                    pred_grid.push(p);
                }
            }
        }
    }
    Ok(FlowProblem {
        velocity_obs,
        continuity_points,
        boundary_points,
        pred_grid,
        freestream,
    })
}

/// The two gradient atoms at each location.
pub fn gradient_atoms(points: &[Point2]) -> Vec<ExtendedPoint> {
    points
        .iter()
        .flat_map(|p| [ExtendedPoint::at(p, dx()), ExtendedPoint::at(p, dy())])
        .collect()
}

fn slip_rows(points: &[BoundaryPoint]) -> Vec<OperatorRow> {
    points
        .iter()
        .map(|b| OperatorRow::new(b.x.to_vec(), vec![(b.normal[0], dx()), (b.normal[1], dy())]))
        .collect()
}

fn continuity_rows(points: &[Point2]) -> Vec<OperatorRow> {
    points
        .iter()
        .map(|p| {
            OperatorRow::new(
                p.to_vec(),
                vec![(1.0, MultiIndex::new(vec![2, 0])), (1.0, MultiIndex::new(vec![0, 2]))],
            )
        })
        .collect()
}

fn encode_rows(rows: &[OperatorRow]) -> Result<OperatorSystem> {
    if rows.is_empty() {
        Ok(OperatorSystem::empty())
    } else {
        encode_pointwise(rows, &vec![0.0; rows.len()])
    }
}

fn velocity_observations(p: &FlowProblem) -> Result<ObservationSet> {
    let locs: Vec<Point2> = p.velocity_obs.iter().map(|o| o.x).collect();
    let values = p.velocity_obs.iter().flat_map(|o| o.v).collect();
    ObservationSet::new(gradient_atoms(&locs), values, None)
}

/// Observations of `∇φ`, slip rows followed by continuity rows, and the
/// gradient atoms of the prediction grid.
pub fn build_flow_system(p: &FlowProblem) -> Result<(ObservationSet, OperatorSystem, Vec<ExtendedPoint>)> {
    if p.velocity_obs.is_empty() {
        return Err(KrigingError::InvalidParameter {
            name: "velocity_obs",
            reason: "no observations".into(),
        });
    }
    p.validate()?;
    let obs = velocity_observations(p)?;
    let mut rows = slip_rows(&p.boundary_points);
    rows.extend(continuity_rows(&p.continuity_points));
    Ok((obs, encode_rows(&rows)?, gradient_atoms(&p.pred_grid)))
}

/// Predicted velocity field over the prediction grid.
#[derive(Debug, Clone)]
pub struct FlowField {
    pub points: Vec<Point2>,
    pub velocity: Vec<Point2>,
    pub variance: Option<Vec<Point2>>,
    pub cov_xy: Option<Vec<f64>>,
    pub magsq: Option<Vec<QuadFormMoments>>,
    /// Predicted velocity at the boundary collocation points.
    pub boundary_velocity: Vec<Point2>,
    /// `max |n·v̂|` over the boundary points.
    pub boundary_residual_max: f64,
    pub meta: FitMeta,
}

fn pairs(v: &DVector<f64>, from: usize, count: usize) -> Vec<Point2> {
    (0..count).map(|i| [v[from + 2 * i], v[from + 2 * i + 1]]).collect()
}

fn residual_max(boundary: &[BoundaryPoint], v: &[Point2]) -> f64 {
    boundary
        .iter()
        .zip(v)
        .map(|(b, v)| (b.normal[0] * v[0] + b.normal[1] * v[1]).abs())
        .fold(0.0, f64::max)
}

/// Co-Kriging of the velocity field with slip and continuity rows, with
/// the per-point 2×2 predictive covariance and `‖v‖²` moments. The system
/// is solved at unit variance, so the nugget is relative to `σ²`, and the
/// covariance is then scaled by the variance of `k`.
pub fn predict_flow_ck(k: &SqExpKernel, p: &FlowProblem, cfg: &SolveConfig) -> Result<FlowField> {
    let (obs, ops, mut pred) = build_flow_system(p)?;
    let q = p.pred_grid.len();
    let bpts: Vec<Point2> = p.boundary_points.iter().map(|b| b.x).collect();
    pred.extend(gradient_atoms(&bpts));
    let uq = var_ck(&SqExpKernel::unit(k.theta(), 2)?, &obs, &ops, &pred, cfg)?;
    let s2 = k.sigma2();
    let cov = uq.covariance.as_ref().expect("co-Kriging covariance");
    let velocity = pairs(&uq.mean, 0, q);
    let mut variance = Vec::with_capacity(q);
    let mut cov_xy = Vec::with_capacity(q);
    let mut magsq = Vec::with_capacity(q);
    for (i, v) in velocity.iter().enumerate() {
        let (a, b) = (2 * i, 2 * i + 1);
        let off = 0.5 * s2 * (cov[(a, b)] + cov[(b, a)]);
        let c2 = [[s2 * uq.variance[a], off], [off, s2 * uq.variance[b]]];
        // clamp the 2×2 block onto the PSD cone before taking moments
        let dd = c2[0][0] * c2[1][1];
        let off = c2[0][1].clamp(-dd.sqrt(), dd.sqrt());
        let c2 = [[c2[0][0], off], [off, c2[1][1]]];
        variance.push([c2[0][0], c2[1][1]]);
        cov_xy.push(off);
        magsq.push(quadform_moments(*v, c2)?);
    }
    let boundary_velocity = pairs(&uq.mean, 2 * q, bpts.len());
    Ok(FlowField {
        points: p.pred_grid.clone(),
        boundary_residual_max: residual_max(&p.boundary_points, &boundary_velocity),
        boundary_velocity,
        velocity,
        variance: Some(variance),
        cov_xy: Some(cov_xy),
        magsq: Some(magsq),
        meta: uq.meta,
    })
}

/// Lengthscale choice for the second, per-component interpolation step.
#[derive(Debug, Clone, PartialEq)]
pub struct TwoStepOptions {
    /// `None` calibrates by virtual leave-one-out.
    pub theta2: Option<f64>,
    pub search: SearchConfig,
}

impl Default for TwoStepOptions {
    fn default() -> Self {
        TwoStepOptions {
            theta2: None,
            search: SearchConfig::default(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct TwoStepResult {
    pub field: FlowField,
    pub theta2: f64,
    /// Per-component variance estimates of the second step.
    pub sigma2: Point2,
}

/// Lagrangian Kriging restricted to the boundary, then independent simple
/// Kriging per velocity component. Continuity rows constrain no gradient
/// atom and are dropped. Only the lengthscale of `k` is used; both steps
/// solve at unit variance.
pub fn predict_flow_lk_twostep(
    k: &SqExpKernel,
    p: &FlowProblem,
    cfg: &SolveConfig,
    opts: &TwoStepOptions,
) -> Result<TwoStepResult> {
    if p.velocity_obs.is_empty() {
        return Err(KrigingError::InvalidParameter {
            name: "velocity_obs",
            reason: "no observations".into(),
        });
    }
    p.validate()?;
    if !p.continuity_points.is_empty() {
        log::info!(
            "dropping {} continuity rows: they involve no gradient atom",
            p.continuity_points.len()
        );
    }
    let obs = velocity_observations(p)?;
    let mut meta = FitMeta::default();
    let boundary_velocity: Vec<Point2> = if p.boundary_points.is_empty() {
        Vec::new()
    } else {
        let ops = encode_rows(&slip_rows(&p.boundary_points))?;
        let fit = lagrangian_kriging(&SqExpKernel::unit(k.theta(), 2)?, &obs, &ops, None, cfg)?;
        meta = fit.meta;
        p.boundary_points
            .iter()
            .map(|b| {
                let ix = ops.colloc_points.iter().position(|a| a.x == b.x && a.m == dx()).expect("x atom");
                let iy = ops.colloc_points.iter().position(|a| a.x == b.x && a.m == dy()).expect("y atom");
                [fit.predictions[ix], fit.predictions[iy]]
            })
            .collect()
    };

    let mut locs: Vec<Vec<f64>> = p.velocity_obs.iter().map(|o| o.x.to_vec()).collect();
    locs.extend(p.boundary_points.iter().map(|b| b.x.to_vec()));
    let comp = |c: usize| -> Result<ObservationSet> {
        let mut vals: Vec<f64> = p.velocity_obs.iter().map(|o| o.v[c]).collect();
        vals.extend(boundary_velocity.iter().map(|v| v[c]));
        ObservationSet::from_values(&locs, &vals)
    };
    let (ox, oy) = (comp(0)?, comp(1)?);
    let theta2 = match opts.theta2 {
        Some(t) => t,
        None => {
            let both = combined_component_theta(&ox, &oy, &opts.search, cfg)?;
            both.0
        }
    };
    let ku = SqExpKernel::unit(theta2, 2)?;
    let sx = crate::calibration::sigma2_virtual(&ku, &ox, theta2, cfg)?.value;
    let sy = crate::calibration::sigma2_virtual(&ku, &oy, theta2, cfg)?.value;
    let grid: Vec<ExtendedPoint> = p.pred_grid.iter().map(|g| ExtendedPoint::value(g.to_vec())).collect();
    let empty = OperatorSystem::empty();
    let fx = var_ck(&ku, &ox, &empty, &grid, cfg)?;
    let fy = var_ck(&ku, &oy, &empty, &grid, cfg)?;
    let velocity: Vec<Point2> = fx.mean.iter().zip(fy.mean.iter()).map(|(a, b)| [*a, *b]).collect();
    let variance: Vec<Point2> = fx
        .variance
        .iter()
        .zip(fy.variance.iter())
        .map(|(a, b)| [sx * a, sy * b])
        .collect();
    let magsq = velocity
        .iter()
        .zip(&variance)
        .map(|(v, s)| quadform_moments(*v, [[s[0], 0.0], [0.0, s[1]]]))
        .collect::<Result<Vec<_>>>()?;
    meta.nugget_used = meta.nugget_used.max(fx.meta.nugget_used).max(fy.meta.nugget_used);
    meta.cov_evals += fx.meta.cov_evals + fy.meta.cov_evals;
    meta.construction_s += fx.meta.construction_s + fy.meta.construction_s;
    meta.inversion_s += fx.meta.inversion_s + fy.meta.inversion_s;
    Ok(TwoStepResult {
        field: FlowField {
            points: p.pred_grid.clone(),
            cov_xy: Some(vec![0.0; velocity.len()]),
            velocity,
            variance: Some(variance),
            magsq: Some(magsq),
            boundary_residual_max: residual_max(&p.boundary_points, &boundary_velocity),
            boundary_velocity,
            meta,
        },
        theta2,
        sigma2: [sx, sy],
    })
}

/// One lengthscale for both components: minimizes the summed virtual
/// leave-one-out MSE. Returns `(θ, criterion)`.
fn combined_component_theta(
    ox: &ObservationSet,
    oy: &ObservationSet,
    search: &SearchConfig,
    cfg: &SolveConfig,
) -> Result<(f64, f64)> {
    let bounds = search.bounds.unwrap_or_else(|| {
        let m = crate::calibration::median_pairwise_distance(ox);
        (1e-2 * m, 1e2 * m)
    });
    let s = crate::calibration::optimize_theta(
        |t| {
            let k = SqExpKernel::unit(t, 2)?;
            Ok(crate::calibration::loocv_mse_virtual(&k, ox, cfg)? + crate::calibration::loocv_mse_virtual(&k, oy, cfg)?)
        },
        bounds,
        search.budget,
    )?;
    Ok((s.theta, s.value))
}

/// Calibrate the first-step lengthscale of the two-step method: virtual
/// leave-one-out on the unconstrained gradient observations.
pub fn calibrate_flow_step1(p: &FlowProblem, search: &SearchConfig, cfg: &SolveConfig) -> Result<(f64, f64)> {
    let obs = velocity_observations(p)?;
    let r = calibrate(Criterion::SimpleLoo, &obs, 2, search, cfg)?;
    Ok((r.theta_hat, r.sigma2_hat))
}

/// Observations, prediction grid and boundary records read from a file.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct FlowFragment {
    pub velocity_obs: Vec<VelocityObs>,
    pub pred_grid: Vec<Point2>,
    pub boundary_points: Vec<BoundaryPoint>,
    pub warnings: Vec<String>,
}

impl FlowFragment {
    pub fn from_problem(p: &FlowProblem) -> Self {
        FlowFragment {
            velocity_obs: p.velocity_obs.clone(),
            pred_grid: p.pred_grid.clone(),
            boundary_points: p.boundary_points.clone(),
            warnings: Vec::new(),
        }
    }

    /// Complete the fragment with a freestream and continuity points laid
    /// out around the outline of its boundary points.
    pub fn into_problem(self, freestream: Point2, continuity: Option<&ContinuityLayout>) -> FlowProblem {
        let outline: Vec<Point2> = self.boundary_points.iter().map(|b| b.x).collect();
        FlowProblem {
            continuity_points: continuity.map(|c| c.points(&outline)).unwrap_or_default(),
            velocity_obs: self.velocity_obs,
            boundary_points: self.boundary_points,
            pred_grid: self.pred_grid,
            freestream,
        }
    }
}

const CSV_HEADER: [&str; 5] = ["kind", "x", "y", "a", "b"];

/// Read a velocity-field CSV with header `kind,x,y,a,b`.
pub fn ingest_velocity_csv(path: &Path) -> Result<FlowFragment> {
    let name = path.display().to_string();
    let perr = |line: u64, reason: String| KrigingError::Parse {
        path: name.clone(),
        line,
        reason,
    };
    let mut rdr = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .flexible(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| KrigingError::Io(format!("{name}: {e}")))?;
    let header = rdr.headers().map_err(|e| perr(1, e.to_string()))?.clone();
    let header_line = rdr.position().line().max(1);
    if header.iter().collect::<Vec<_>>() != CSV_HEADER {
        return Err(perr(header_line, format!("expected header `{}`", CSV_HEADER.join(","))));
    }
    let mut frag = FlowFragment::default();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| perr(e.position().map_or(0, |p| p.line()), e.to_string()))?;
        let line = rec.position().map_or(0, |p| p.line());
        let field = |i: usize, what: &str| -> Result<f64> {
            let s = rec.get(i).unwrap_or("");
            let v: f64 = s.parse().map_err(|_| perr(line, format!("cannot parse {what} `{s}`")))?;
            if !v.is_finite() {
                return Err(perr(line, format!("non-finite {what}")));
            }
            Ok(v)
        };
        let kind = rec.get(0).unwrap_or("");
        let x = [field(1, "x")?, field(2, "y")?];
        match kind {
            "obs" => frag.velocity_obs.push(VelocityObs {
                x,
                v: [field(3, "vx")?, field(4, "vy")?],
            }),
            "grid" => frag.pred_grid.push(x),
            "boundary" => {
                let n = [field(3, "nx")?, field(4, "ny")?];
                let norm = n[0].hypot(n[1]);
                if norm == 0.0 {
                    return Err(perr(line, "zero normal".into()));
                }
                if (norm - 1.0).abs() > 1e-6 {
                    let msg = format!("{name}:{line}: normal norm {norm} renormalized");
                    log::warn!("{msg}");
                    frag.warnings.push(msg);
                }
                frag.boundary_points.push(BoundaryPoint {
                    x,
                    normal: [n[0] / norm, n[1] / norm],
                });
            }
            other => return Err(perr(line, format!("unknown record kind `{other}`"))),
        }
    }
    if frag.velocity_obs.is_empty() {
        return Err(perr(rdr.position().line(), "no observations".into()));
    }
    Ok(frag)
}

/// Write a fragment in the format read by [`ingest_velocity_csv`], with
/// 17 significant digits.
pub fn emit_velocity_csv(path: &Path, frag: &FlowFragment) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "{}", CSV_HEADER.join(","))?;
    for o in &frag.velocity_obs {
        writeln!(w, "obs,{:.16e},{:.16e},{:.16e},{:.16e}", o.x[0], o.x[1], o.v[0], o.v[1])?;
    }
    for b in &frag.boundary_points {
        writeln!(
            w,
            "boundary,{:.16e},{:.16e},{:.16e},{:.16e}",
            b.x[0], b.x[1], b.normal[0], b.normal[1]
        )?;
    }
    for g in &frag.pred_grid {
        writeln!(w, "grid,{:.16e},{:.16e},,", g[0], g[1])?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit_cylinder() -> CylinderGeometry {
        CylinderGeometry::new([0.0, 0.0], 1.0).unwrap()
    }

    #[test]
    fn oracle_landmarks() {
        let g = unit_cylinder();
        let top = cylinder_flow_oracle(&g, [1.0, 0.0], [0.0, 1.0]).unwrap();
        assert!((top[0] - 2.0).abs() < 1e-14 && top[1].abs() < 1e-14);
        let front = cylinder_flow_oracle(&g, [1.0, 0.0], [-1.0, 0.0]).unwrap();
        assert!(front[0].abs() < 1e-14 && front[1].abs() < 1e-14);
        let far = cylinder_flow_oracle(&g, [0.6, -0.8], [1e6, 3e6]).unwrap();
        assert!((far[0] - 0.6).abs() < 1e-9 && (far[1] + 0.8).abs() < 1e-9);
        assert!(matches!(cylinder_flow_oracle(&g, [1.0, 0.0], [0.5, 0.0]), Err(KrigingError::Domain(_))));
    }

    #[test]
    fn oracle_is_gradient_of_potential() {
        let g = CylinderGeometry::new([0.3, -0.2], 0.7).unwrap();
        let v = [0.8, 0.5];
        let h = 1e-6;
        for at in [[1.5, 0.4], [-0.9, -1.3], [0.3, 1.2]] {
            let u = cylinder_flow_oracle(&g, v, at).unwrap();
            let fx = (cylinder_potential(&g, v, [at[0] + h, at[1]]).unwrap()
                - cylinder_potential(&g, v, [at[0] - h, at[1]]).unwrap())
                / (2.0 * h);
            let fy = (cylinder_potential(&g, v, [at[0], at[1] + h]).unwrap()
                - cylinder_potential(&g, v, [at[0], at[1] - h]).unwrap())
                / (2.0 * h);
            assert!((u[0] - fx).abs() < 1e-8 && (u[1] - fy).abs() < 1e-8);
        }
    }

    #[test]
    fn documented_layout_counts() {
        let p = cylinder_problem(&unit_cylinder(), [1.0, 0.0], &CylinderLayout::default()).unwrap();
        assert_eq!(p.velocity_obs.len(), 12);
        assert_eq!(p.boundary_points.len(), 10);
        assert_eq!(p.continuity_points.len(), 88);
        assert!(p.continuity_points.iter().all(|c| {
            let r = c[0].hypot(c[1]);
            (1.05..=3.0).contains(&r)
        }));
        let (obs, ops, pred) = build_flow_system(&p).unwrap();
        assert_eq!(obs.len(), 24);
        assert_eq!(ops.n_rows(), 98);
        assert!(ops.rhs.iter().all(|&v| v == 0.0));
        assert_eq!(pred.len(), 2 * p.pred_grid.len());
    }

    #[test]
    fn axis_aligned_slip_row() {
        let p = FlowProblem {
            velocity_obs: vec![VelocityObs { x: [5.0, 0.0], v: [1.0, 0.0] }],
            continuity_points: vec![],
            boundary_points: vec![BoundaryPoint { x: [1.0, 0.0], normal: [1.0, 0.0] }],
            pred_grid: vec![],
            freestream: [1.0, 0.0],
        };
        let (obs, ops, _) = build_flow_system(&p).unwrap();
        assert_eq!(obs.len(), 2);
        assert_eq!(ops.u.transpose().as_slice(), &[0.0, 1.0]);
        assert_eq!(ops.colloc_points[0].m, dy());
        assert_eq!(ops.rhs[0], 0.0);

        let bare = FlowProblem { boundary_points: vec![], ..p };
        let (obs, ops, _) = build_flow_system(&bare).unwrap();
        assert_eq!((obs.len(), ops.n_rows()), (2, 0));
    }

    #[test]
    fn scattered_layout_is_seeded() {
        let g = unit_cylinder();
        let a = cylinder_problem(&g, [1.0, 0.0], &CylinderLayout::scattered(3)).unwrap();
        let b = cylinder_problem(&g, [1.0, 0.0], &CylinderLayout::scattered(3)).unwrap();
        assert_eq!(a, b);
        assert!(a.velocity_obs.iter().all(|o| (1.5..3.0).contains(&o.x[0].hypot(o.x[1]))));
        let c = cylinder_problem(&g, [1.0, 0.0], &CylinderLayout::scattered(4)).unwrap();
        assert_ne!(a.velocity_obs, c.velocity_obs);
    }

    #[test]
    fn aspect_grid_counts() {
        let l = ContinuityLayout::with_aspect((-2.0, 3.0), (-0.5, 0.5), 5, 4.0, 0.05).unwrap();
        assert_eq!((l.nx, l.ny), (20, 5));
        assert_eq!(l.points(&[]).len(), 100);
        assert!(ContinuityLayout::with_aspect((0.0, 1.0), (0.0, 1.0), 0, 1.0, 0.0).is_err());
    }
}
