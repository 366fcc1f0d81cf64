//! Frontier plots as SVG and fit summaries as plain-text tables, with compute in PFLOPs.

use super::allocation::{AllocationResult, ConsistencyReport, PFLOPS};
use super::bootstrap::BootstrapSummary;
use super::frontier::{Axis, FrontierPoint};
use super::power_law::PowerLawFit;
use super::sum_law::SumPowerLawFit;
use crate::error::{Error, Result};
use plotters::prelude::*;
use serde::{Deserialize, Serialize};
use std::fmt::Write as _;

/// Everything fitted for one architecture.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct FamilyReport {
    pub arch: String,
    pub frontier_flops: Vec<FrontierPoint>,
    pub fit_flops: Option<PowerLawFit>,
    pub frontier_hours: Vec<FrontierPoint>,
    pub fit_hours: Option<PowerLawFit>,
    pub sum_law: Option<SumPowerLawFit>,
    pub allocation: Option<AllocationResult>,
    pub consistency: Option<ConsistencyReport>,
}

fn budget_scale(axis: Axis) -> f64 {
    match axis {
        Axis::Flops => PFLOPS,
        Axis::Hours => 1.0,
    }
}

const PALETTE: [RGBColor; 4] = [RGBColor(31, 119, 180), RGBColor(214, 39, 40), RGBColor(44, 160, 44), RGBColor(148, 103, 189)];

/// Log–log frontier of each family with its fitted power law overlaid.
pub fn frontier_svg(families: &[FamilyReport], axis: Axis) -> Result<String> {
    let scale = budget_scale(axis);
    let series: Vec<(&FamilyReport, &[FrontierPoint], Option<&PowerLawFit>)> = families
        .iter()
        .map(|f| match axis {
            Axis::Flops => (f, f.frontier_flops.as_slice(), f.fit_flops.as_ref()),
            Axis::Hours => (f, f.frontier_hours.as_slice(), f.fit_hours.as_ref()),
        })
        .filter(|s| !s.1.is_empty())
        .collect();
    if series.is_empty() {
        return Err(Error::NoData("no frontier points to plot".into()));
    }
    let all = series.iter().flat_map(|s| s.1.iter());
    let (mut x0, mut x1, mut y0, mut y1) = (f64::INFINITY, 0.0f64, f64::INFINITY, 0.0f64);
    for p in all {
        x0 = x0.min(p.budget / scale);
        x1 = x1.max(p.budget / scale);
        y0 = y0.min(p.loss);
        y1 = y1.max(p.loss);
    }
    let (x0, x1) = (x0 / 1.5, x1 * 1.5);
    let (y0, y1) = (y0 / 1.2, y1 * 1.2);
    let x_label = match axis {
        Axis::Flops => "compute (PFLOPs)",
        Axis::Hours => "wall-clock (hours)",
    };

    let mut svg = String::new();
    {
        let root = SVGBackend::with_string(&mut svg, (720, 480)).into_drawing_area();
        let draw = |e: &dyn std::fmt::Display| Error::Config(format!("plot rendering failed: {e}"));
        root.fill(&WHITE).map_err(|e| draw(&e))?;
        let mut chart = ChartBuilder::on(&root)
            .margin(16)
            .x_label_area_size(40)
            .y_label_area_size(56)
            .build_cartesian_2d((x0..x1).log_scale(), (y0..y1).log_scale())
            .map_err(|e| draw(&e))?;
        chart
            .configure_mesh()
            .x_desc(x_label)
            .y_desc("validation loss")
            .x_label_formatter(&|v| format!("{v:.0e}"))
            .y_label_formatter(&|v| format!("{v:.3}"))
            .draw()
            .map_err(|e| draw(&e))?;
        for (i, (fam, pts, fit)) in series.iter().enumerate() {
            let color = PALETTE[i % PALETTE.len()];
            chart
                .draw_series(pts.iter().map(|p| Circle::new((p.budget / scale, p.loss), 3, color.filled())))
                .map_err(|e| draw(&e))?
                .label(fam.arch.clone())
                .legend(move |(x, y)| Circle::new((x + 8, y), 3, color.filled()));
            if let Some(fit) = fit {
                let n = 64;
                let curve = (0..=n).map(|k| {
                    let x = x0 * (x1 / x0).powf(k as f64 / n as f64);
                    (x, fit.predict(x * scale))
                });
                chart.draw_series(LineSeries::new(curve, color.stroke_width(2))).map_err(|e| draw(&e))?;
            }
        }
        chart.configure_series_labels().background_style(WHITE.mix(0.8)).border_style(BLACK).draw().map_err(|e| draw(&e))?;
        root.present().map_err(|e| draw(&e))?;
    }
    Ok(svg)
}

fn with_ci(value: f64, ci: Option<&BootstrapSummary>, name: &str, digits: usize) -> String {
    match ci.and_then(|c| c.get(name)) {
        Some(i) => format!("{value:.digits$} [{:.digits$}, {:.digits$}]", i.lo, i.hi),
        None => format!("{value:.digits$}"),
    }
}

fn log10_with_ci(value: f64, ci: Option<&BootstrapSummary>, name: &str) -> String {
    match ci.and_then(|c| c.get(name)) {
        Some(i) => format!("{:.3} [{:.3}, {:.3}]", value.log10(), i.lo.log10(), i.hi.log10()),
        None => format!("{:.3}", value.log10()),
    }
}

/// Frontier exponents and prefactors per family, next to the exponent the sum law implies.
pub fn frontier_table(families: &[FamilyReport]) -> String {
    let mut out = format!("{:<18} {:>30} {:>12} {:>30} {:>12} {:>12}\n", "arch", "gamma_c", "F_c", "gamma_h", "F_h", "gamma_c(sum)");
    for f in families {
        let c = f.fit_flops.as_ref().map_or("-".into(), |p| with_ci(p.gamma, p.ci.as_ref(), "gamma", 3));
        let fc = f.fit_flops.as_ref().map_or("-".into(), |p| format!("{:.4e}", p.prefactor_in_units(PFLOPS)));
        let h = f.fit_hours.as_ref().map_or("-".into(), |p| with_ci(p.gamma, p.ci.as_ref(), "gamma", 3));
        let fh = f.fit_hours.as_ref().map_or("-".into(), |p| format!("{:.4e}", p.f));
        let derived = f.allocation.as_ref().map_or("-".into(), |a| format!("{:.3}", a.gamma_c));
        let _ = writeln!(out, "{:<18} {:>30} {:>12} {:>30} {:>12} {:>12}", f.arch, c, fc, h, fh, derived);
    }
    out
}

/// Separable-law parameters per family, prefactors as base-10 logarithms.
pub fn sum_law_table(families: &[FamilyReport]) -> String {
    let mut out = format!("{:<18} {:>24} {:>24} {:>24} {:>24}\n", "arch", "alpha", "beta", "log10 A", "log10 B");
    for f in families {
        let Some(s) = &f.sum_law else { continue };
        let ci = s.ci.as_ref();
        let _ = writeln!(
            out,
            "{:<18} {:>24} {:>24} {:>24} {:>24}",
            f.arch,
            with_ci(s.alpha, ci, "alpha", 3),
            with_ci(s.beta, ci, "beta", 3),
            log10_with_ci(s.a, ci, "A"),
            log10_with_ci(s.b, ci, "B")
        );
    }
    out
}

/// Allocation exponents, the optimal split at a few budgets, and the consistency verdict.
pub fn allocation_table(families: &[FamilyReport], budgets_pflops: &[f64]) -> String {
    let mut out = String::new();
    for f in families {
        let Some(a) = &f.allocation else { continue };
        let _ = writeln!(
            out,
            "{}: a={:.4} b={:.4} G={:.4e} xi={:.4} gamma_c={:.4} F_c={:.4e}",
            f.arch,
            a.a,
            a.b,
            a.g,
            a.xi,
            a.gamma_c,
            a.f_c * PFLOPS.powf(-a.gamma_c)
        );
        for &c in budgets_pflops {
            let flops = c * PFLOPS;
            let _ = writeln!(
                out,
                "  C={c:.3e} PFLOPs  N*={:.4e}  D*={:.4e}  L*={:.5}",
                a.optimal_params(flops),
                a.optimal_tokens(flops),
                a.frontier_loss(flops)
            );
        }
        if let Some(r) = &f.consistency {
            let _ = writeln!(
                out,
                "  consistency: gamma {:.4} vs {:.4} (gap {:.4}), F {:.4e} vs {:.4e} (relative gap {:.3}) -> {}",
                r.gamma_frontier,
                r.gamma_derived,
                r.gamma_gap,
                r.f_frontier,
                r.f_derived,
                r.f_relative_gap,
                if r.passed { "consistent" } else { "inconsistent" }
            );
        }
    }
    out
}
