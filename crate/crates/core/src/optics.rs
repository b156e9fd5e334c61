//! Optical components and their actions on mode-indexed states.
//!
//! Every non-absorbing element is a unitary over the scene's mode basis:
//! beam splitters rotate a two-mode subspace, phase shifters multiply one
//! mode by `e^{i phi}`, Pockels cells swap the two polarization slots of a
//! path while their drive voltage is on, and mirrors are identity maps kept
//! only for bench fidelity. Polarizers are the one lossy element: they
//! project a path onto an axis and push the removed probability into the
//! state's `norm_deficit`.
//!
//! The splitter convention is fixed once for the whole crate:
//!
//! ```text
//! x -> (x + y) / sqrt(2)          1  [ 1  -1 ]
//! y -> (-x + y) / sqrt(2)      -------[ 1   1 ]
//!                              sqrt(2)
//! ```
//!
//! in (x, y) ordering. Interferometer phases are produced by the phase
//! shifter, never by splitter reflections.

use std::sync::Arc;

use nalgebra::DMatrix;
use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::qstate::{DensityMatrix, Mode, ModeBasis, Polarization, Unitary};

/// Screen geometry for the two-path diffraction bench.
#[derive(Debug, Clone, PartialEq)]
pub struct ScreenParams {
    /// Separation between the two emitting apertures, meters.
    pub slit_separation: f64,
    /// Aperture-plane to screen distance, meters.
    pub distance: f64,
    /// Wavelength, meters.
    pub wavelength: f64,
    /// Width of the shared Gaussian envelope on the screen, meters.
    pub envelope_sigma: f64,
    /// Number of histogram bins across the screen window.
    pub bins: usize,
    /// The window spans [-half_width, half_width] around the axis, meters.
    pub half_width: f64,
}

/// Voltage windows during which a Pockels cell rotates polarization.
/// Windows must be ordered, disjoint, and have positive extent.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct PockelsSchedule {
    pub windows: Vec<(f64, f64)>,
}

impl PockelsSchedule {
    pub fn new(windows: Vec<(f64, f64)>) -> Result<Self> {
        let mut prev_off = f64::NEG_INFINITY;
        for &(on, off) in &windows {
            if !(on.is_finite() && off.is_finite()) {
                return Err(Error::Config("Pockels window bounds must be finite".into()));
            }
            if on >= off {
                return Err(Error::Config(format!(
                    "Pockels window [{on}, {off}] has non-positive extent"
                )));
            }
            if on < prev_off {
                return Err(Error::Config(format!(
                    "Pockels window starting at {on} overlaps the previous window"
                )));
            }
            prev_off = off;
        }
        Ok(PockelsSchedule { windows })
    }

    /// Whether the drive voltage is on at instant `t` (half-open windows).
    pub fn is_on(&self, t: f64) -> bool {
        self.windows.iter().any(|&(on, off)| on <= t && t < off)
    }
}

/// What a component is and where it sits. Gates (shutters, polarizers) sit
/// on the passage between two regions; everything else sits inside one.
#[derive(Debug, Clone, PartialEq)]
pub enum ComponentKind {
    /// One- or two-input splitter; `inputs` and `outputs` are path labels.
    BeamSplitter {
        region: String,
        inputs: Vec<String>,
        outputs: [String; 2],
    },
    PhaseShifter {
        region: String,
        path: String,
        phi: f64,
    },
    Mirror {
        region: String,
    },
    Polarizer {
        axis: Polarization,
        region_a: String,
        region_b: String,
    },
    PockelsCell {
        region: String,
    },
    Shutter {
        response: f64,
        region_a: String,
        region_b: String,
    },
    FiberSegment {
        region: String,
        length: f64,
    },
    Detector {
        region: String,
        path: String,
    },
    Screen {
        region: String,
        params: ScreenParams,
    },
}

/// A named component instance.
#[derive(Debug, Clone, PartialEq)]
pub struct ComponentSpec {
    pub id: String,
    pub kind: ComponentKind,
}

impl ComponentSpec {
    /// True for elements that gate a passage between two regions.
    pub fn is_gate(&self) -> bool {
        matches!(
            self.kind,
            ComponentKind::Polarizer { .. } | ComponentKind::Shutter { .. }
        )
    }

    /// The two regions a gate joins, if this is a gate.
    pub fn gate_endpoints(&self) -> Option<(&str, &str)> {
        match &self.kind {
            ComponentKind::Polarizer {
                region_a, region_b, ..
            }
            | ComponentKind::Shutter {
                region_a, region_b, ..
            } => Some((region_a, region_b)),
            _ => None,
        }
    }

    /// The region an in-region component occupies, if it is not a gate.
    pub fn region(&self) -> Option<&str> {
        match &self.kind {
            ComponentKind::BeamSplitter { region, .. }
            | ComponentKind::PhaseShifter { region, .. }
            | ComponentKind::Mirror { region }
            | ComponentKind::PockelsCell { region }
            | ComponentKind::FiberSegment { region, .. }
            | ComponentKind::Detector { region, .. }
            | ComponentKind::Screen { region, .. } => Some(region),
            ComponentKind::Polarizer { .. } | ComponentKind::Shutter { .. } => None,
        }
    }
}

const INV_SQRT2: f64 = std::f64::consts::FRAC_1_SQRT_2;

fn c(re: f64, im: f64) -> Complex64 {
    Complex64::new(re, im)
}

/// The fixed 50/50 splitter convention on two designated modes, identity on
/// the rest of the basis.
pub fn beam_splitter_unitary(
    basis: &Arc<ModeBasis>,
    x: &Mode,
    y: &Mode,
) -> Result<Unitary> {
    let xi = basis.require(x)?;
    let yi = basis.require(y)?;
    if xi == yi {
        return Err(Error::Config("splitter needs two distinct modes".into()));
    }
    let n = basis.len();
    let mut m = DMatrix::<Complex64>::identity(n, n);
    m[(xi, xi)] = c(INV_SQRT2, 0.0);
    m[(xi, yi)] = c(-INV_SQRT2, 0.0);
    m[(yi, xi)] = c(INV_SQRT2, 0.0);
    m[(yi, yi)] = c(INV_SQRT2, 0.0);
    Unitary::new(Arc::clone(basis), m)
}

/// Splitter for a packet entering on a single occupied input mode: the
/// input amplitude leaves as an equal superposition of the two output
/// modes. The remaining columns are an orthonormal completion that only
/// touches modes guaranteed to be unoccupied before the split.
pub fn beam_splitter_split(
    basis: &Arc<ModeBasis>,
    input: &Mode,
    out_x: &Mode,
    out_y: &Mode,
) -> Result<Unitary> {
    let i = basis.require(input)?;
    let ox = basis.require(out_x)?;
    let oy = basis.require(out_y)?;
    if i == ox || i == oy || ox == oy {
        return Err(Error::Config("split needs three distinct modes".into()));
    }
    let n = basis.len();
    let mut m = DMatrix::<Complex64>::identity(n, n);
    for &(r, col) in &[(i, i), (ox, ox), (oy, oy)] {
        m[(r, col)] = c(0.0, 0.0);
    }
    m[(ox, i)] = c(INV_SQRT2, 0.0);
    m[(oy, i)] = c(INV_SQRT2, 0.0);
    m[(i, ox)] = c(1.0, 0.0);
    m[(ox, oy)] = c(INV_SQRT2, 0.0);
    m[(oy, oy)] = c(-INV_SQRT2, 0.0);
    Unitary::new(Arc::clone(basis), m)
}

/// Splitter for two occupied input modes mapping onto two fresh output
/// modes: outputs = convention matrix applied to (in_x, in_y). The reverse
/// block returns the (unoccupied) output slots to the input slots so the
/// whole map stays unitary.
pub fn beam_splitter_combine(
    basis: &Arc<ModeBasis>,
    in_x: &Mode,
    in_y: &Mode,
    out_x: &Mode,
    out_y: &Mode,
) -> Result<Unitary> {
    let ix = basis.require(in_x)?;
    let iy = basis.require(in_y)?;
    let ox = basis.require(out_x)?;
    let oy = basis.require(out_y)?;
    let mut distinct = vec![ix, iy, ox, oy];
    distinct.sort_unstable();
    distinct.dedup();
    if distinct.len() != 4 {
        return Err(Error::Config("combine needs four distinct modes".into()));
    }
    let n = basis.len();
    let mut m = DMatrix::<Complex64>::identity(n, n);
    for &r in &[ix, iy, ox, oy] {
        m[(r, r)] = c(0.0, 0.0);
    }
    // Forward block: convention matrix from (ix, iy) to (ox, oy).
    m[(ox, ix)] = c(INV_SQRT2, 0.0);
    m[(ox, iy)] = c(-INV_SQRT2, 0.0);
    m[(oy, ix)] = c(INV_SQRT2, 0.0);
    m[(oy, iy)] = c(INV_SQRT2, 0.0);
    // Reverse block: adjoint of the convention, from (ox, oy) to (ix, iy).
    m[(ix, ox)] = c(INV_SQRT2, 0.0);
    m[(ix, oy)] = c(INV_SQRT2, 0.0);
    m[(iy, ox)] = c(-INV_SQRT2, 0.0);
    m[(iy, oy)] = c(INV_SQRT2, 0.0);
    Unitary::new(Arc::clone(basis), m)
}

/// Multiplies each listed mode by `e^{i phi}`.
pub fn phase_shifter_unitary(
    basis: &Arc<ModeBasis>,
    targets: &[Mode],
    phi: f64,
) -> Result<Unitary> {
    let n = basis.len();
    let mut m = DMatrix::<Complex64>::identity(n, n);
    let factor = c(phi.cos(), phi.sin());
    for t in targets {
        let i = basis.require(t)?;
        m[(i, i)] = factor;
    }
    Unitary::new(Arc::clone(basis), m)
}

/// Exchanges the amplitudes of two modes; identity elsewhere.
pub fn mode_swap_unitary(basis: &Arc<ModeBasis>, a: &Mode, b: &Mode) -> Result<Unitary> {
    let ai = basis.require(a)?;
    let bi = basis.require(b)?;
    if ai == bi {
        return Err(Error::Config("swap needs two distinct modes".into()));
    }
    let n = basis.len();
    let mut m = DMatrix::<Complex64>::identity(n, n);
    m[(ai, ai)] = c(0.0, 0.0);
    m[(bi, bi)] = c(0.0, 0.0);
    m[(ai, bi)] = c(1.0, 0.0);
    m[(bi, ai)] = c(1.0, 0.0);
    Unitary::new(Arc::clone(basis), m)
}

/// Pockels action on the two polarization slots of `path` inside `region`:
/// a half-wave swap while the voltage is on, identity otherwise.
pub fn pockels_apply(
    basis: &Arc<ModeBasis>,
    region: &str,
    path: &str,
    voltage_on: bool,
) -> Result<Unitary> {
    if !voltage_on {
        return Ok(Unitary::identity(Arc::clone(basis)));
    }
    let h = Mode::new(region, path, Polarization::H);
    let v = Mode::new(region, path, Polarization::V);
    match (basis.index_of(&h), basis.index_of(&v)) {
        (Some(_), Some(_)) => mode_swap_unitary(basis, &h, &v),
        _ => Err(Error::Config(format!(
            "Pockels cell needs both polarization modes of {region}:{path} in the basis"
        ))),
    }
}

/// Projects every mode of `path` onto the `axis` polarization. The removed
/// probability is added to the state's `norm_deficit`; cross terms with the
/// absorbed slots are zeroed exactly.
pub fn polarizer_apply(
    rho: &DensityMatrix,
    axis: Polarization,
    path: &str,
) -> DensityMatrix {
    let basis = Arc::clone(rho.basis());
    let n = basis.len();
    let blocked: Vec<usize> = (0..n)
        .filter(|&i| {
            let m = basis.mode(i);
            m.path == path && m.pol != axis
        })
        .collect();
    let mut m = rho.matrix().clone();
    let mut lost = 0.0;
    for &b in &blocked {
        lost += m[(b, b)].re;
        for k in 0..n {
            m[(b, k)] = c(0.0, 0.0);
            m[(k, b)] = c(0.0, 0.0);
        }
    }
    let deficit = rho.norm_deficit() + lost;
    DensityMatrix::new(basis, m, deficit).expect("projection preserves dimensions")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::qstate::{PureState, TOL_ALGEBRAIC};

    fn xy_basis() -> Arc<ModeBasis> {
        ModeBasis::new(vec![
            Mode::new("arm", "x", Polarization::V),
            Mode::new("arm", "y", Polarization::V),
        ])
        .unwrap()
    }

    fn hv_basis() -> Arc<ModeBasis> {
        ModeBasis::new(vec![
            Mode::new("cell", "y", Polarization::H),
            Mode::new("cell", "y", Polarization::V),
        ])
        .unwrap()
    }

    fn x_mode() -> Mode {
        Mode::new("arm", "x", Polarization::V)
    }

    fn y_mode() -> Mode {
        Mode::new("arm", "y", Polarization::V)
    }

    /// Closed-form interferometer outputs for input on x: the exit
    /// amplitudes are ((e^{i phi} - 1)/2, (e^{i phi} + 1)/2).
    fn mz_expected_px(phi: f64) -> f64 {
        ((phi.cos() - 1.0).powi(2) + phi.sin().powi(2)) / 4.0
    }

    #[test]
    fn splitter_matrix_matches_convention() {
        let basis = xy_basis();
        let u = beam_splitter_unitary(&basis, &x_mode(), &y_mode()).unwrap();
        let s = INV_SQRT2;
        assert_eq!(u.matrix()[(0, 0)], c(s, 0.0));
        assert_eq!(u.matrix()[(0, 1)], c(-s, 0.0));
        assert_eq!(u.matrix()[(1, 0)], c(s, 0.0));
        assert_eq!(u.matrix()[(1, 1)], c(s, 0.0));
    }

    #[test]
    fn splitter_balances_single_input() {
        let basis = xy_basis();
        let rho = PureState::new(basis.clone(), vec![c(1.0, 0.0), c(0.0, 0.0)])
            .unwrap()
            .to_density();
        let u = beam_splitter_unitary(&basis, &x_mode(), &y_mode()).unwrap();
        let out = rho.apply_unitary(&u).unwrap();
        assert!((out.born_probability(&x_mode()).unwrap() - 0.5).abs() < TOL_ALGEBRAIC);
        assert!((out.born_probability(&y_mode()).unwrap() - 0.5).abs() < TOL_ALGEBRAIC);
        assert!((out.entry(0, 1) - c(0.5, 0.0)).norm() < TOL_ALGEBRAIC);
    }

    /// Full interferometer: split, phase on x, recombine. Compared against
    /// the closed form on a 32-point grid.
    #[test]
    fn interferometer_matches_closed_form_on_grid() {
        let basis = xy_basis();
        let b = beam_splitter_unitary(&basis, &x_mode(), &y_mode()).unwrap();
        let input = PureState::new(basis.clone(), vec![c(1.0, 0.0), c(0.0, 0.0)])
            .unwrap()
            .to_density();
        for k in 0..32 {
            let phi = 2.0 * std::f64::consts::PI * (k as f64) / 32.0;
            let p = phase_shifter_unitary(&basis, &[x_mode()], phi).unwrap();
            let out = input
                .apply_unitary(&b)
                .unwrap()
                .apply_unitary(&p)
                .unwrap()
                .apply_unitary(&b)
                .unwrap();
            let px = out.born_probability(&x_mode()).unwrap();
            let py = out.born_probability(&y_mode()).unwrap();
            assert!(
                (px - mz_expected_px(phi)).abs() < TOL_ALGEBRAIC,
                "phi={phi}: px={px}"
            );
            assert!((px + py - 1.0).abs() < TOL_ALGEBRAIC);
        }
    }

    #[test]
    fn interferometer_dark_port_is_exactly_zero() {
        let basis = xy_basis();
        let b = beam_splitter_unitary(&basis, &x_mode(), &y_mode()).unwrap();
        let p = phase_shifter_unitary(&basis, &[x_mode()], 0.0).unwrap();
        let out = PureState::new(basis.clone(), vec![c(1.0, 0.0), c(0.0, 0.0)])
            .unwrap()
            .to_density()
            .apply_unitary(&b)
            .unwrap()
            .apply_unitary(&p)
            .unwrap()
            .apply_unitary(&b)
            .unwrap();
        assert_eq!(out.born_probability(&x_mode()).unwrap(), 0.0);
    }

    #[test]
    fn interferometer_quarter_cycle_splits_evenly() {
        // phi = pi/3 gives |e^{i phi} - 1|^2 / 4 = (2 - 2 cos(pi/3)) / 4 = 1/4.
        let phi = std::f64::consts::PI / 3.0;
        assert!((mz_expected_px(phi) - 0.25).abs() < TOL_ALGEBRAIC);
    }

    #[test]
    fn zero_phase_shifter_is_identity() {
        let basis = xy_basis();
        let u = phase_shifter_unitary(&basis, &[x_mode()], 0.0).unwrap();
        assert_eq!(u.matrix(), Unitary::identity(basis).matrix());
    }

    #[test]
    fn pockels_swaps_polarizations_when_driven() {
        let basis = hv_basis();
        let rho = PureState::new(basis.clone(), vec![c(0.0, 0.0), c(1.0, 0.0)])
            .unwrap()
            .to_density();
        let on = pockels_apply(&basis, "cell", "y", true).unwrap();
        let out = rho.apply_unitary(&on).unwrap();
        let h = Mode::new("cell", "y", Polarization::H);
        assert_eq!(out.born_probability(&h).unwrap(), 1.0);

        let off = pockels_apply(&basis, "cell", "y", false).unwrap();
        let same = rho.apply_unitary(&off).unwrap();
        assert_eq!(same.matrix(), rho.matrix());

        let twice = rho
            .apply_unitary(&on)
            .unwrap()
            .apply_unitary(&on)
            .unwrap();
        assert_eq!(twice.matrix(), rho.matrix());
    }

    #[test]
    fn polarizer_passes_matching_axis_losslessly() {
        let basis = hv_basis();
        let v = PureState::new(basis.clone(), vec![c(0.0, 0.0), c(1.0, 0.0)])
            .unwrap()
            .to_density();
        let out = polarizer_apply(&v, Polarization::V, "y");
        assert_eq!(out.matrix(), v.matrix());
        assert_eq!(out.norm_deficit(), 0.0);
    }

    #[test]
    fn polarizer_absorbs_crossed_axis_entirely() {
        let basis = hv_basis();
        let h = PureState::new(basis.clone(), vec![c(1.0, 0.0), c(0.0, 0.0)])
            .unwrap()
            .to_density();
        let out = polarizer_apply(&h, Polarization::V, "y");
        assert_eq!(out.trace(), 0.0);
        assert_eq!(out.norm_deficit(), 1.0);
    }

    #[test]
    fn polarizer_halves_diagonal_superposition() {
        let basis = hv_basis();
        let s = INV_SQRT2;
        let rho = PureState::new(basis.clone(), vec![c(s, 0.0), c(s, 0.0)])
            .unwrap()
            .to_density();
        let out = polarizer_apply(&rho, Polarization::V, "y");
        assert!((out.trace() - 0.5).abs() < TOL_ALGEBRAIC);
        assert!((out.norm_deficit() - 0.5).abs() < TOL_ALGEBRAIC);
        // Hand oracle: P rho P with P = diag(0, 1).
        assert_eq!(out.entry(0, 0), c(0.0, 0.0));
        assert_eq!(out.entry(0, 1), c(0.0, 0.0));
        assert_eq!(out.entry(1, 0), c(0.0, 0.0));
        assert!((out.entry(1, 1) - c(0.5, 0.0)).norm() < TOL_ALGEBRAIC);
        assert!(out.validate().is_ok());
    }

    #[test]
    fn polarizer_only_touches_named_path() {
        let basis = ModeBasis::new(vec![
            Mode::new("a", "x", Polarization::H),
            Mode::new("b", "y", Polarization::H),
        ])
        .unwrap();
        let s = INV_SQRT2;
        let rho = PureState::new(basis, vec![c(s, 0.0), c(s, 0.0)])
            .unwrap()
            .to_density();
        let out = polarizer_apply(&rho, Polarization::V, "y");
        // Path x keeps its H amplitude; only path y is filtered.
        assert!((out.entry(0, 0) - c(0.5, 0.0)).norm() < TOL_ALGEBRAIC);
        assert_eq!(out.entry(1, 1), c(0.0, 0.0));
        assert!((out.norm_deficit() - 0.5).abs() < TOL_ALGEBRAIC);
    }

    #[test]
    fn split_embedding_is_unitary_and_balances() {
        let basis = ModeBasis::new(vec![
            Mode::new("src", "in", Polarization::V),
            Mode::new("xa", "x", Polarization::V),
            Mode::new("yf", "y", Polarization::V),
        ])
        .unwrap();
        let input = Mode::new("src", "in", Polarization::V);
        let ox = Mode::new("xa", "x", Polarization::V);
        let oy = Mode::new("yf", "y", Polarization::V);
        let u = beam_splitter_split(&basis, &input, &ox, &oy).unwrap();
        let rho = PureState::new(basis, vec![c(1.0, 0.0), c(0.0, 0.0), c(0.0, 0.0)])
            .unwrap()
            .to_density();
        let out = rho.apply_unitary(&u).unwrap();
        assert!((out.born_probability(&ox).unwrap() - 0.5).abs() < TOL_ALGEBRAIC);
        assert!((out.born_probability(&oy).unwrap() - 0.5).abs() < TOL_ALGEBRAIC);
        assert_eq!(out.born_probability(&input).unwrap(), 0.0);
    }

    #[test]
    fn combine_embedding_applies_convention() {
        let basis = ModeBasis::new(vec![
            Mode::new("xb", "x", Polarization::V),
            Mode::new("yf", "y", Polarization::V),
            Mode::new("out", "x", Polarization::V),
            Mode::new("out", "y", Polarization::V),
        ])
        .unwrap();
        let ix = Mode::new("xb", "x", Polarization::V);
        let iy = Mode::new("yf", "y", Polarization::V);
        let ox = Mode::new("out", "x", Polarization::V);
        let oy = Mode::new("out", "y", Polarization::V);
        let u = beam_splitter_combine(&basis, &ix, &iy, &ox, &oy).unwrap();

        // Pure y input exits as (-x + y)/sqrt(2) at the output slots.
        let rho = PureState::new(
            basis.clone(),
            vec![c(0.0, 0.0), c(1.0, 0.0), c(0.0, 0.0), c(0.0, 0.0)],
        )
        .unwrap()
        .to_density();
        let out = rho.apply_unitary(&u).unwrap();
        assert!((out.born_probability(&ox).unwrap() - 0.5).abs() < TOL_ALGEBRAIC);
        assert!((out.born_probability(&oy).unwrap() - 0.5).abs() < TOL_ALGEBRAIC);
        assert!((out.entry(2, 3) - c(-0.5, 0.0)).norm() < TOL_ALGEBRAIC);

        // A dephased 50/50 mixture over the inputs exits as a 50/50 mixture
        // over the outputs with no coherence.
        let mut m = DMatrix::<Complex64>::zeros(4, 4);
        m[(0, 0)] = c(0.5, 0.0);
        m[(1, 1)] = c(0.5, 0.0);
        let mixed = DensityMatrix::new(basis, m, 0.0).unwrap();
        let out = mixed.apply_unitary(&u).unwrap();
        assert!((out.born_probability(&ox).unwrap() - 0.5).abs() < TOL_ALGEBRAIC);
        assert!((out.born_probability(&oy).unwrap() - 0.5).abs() < TOL_ALGEBRAIC);
        assert!(out.entry(2, 3).norm() < TOL_ALGEBRAIC);
    }

    #[test]
    fn pockels_schedule_rejects_overlap_and_inversion() {
        assert!(PockelsSchedule::new(vec![(0.0, 1.0), (2.0, 3.0)]).is_ok());
        assert!(PockelsSchedule::new(vec![(1.0, 1.0)]).is_err());
        assert!(PockelsSchedule::new(vec![(0.0, 2.0), (1.0, 3.0)]).is_err());
        let sched = PockelsSchedule::new(vec![(1.0, 2.0)]).unwrap();
        assert!(sched.is_on(1.0));
        assert!(sched.is_on(1.5));
        assert!(!sched.is_on(2.0));
        assert!(!sched.is_on(0.5));
    }
}
