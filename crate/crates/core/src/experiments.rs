//! Preset benches and their closed-form predictions.
//!
//! Five ready-made scenes cover the interesting regimes:
//!
//! * `fig1`: two boxes sharing one shutter, holding a packet split across
//!   them. Closing the shutter is the minimal coherence-versus-mixture
//!   bench.
//! * `fig2`: two cavities joined through a crossed pair of polarizers.
//!   Nothing moves; the scene exists to exercise connectivity
//!   classification (the cavities are weakly disconnected).
//! * `fig3`: a fiber double slit. One fiber carries two shutters that
//!   trap the packet between them mid-flight; both fibers end on a
//!   position-resolving screen.
//! * `fig4`: a balanced two-arm interferometer whose upper arm carries
//!   two shutters, closed and reopened while the packet is between them.
//! * `fig5`: a balanced two-arm interferometer whose lower arm hides the
//!   packet as horizontal polarization inside a polarizer-bounded span
//!   while two Pockels cells fire. No shutter ever closes, so the two
//!   collapse variants disagree.
//!
//! The analytic functions in this module are written directly from the
//! closed-form expressions and never touch the engine; tests hold the
//! engine to them.

use std::str::FromStr;

use num_complex::Complex64;

use crate::collapse::CollapsePolicy;
use crate::error::{Error, Result};
use crate::optics::ScreenParams;
use crate::qstate::{DensityMatrix, Mode, Polarization, TOL_ALGEBRAIC};
use crate::scenedsl::{self, SceneDoc};
use crate::timeline::{DEFAULT_PACKET_DURATION, DEFAULT_SPEED};

/// The five built-in scenes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Preset {
    Fig1,
    Fig2,
    Fig3,
    Fig4,
    Fig5,
}

impl Preset {
    pub const ALL: [Preset; 5] = [
        Preset::Fig1,
        Preset::Fig2,
        Preset::Fig3,
        Preset::Fig4,
        Preset::Fig5,
    ];

    pub fn label(self) -> &'static str {
        match self {
            Preset::Fig1 => "fig1",
            Preset::Fig2 => "fig2",
            Preset::Fig3 => "fig3",
            Preset::Fig4 => "fig4",
            Preset::Fig5 => "fig5",
        }
    }
}

impl std::fmt::Display for Preset {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for Preset {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "fig1" => Ok(Preset::Fig1),
            "fig2" => Ok(Preset::Fig2),
            "fig3" => Ok(Preset::Fig3),
            "fig4" => Ok(Preset::Fig4),
            "fig5" => Ok(Preset::Fig5),
            other => Err(format!(
                "unknown preset `{other}` (expected fig1, fig2, fig3, fig4, or fig5)"
            )),
        }
    }
}

/// Tunable knobs of the preset builders. `phi` drives the interferometer
/// phase shifter (fig4, fig5); `alpha` and `beta` are the two box
/// amplitudes of fig1 and must satisfy |alpha|^2 + |beta|^2 = 1.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PresetParams {
    pub phi: f64,
    pub alpha: Complex64,
    pub beta: Complex64,
}

impl Default for PresetParams {
    fn default() -> Self {
        let inv_sqrt2 = std::f64::consts::FRAC_1_SQRT_2;
        PresetParams {
            phi: 0.0,
            alpha: Complex64::new(inv_sqrt2, 0.0),
            beta: Complex64::new(inv_sqrt2, 0.0),
        }
    }
}

/// Screen geometry shared by the fiber double slit: 1 mm slit spacing,
/// 1.5 m to the screen, 633 nm light, a near-flat 25 mm envelope, and a
/// 64-bin window of +-2.5 mm (about 5 fringes).
pub fn double_slit_screen() -> ScreenParams {
    ScreenParams {
        slit_separation: 1e-3,
        distance: 1.5,
        wavelength: 6.33e-7,
        envelope_sigma: 0.025,
        bins: 64,
        half_width: 2.5e-3,
    }
}

/// Builds one of the preset scenes. The result always passes
/// [`scenedsl::validate`] with an empty report.
pub fn build(preset: Preset, params: &PresetParams) -> Result<SceneDoc> {
    let text = match preset {
        Preset::Fig1 => fig1_text(params)?,
        Preset::Fig2 => fig2_text(),
        Preset::Fig3 => fig3_text(),
        Preset::Fig4 => fig4_text(params.phi),
        Preset::Fig5 => fig5_text(params.phi),
    };
    scenedsl::parse(&text)
}

fn amp_term(region: &str, path: &str, amp: Complex64) -> String {
    if amp.im == 0.0 {
        format!("amp={region}:{path}:V:{}", amp.re)
    } else {
        format!("amp={region}:{path}:V:{}:{}", amp.re, amp.im)
    }
}

fn fig1_text(params: &PresetParams) -> Result<String> {
    let norm = params.alpha.norm_sqr() + params.beta.norm_sqr();
    if (norm - 1.0).abs() > TOL_ALGEBRAIC {
        return Err(Error::Config(format!(
            "box amplitudes have squared norm {norm}, expected 1"
        )));
    }
    Ok(format!(
        "\
scene fig1 speed={DEFAULT_SPEED} packet={DEFAULT_PACKET_DURATION}
region box1
region box2
shutter gate response=1e-6 between=box1:box2
detector left at=box1 path=left
detector right at=box2 path=right
source pulse emit=0 {} {}
close gate at=1e-6
open gate at=2e-6
",
        amp_term("box1", "left", params.alpha),
        amp_term("box2", "right", params.beta),
    ))
}

fn fig2_text() -> String {
    format!(
        "\
scene fig2 speed={DEFAULT_SPEED} packet={DEFAULT_PACKET_DURATION}
region cav1
region mid
region cav2
rotator cav1
rotator cav2
polarizer pl axis=V between=cav1:mid
polarizer pr axis=H between=mid:cav2
detector probe at=cav1 path=beam
source pulse emit=0 amp=cav1:beam:V:1
"
    )
}

/// Shared shutter timing for fig3 and fig4: the pair closes when the
/// packet is at the spatial midpoint of the 600 m inter-shutter fiber and
/// reopens a sixth of the fiber later, leaving every 1 us transition well
/// clear of both packet passages.
fn trap_schedule(sh_a: &str, sh_b: &str) -> String {
    let close = 400.0 / DEFAULT_SPEED;
    let open = 500.0 / DEFAULT_SPEED;
    format!(
        "close {sh_a} at={close}\nopen {sh_a} at={open}\nclose {sh_b} at={close}\nopen {sh_b} at={open}\n"
    )
}

fn fig3_text() -> String {
    let s = double_slit_screen();
    format!(
        "\
scene fig3 speed={DEFAULT_SPEED} packet={DEFAULT_PACKET_DURATION}
region src
region f1a
region f1m
region f1b
region f2
region scr
beamsplitter slit at=src in=in out=s1:s2
segment f1_in at=f1a length=100
shutter shA response=1e-6 between=f1a:f1m
segment f1_mid at=f1m length=600
shutter shB response=1e-6 between=f1m:f1b
segment f1_out at=f1b length=100
segment f2_full at=f2 length=800
screen det at=scr d={} dist={} lambda={} sigma={} bins={} halfwidth={}
source pulse emit=0 amp=src:in:V:1
route s1 via=slit,f1_in,shA,f1_mid,shB,f1_out,det
route s2 via=slit,f2_full,det
{}",
        s.slit_separation,
        s.distance,
        s.wavelength,
        s.envelope_sigma,
        s.bins,
        s.half_width,
        trap_schedule("shA", "shB"),
    )
}

fn fig4_text(phi: f64) -> String {
    format!(
        "\
scene fig4 speed={DEFAULT_SPEED} packet={DEFAULT_PACKET_DURATION}
region src
region xa
region xm
region xb
region yf
region out
beamsplitter bs1 at=src in=in out=x:y
phase ps at=xa path=x phi={phi}
segment seg_xa at=xa length=100
shutter sa response=1e-6 between=xa:xm
segment seg_xm at=xm length=600
shutter sb response=1e-6 between=xm:xb
segment seg_xb at=xb length=100
mirror m1 at=xb
segment seg_y at=yf length=800
mirror m2 at=yf
beamsplitter bs2 at=out in=x:y out=x:y
detector x at=out path=x
detector y at=out path=y
source pulse emit=0 amp=src:in:V:1
route x via=bs1,ps,seg_xa,sa,seg_xm,sb,seg_xb,m1,bs2
route y via=bs1,seg_y,m2,bs2
{}",
        trap_schedule("sa", "sb"),
    )
}

fn fig5_text(phi: f64) -> String {
    // The packet reaches the Pockels cells 350 m and 650 m into the lower
    // arm; each 10 ns voltage window brackets the 1 ns packet while it is
    // strictly inside the polarizer-bounded span (50 m to 950 m).
    let t1 = 350.0 / DEFAULT_SPEED;
    let t2 = 650.0 / DEFAULT_SPEED;
    let half = 5e-9;
    format!(
        "\
scene fig5 speed={DEFAULT_SPEED} packet={DEFAULT_PACKET_DURATION}
region src
region xf
region ya
region ybox
region yb
region out
beamsplitter bs1 at=src in=in out=x:y
phase ps at=xf path=x phi={phi}
segment seg_x at=xf length=1000
mirror m1 at=xf
segment seg_y0 at=ya length=50
polarizer p1 axis=V between=ya:ybox
segment seg_y1 at=ybox length=300
pockels pc1 at=ybox
segment seg_y2 at=ybox length=300
pockels pc2 at=ybox
segment seg_y3 at=ybox length=300
polarizer p2 axis=V between=ybox:yb
segment seg_y4 at=yb length=50
beamsplitter bs2 at=out in=x:y out=x:y
detector x at=out path=x
detector y at=out path=y
source pulse emit=0 amp=src:in:V:1
route x via=bs1,ps,seg_x,m1,bs2
route y via=bs1,seg_y0,p1,seg_y1,pc1,seg_y2,pc2,seg_y3,p2,seg_y4,bs2
window pc1 on={} off={}
window pc2 on={} off={}
",
        t1 - half,
        t1 + half,
        t2 - half,
        t2 + half,
    )
}

/// Detection probabilities at the two interferometer ports.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PortSplit {
    pub x: f64,
    pub y: f64,
}

/// Coherent recombination after a relative phase `phi`: the x port takes
/// |e^{i phi} - 1|^2 / 4 = sin^2(phi/2), the y port the complement.
pub fn interferometer_ports(phi: f64) -> PortSplit {
    let half = phi / 2.0;
    PortSplit {
        x: half.sin().powi(2),
        y: half.cos().powi(2),
    }
}

/// Port probabilities for the shutter-gated interferometer (fig4). Under
/// plain unitary evolution the trap is invisible; either collapse variant
/// turns the state into an equal mixture, sending half to each port.
pub fn gated_ports(phi: f64, policy: CollapsePolicy) -> PortSplit {
    match policy {
        CollapsePolicy::PoV1 => interferometer_ports(phi),
        CollapsePolicy::PoV2Strong | CollapsePolicy::PoV2Weak => PortSplit { x: 0.5, y: 0.5 },
    }
}

/// Port probabilities for the polarization-steered interferometer
/// (fig5). No shutter ever closes, so the strong variant never fires and
/// matches unitary evolution; the weak variant collapses when the packet
/// is hidden as horizontal polarization and loses all interference.
pub fn steered_ports(phi: f64, policy: CollapsePolicy) -> PortSplit {
    match policy {
        CollapsePolicy::PoV1 | CollapsePolicy::PoV2Strong => interferometer_ports(phi),
        CollapsePolicy::PoV2Weak => PortSplit { x: 0.5, y: 0.5 },
    }
}

/// Gaussian envelope common to both slit amplitudes, normalized so that
/// the integral of its square over the real line is 1.
pub fn screen_envelope(r: f64, params: &ScreenParams) -> f64 {
    let sigma2 = params.envelope_sigma * params.envelope_sigma;
    (-r * r / (4.0 * sigma2)).exp() / (2.0 * std::f64::consts::PI * sigma2).powf(0.25)
}

/// Amplitudes reaching screen position `r` from the two slits at
/// +-d/2: the shared envelope times the propagation phase over the exact
/// slant length.
pub fn slit_amplitudes(r: f64, params: &ScreenParams) -> (Complex64, Complex64) {
    let envelope = screen_envelope(r, params);
    let length = |offset: f64| -> f64 {
        let dr = r - offset;
        (params.distance * params.distance + dr * dr).sqrt()
    };
    let phase = |len: f64| -> Complex64 {
        let arg = 2.0 * std::f64::consts::PI * len / params.wavelength;
        Complex64::new(arg.cos(), arg.sin())
    };
    let half = params.slit_separation / 2.0;
    (
        envelope * phase(length(half)),
        envelope * phase(length(-half)),
    )
}

/// Screen density at `r` for slit populations `p1`, `p2` and mutual
/// coherence `coh` (the off-diagonal element between the slit modes):
/// p1 |A1|^2 + p2 |A2|^2 + 2 Re(coh A1 A2*).
pub fn screen_density(r: f64, params: &ScreenParams, p1: f64, p2: f64, coh: Complex64) -> f64 {
    let (a1, a2) = slit_amplitudes(r, params);
    let direct = p1 * a1.norm_sqr() + p2 * a2.norm_sqr();
    let cross = 2.0 * (coh * a1 * a2.conj()).re;
    (direct + cross).max(0.0)
}

/// Per-bin probability masses over the screen window, normalized to sum
/// to 1. Each bin is integrated with Simpson's rule on its own span.
pub fn bin_masses(params: &ScreenParams, p1: f64, p2: f64, coh: Complex64) -> Vec<f64> {
    let n = params.bins;
    let width = 2.0 * params.half_width / n as f64;
    let mut masses = Vec::with_capacity(n);
    for i in 0..n {
        let a = -params.half_width + i as f64 * width;
        let b = a + width;
        let m = 0.5 * (a + b);
        let simpson = (width / 6.0)
            * (screen_density(a, params, p1, p2, coh)
                + 4.0 * screen_density(m, params, p1, p2, coh)
                + screen_density(b, params, p1, p2, coh));
        masses.push(simpson);
    }
    let total: f64 = masses.iter().sum();
    if total > 0.0 {
        for m in &mut masses {
            *m /= total;
        }
    }
    masses
}

/// The two screen modes of a double-slit scene: the modes whose region
/// hosts the screen component, ordered by path name.
pub fn screen_modes(scene: &SceneDoc) -> Result<(Mode, Mode)> {
    let screen_region = scene
        .components
        .iter()
        .find_map(|c| match &c.kind {
            crate::optics::ComponentKind::Screen { region, .. } => Some(region.clone()),
            _ => None,
        })
        .ok_or_else(|| Error::Config("scene has no screen".into()))?;
    let mut paths: Vec<&str> = scene
        .routes
        .iter()
        .map(|r| r.path.as_str())
        .collect();
    paths.sort();
    if paths.len() != 2 {
        return Err(Error::Config(format!(
            "screen scenes need exactly two routes, found {}",
            paths.len()
        )));
    }
    Ok((
        Mode::new(&screen_region, paths[0], Polarization::V),
        Mode::new(&screen_region, paths[1], Polarization::V),
    ))
}

/// Bin masses predicted by a final state: populations and coherence are
/// read off the two screen modes.
pub fn bin_masses_from_state(
    rho: &DensityMatrix,
    scene: &SceneDoc,
    params: &ScreenParams,
) -> Result<Vec<f64>> {
    let (m1, m2) = screen_modes(scene)?;
    let i = rho.basis().require(&m1)?;
    let j = rho.basis().require(&m2)?;
    let p1 = rho.entry(i, i).re;
    let p2 = rho.entry(j, j).re;
    let coh = rho.entry(i, j);
    Ok(bin_masses(params, p1, p2, coh))
}

/// First-order fringe spacing prediction lambda * D / d.
pub fn fringe_spacing_prediction(params: &ScreenParams) -> f64 {
    params.wavelength * params.distance / params.slit_separation
}

/// Measures the fringe spacing of the fully coherent pattern by peak
/// finding on a dense grid: mean distance between adjacent local maxima.
pub fn fringe_spacing(params: &ScreenParams) -> Result<f64> {
    const SAMPLES: usize = 16385;
    let coh = Complex64::new(0.5, 0.0);
    let step = 2.0 * params.half_width / (SAMPLES - 1) as f64;
    let values: Vec<f64> = (0..SAMPLES)
        .map(|i| {
            let r = -params.half_width + i as f64 * step;
            screen_density(r, params, 0.5, 0.5, coh)
        })
        .collect();
    let mut peaks = Vec::new();
    for i in 1..SAMPLES - 1 {
        if values[i] > values[i - 1] && values[i] > values[i + 1] {
            peaks.push(-params.half_width + i as f64 * step);
        }
    }
    if peaks.len() < 2 {
        return Err(Error::Config(
            "fewer than two fringe peaks in the screen window".into(),
        ));
    }
    let spacing = (peaks.last().unwrap() - peaks.first().unwrap()) / (peaks.len() - 1) as f64;
    Ok(spacing)
}

/// Interference visibility of a non-negative series:
/// (max - min) / (max + min). Errors when the series is empty or
/// identically zero, where the ratio is undefined.
pub fn visibility(series: &[f64]) -> Result<f64> {
    let mut max = f64::NEG_INFINITY;
    let mut min = f64::INFINITY;
    for &v in series {
        if !v.is_finite() || v < 0.0 {
            return Err(Error::Config(format!(
                "visibility needs finite non-negative values, got {v}"
            )));
        }
        max = max.max(v);
        min = min.min(v);
    }
    if series.is_empty() || max == 0.0 {
        return Err(Error::UndefinedVisibility);
    }
    Ok((max - min) / (max + min))
}
