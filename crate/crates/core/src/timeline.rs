//! Discrete event scheduling, timing validation, and the evolution engine.
//!
//! [`schedule`] turns a scene into a sorted event list: one emission, one
//! traversal per component per route (timed by the fiber lengths before
//! it), every shutter transition and voltage edge, and a final detection.
//! [`validate_timing`] checks that no packet is in contact with a moving
//! shutter and that no packet reaches a closed one. [`run`] evolves the
//! initial state through the events under a collapse policy and returns
//! the final density matrix together with the topology snapshots taken at
//! each transition.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use num_complex::Complex64;

use crate::collapse::{apply_policy, CollapsePolicy};
use crate::error::{Error, Result, TimingViolation};
use crate::optics::{
    beam_splitter_combine, beam_splitter_split, mode_swap_unitary, phase_shifter_unitary,
    pockels_apply, polarizer_apply, ComponentKind, PockelsSchedule,
};
use crate::qstate::{DensityMatrix, Mode, ModeBasis, Polarization, PureState, Unitary};
use crate::scenedsl::{walk_route, RouteStep, SceneDoc, ShutterAction};
use crate::topology::RegionGraph;

/// Default single-photon packet duration, 1 ns.
pub const DEFAULT_PACKET_DURATION: f64 = 1e-9;
/// Default propagation speed: vacuum light speed in m/s.
pub const DEFAULT_SPEED: f64 = 2.997_924_58e8;

/// What happens at one instant of the bench clock.
#[derive(Debug, Clone, PartialEq)]
pub enum EventKind {
    /// The source releases the packet.
    Emit,
    ShutterClose { shutter: String },
    ShutterOpen { shutter: String },
    VoltageOn { pockels: String },
    VoltageOff { pockels: String },
    /// The packet on `path` reaches component `component`; `seq` is its
    /// position in the route, and the packet occupies
    /// `[packet_lead, packet_trail]` around the arrival instant.
    Traverse {
        component: String,
        path: String,
        seq: usize,
        packet_lead: f64,
        packet_trail: f64,
    },
    /// Detectors latch; the run is over.
    Detect,
}

impl EventKind {
    /// Tie-break rank for events sharing a timestamp. Shutters finish
    /// closing before they reopen, control edges settle before packets
    /// move, and detection is always last.
    fn rank(&self) -> u8 {
        match self {
            EventKind::Emit => 0,
            EventKind::ShutterClose { .. } => 1,
            EventKind::ShutterOpen { .. } => 2,
            EventKind::VoltageOn { .. } => 3,
            EventKind::VoltageOff { .. } => 4,
            EventKind::Traverse { .. } => 5,
            EventKind::Detect => 6,
        }
    }

    /// Final tie-break. Traversals order by route position so components
    /// at the same fiber offset still act in route order.
    fn tiebreak(&self) -> (&str, usize) {
        match self {
            EventKind::Emit | EventKind::Detect => ("", 0),
            EventKind::ShutterClose { shutter } | EventKind::ShutterOpen { shutter } => {
                (shutter, 0)
            }
            EventKind::VoltageOn { pockels } | EventKind::VoltageOff { pockels } => (pockels, 0),
            EventKind::Traverse { path, seq, .. } => (path, *seq),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Event {
    pub time: f64,
    pub kind: EventKind,
}

/// The sorted event list of one run, plus the physical constants needed
/// to interpret it.
#[derive(Debug, Clone, PartialEq)]
pub struct Timeline {
    events: Vec<Event>,
    propagation_speed: f64,
    packet_duration: f64,
    shutter_response: BTreeMap<String, f64>,
}

impl Timeline {
    /// Assembles a timeline from raw parts, sorting the events. Intended
    /// for tests and tools; production timelines come from [`schedule`].
    pub fn from_parts(
        mut events: Vec<Event>,
        propagation_speed: f64,
        packet_duration: f64,
        shutter_response: BTreeMap<String, f64>,
    ) -> Self {
        sort_events(&mut events);
        Timeline {
            events,
            propagation_speed,
            packet_duration,
            shutter_response,
        }
    }

    pub fn events(&self) -> &[Event] {
        &self.events
    }

    pub fn propagation_speed(&self) -> f64 {
        self.propagation_speed
    }

    pub fn packet_duration(&self) -> f64 {
        self.packet_duration
    }

    pub fn shutter_response(&self, shutter: &str) -> Option<f64> {
        self.shutter_response.get(shutter).copied()
    }

    /// The instant the detectors latch.
    pub fn detect_time(&self) -> f64 {
        self.events
            .iter()
            .rev()
            .find(|e| e.kind == EventKind::Detect)
            .map(|e| e.time)
            .unwrap_or(0.0)
    }
}

fn sort_events(events: &mut [Event]) {
    events.sort_by(|a, b| {
        a.time
            .total_cmp(&b.time)
            .then_with(|| a.kind.rank().cmp(&b.kind.rank()))
            .then_with(|| a.kind.tiebreak().cmp(&b.kind.tiebreak()))
    });
}

/// Minimum fiber length between two shutters of the given response time
/// for a contact-free close/open cycle: the distance light covers while
/// one transition completes.
///
/// The product is computed on the operands' decimal forms so that inputs
/// written as short decimals give the decimally-exact answer: a 1e-6 s
/// response at 10 m/s yields exactly 1e-5 m, where naive binary
/// multiplication is one ulp short.
pub fn min_separation(response_time: f64, speed: f64) -> Result<f64> {
    for (label, v) in [("response time", response_time), ("speed", speed)] {
        if !v.is_finite() || v <= 0.0 {
            return Err(Error::Config(format!(
                "{label} must be positive and finite, got {v}"
            )));
        }
    }
    let (m1, e1) = decimal_parts(response_time);
    let (m2, e2) = decimal_parts(speed);
    let literal = format!("{}e{}", m1 * m2, e1 + e2);
    Ok(literal.parse::<f64>().expect("product of finite decimals"))
}

/// Splits the shortest round-trip decimal form of a positive float into
/// significant digits and a power of ten. Each factor has at most 17
/// significant digits, so products of two mantissas fit in u128.
fn decimal_parts(v: f64) -> (u128, i32) {
    let s = format!("{v}");
    let (digits, mut exp) = match s.split_once('.') {
        Some((int, frac)) => (format!("{int}{frac}"), -(frac.len() as i32)),
        None => (s, 0),
    };
    let mut digits = digits.trim_start_matches('0').to_string();
    while digits.ends_with('0') && digits.len() > 1 {
        digits.pop();
        exp += 1;
    }
    (digits.parse::<u128>().expect("digits of a finite float"), exp)
}

/// True for positive non-NaN values; NaN fails the comparison and is
/// rejected with everything else.
fn is_positive(v: f64) -> bool {
    v > 0.0
}

/// Builds the sorted event list for a scene.
///
/// Arrival times are `emit + (fiber length before the component) / speed`.
/// Fails on non-positive geometry, discontinuous routes, and schedule
/// entries referencing unknown hardware.
pub fn schedule(scene: &SceneDoc) -> Result<Timeline> {
    let invalid = |msg: String| Error::InvalidScene(vec![msg]);
    if !is_positive(scene.speed) || !scene.speed.is_finite() {
        return Err(invalid(format!(
            "propagation speed must be positive, got {}",
            scene.speed
        )));
    }
    if !is_positive(scene.packet_duration) || !scene.packet_duration.is_finite() {
        return Err(invalid(format!(
            "packet duration must be positive, got {}",
            scene.packet_duration
        )));
    }

    let mut shutter_response = BTreeMap::new();
    for c in &scene.components {
        match &c.kind {
            ComponentKind::Shutter { response, .. } => {
                if !is_positive(*response) {
                    return Err(invalid(format!(
                        "shutter `{}` response must be positive, got {response}",
                        c.id
                    )));
                }
                shutter_response.insert(c.id.clone(), *response);
            }
            ComponentKind::FiberSegment { length, .. } if !is_positive(*length) => {
                return Err(invalid(format!(
                    "segment `{}` length must be positive, got {length}",
                    c.id
                )));
            }
            _ => {}
        }
    }

    let emit = scene.source.emit_time;
    let mut events = vec![Event {
        time: emit,
        kind: EventKind::Emit,
    }];
    let mut latest = emit;

    for route in &scene.routes {
        let steps = walk_route(scene, route).map_err(invalid)?;
        for (seq, step) in steps.iter().enumerate() {
            let arrival = emit + step.offset_m / scene.speed;
            let half = scene.packet_duration / 2.0;
            events.push(Event {
                time: arrival,
                kind: EventKind::Traverse {
                    component: step.component_id.clone(),
                    path: route.path.clone(),
                    seq,
                    packet_lead: arrival - half,
                    packet_trail: arrival + half,
                },
            });
            latest = latest.max(arrival);
        }
    }

    for e in &scene.shutter_events {
        if !shutter_response.contains_key(&e.shutter) {
            return Err(invalid(format!(
                "schedule references unknown shutter `{}`",
                e.shutter
            )));
        }
        let kind = match e.action {
            ShutterAction::Close => EventKind::ShutterClose {
                shutter: e.shutter.clone(),
            },
            ShutterAction::Open => EventKind::ShutterOpen {
                shutter: e.shutter.clone(),
            },
        };
        events.push(Event { time: e.time, kind });
        latest = latest.max(e.time);
    }

    for w in &scene.windows {
        match scene.component(&w.pockels).map(|c| &c.kind) {
            Some(ComponentKind::PockelsCell { .. }) => {}
            _ => {
                return Err(invalid(format!(
                    "window references unknown Pockels cell `{}`",
                    w.pockels
                )))
            }
        }
        events.push(Event {
            time: w.on,
            kind: EventKind::VoltageOn {
                pockels: w.pockels.clone(),
            },
        });
        events.push(Event {
            time: w.off,
            kind: EventKind::VoltageOff {
                pockels: w.pockels.clone(),
            },
        });
        latest = latest.max(w.off);
    }

    events.push(Event {
        time: latest + scene.packet_duration,
        kind: EventKind::Detect,
    });
    sort_events(&mut events);
    Ok(Timeline {
        events,
        propagation_speed: scene.speed,
        packet_duration: scene.packet_duration,
        shutter_response,
    })
}

/// Checks that every packet clears every shutter.
///
/// A `Contact` violation means a packet window `[lead, trail]` overlaps a
/// transition window `transition ± response/2` at the same shutter (both
/// intervals closed). An `Ordering` violation means a packet's leading
/// edge arrives while the shutter is in its closed interval
/// `[close, open)`.
pub fn validate_timing(timeline: &Timeline) -> Result<()> {
    let mut transitions: BTreeMap<&str, Vec<(f64, bool)>> = BTreeMap::new();
    for e in &timeline.events {
        match &e.kind {
            EventKind::ShutterClose { shutter } => {
                transitions.entry(shutter).or_default().push((e.time, true));
            }
            EventKind::ShutterOpen { shutter } => {
                transitions.entry(shutter).or_default().push((e.time, false));
            }
            _ => {}
        }
    }

    let mut violations = Vec::new();
    for e in &timeline.events {
        let EventKind::Traverse {
            component,
            packet_lead,
            packet_trail,
            ..
        } = &e.kind
        else {
            continue;
        };
        let Some(response) = timeline.shutter_response.get(component) else {
            continue;
        };
        let shutter_events = transitions.get(component.as_str());

        for &(t, _) in shutter_events.into_iter().flatten() {
            let lo = t - response / 2.0;
            let hi = t + response / 2.0;
            if *packet_lead <= hi && lo <= *packet_trail {
                violations.push(TimingViolation::Contact {
                    shutter: component.clone(),
                    transition_time: t,
                    packet_lead: *packet_lead,
                    packet_trail: *packet_trail,
                });
            }
        }

        // Closed from each close (inclusive) to the next open (exclusive).
        let mut closed_at = None;
        for &(t, is_close) in shutter_events.into_iter().flatten() {
            if t > *packet_lead {
                break;
            }
            closed_at = if is_close { Some(t) } else { None };
        }
        if let Some(t) = closed_at {
            violations.push(TimingViolation::Ordering {
                shutter: component.clone(),
                packet_lead: *packet_lead,
                closed_at: t,
            });
        }
    }

    if violations.is_empty() {
        Ok(())
    } else {
        Err(Error::Timing(violations))
    }
}

/// What one traversal does to the state, in application order.
enum TraverseOp {
    Apply(Unitary),
    Polarize { axis: Polarization, path: String },
    /// Re-evaluate the collapse policy against the current graph. Emitted
    /// after polarization rotations, which change which modes the
    /// conditional passages can separate.
    Collapse,
}

/// Mode layout and operator plan compiled from a scene.
struct Compiled {
    basis: Arc<ModeBasis>,
    initial: PureState,
    ops: BTreeMap<String, BTreeMap<String, Vec<TraverseOp>>>,
}

impl Compiled {
    fn ops_for(&self, component: &str, path: &str) -> Option<&[TraverseOp]> {
        self.ops
            .get(component)
            .and_then(|m| m.get(path))
            .map(Vec::as_slice)
    }
}

/// Result of one evolution: the final state, its basis, and the topology
/// snapshot taken at the start plus after every shutter transition.
#[derive(Debug, Clone)]
pub struct Evolution {
    pub final_state: DensityMatrix,
    pub basis: Arc<ModeBasis>,
    pub graphs: Vec<RegionGraph>,
}

/// Per-route bookkeeping produced by the discovery pass.
struct Trace {
    path: String,
    steps: Vec<RouteStep>,
    /// Polarization set of the packet after each step.
    pols: Vec<BTreeSet<Polarization>>,
    /// Polarization set the path starts with.
    start_pols: BTreeSet<Polarization>,
    /// Step index whose crossing is absorbed by the creating splitter.
    landing_step: Option<usize>,
}

fn compile(scene: &SceneDoc) -> Result<Compiled> {
    let invalid = |msg: String| Error::InvalidScene(vec![msg]);

    let mut source_pols: BTreeMap<&str, BTreeSet<Polarization>> = BTreeMap::new();
    for t in &scene.source.terms {
        source_pols.entry(&t.path).or_default().insert(t.pol);
    }

    let windowed: BTreeSet<&str> = scene.windows.iter().map(|w| w.pockels.as_str()).collect();
    let mut pockels_windows: BTreeMap<&str, Vec<(f64, f64)>> = BTreeMap::new();
    for w in &scene.windows {
        pockels_windows
            .entry(&w.pockels)
            .or_default()
            .push((w.on, w.off));
    }
    let mut pockels_schedule: BTreeMap<&str, PockelsSchedule> = BTreeMap::new();
    for (id, windows) in pockels_windows {
        pockels_schedule.insert(id, PockelsSchedule::new(windows)?);
    }

    let mut modes: BTreeSet<Mode> = scene
        .source
        .terms
        .iter()
        .map(|t| Mode::new(&t.region, &t.path, t.pol))
        .collect();

    // Discovery pass: walk every route, tracking the packet's possible
    // polarizations, recording every mode it can occupy, and noting where
    // splitter-created paths land.
    let mut traces: Vec<Trace> = Vec::new();
    for route in &scene.routes {
        let steps = walk_route(scene, route).map_err(&invalid)?;
        let first = scene.component(&route.component_ids[0]).expect("walked");
        let created = matches!(
            &first.kind,
            ComponentKind::BeamSplitter { outputs, .. } if outputs.contains(&route.path)
        );
        let start_pols: BTreeSet<Polarization> = if created {
            let ComponentKind::BeamSplitter { inputs, .. } = &first.kind else {
                unreachable!()
            };
            let mut pols = BTreeSet::new();
            for input in inputs {
                match source_pols.get(input.as_str()) {
                    Some(p) => pols.extend(p.iter().copied()),
                    None => {
                        return Err(invalid(format!(
                            "splitter `{}` input path `{input}` has no source term; cascaded splitters are unsupported",
                            first.id
                        )))
                    }
                }
            }
            pols
        } else {
            source_pols
                .get(route.path.as_str())
                .cloned()
                .ok_or_else(|| {
                    invalid(format!(
                        "path `{}` has neither a source term nor a creating splitter",
                        route.path
                    ))
                })?
        };

        let mut pols = start_pols.clone();
        let mut pending_landing = created;
        let mut landing_step = None;
        let mut pols_after = Vec::with_capacity(steps.len());
        for (i, step) in steps.iter().enumerate() {
            let comp = scene.component(&step.component_id).expect("walked");
            match &comp.kind {
                ComponentKind::Polarizer { axis, .. } => {
                    pols.retain(|p| p == axis);
                    if pols.is_empty() {
                        return Err(invalid(format!(
                            "polarizer `{}` blocks every polarization on path `{}`",
                            comp.id, route.path
                        )));
                    }
                }
                ComponentKind::PockelsCell { .. } if windowed.contains(step.component_id.as_str()) => {
                    pols.insert(Polarization::H);
                    pols.insert(Polarization::V);
                }
                _ => {}
            }
            if step.crossing.is_some() {
                if pending_landing {
                    landing_step = Some(i);
                    pending_landing = false;
                }
                for &pol in &pols {
                    modes.insert(Mode::new(&step.region, &route.path, pol));
                }
            } else if i == 0 && created {
                // Still waiting for the first crossing.
            } else {
                for &pol in &pols {
                    modes.insert(Mode::new(&step.region, &route.path, pol));
                }
            }
            pols_after.push(pols.clone());
        }
        if pending_landing {
            // The path never leaves the splitter's region.
            for &pol in &pols {
                modes.insert(Mode::new(&steps[0].region, &route.path, pol));
            }
        }
        traces.push(Trace {
            path: route.path.clone(),
            steps,
            pols: pols_after,
            start_pols,
            landing_step,
        });
    }

    let basis = ModeBasis::new(modes.into_iter().collect())?;

    // Initial state from the source terms.
    let mut amps = vec![Complex64::new(0.0, 0.0); basis.len()];
    for t in &scene.source.terms {
        let idx = basis.require(&Mode::new(&t.region, &t.path, t.pol))?;
        amps[idx] = t.amp;
    }
    let initial = PureState::new(Arc::clone(&basis), amps)?;

    // Where does each path's amplitude sit right after its creating
    // splitter fires, and with which polarizations?
    let mut landing_region: BTreeMap<&str, &str> = BTreeMap::new();
    for trace in &traces {
        let region = match trace.landing_step {
            Some(i) => trace.steps[i].region.as_str(),
            None => trace.steps[0].region.as_str(),
        };
        landing_region.insert(&trace.path, region);
    }

    // Traversal records of beam splitters, keyed by component, with the
    // packet's pre-crossing region and polarization set per path.
    struct SplitterVisit<'a> {
        path: &'a str,
        arrival_m: f64,
        prev_region: Option<&'a str>,
        pols: &'a BTreeSet<Polarization>,
        is_creator: bool,
    }
    let mut splitter_visits: BTreeMap<&str, Vec<SplitterVisit<'_>>> = BTreeMap::new();
    for trace in &traces {
        for (i, step) in trace.steps.iter().enumerate() {
            let comp = scene.component(&step.component_id).expect("walked");
            let ComponentKind::BeamSplitter { outputs, inputs, .. } = &comp.kind else {
                continue;
            };
            let is_creator = i == 0 && outputs.contains(&trace.path);
            if !is_creator && !inputs.contains(&trace.path) {
                return Err(invalid(format!(
                    "path `{}` traverses splitter `{}` but is neither input nor output",
                    trace.path, comp.id
                )));
            }
            splitter_visits.entry(&comp.id).or_default().push(SplitterVisit {
                path: &trace.path,
                arrival_m: step.offset_m,
                prev_region: step.crossing.as_ref().map(|(from, _)| from.as_str()),
                pols: if is_creator {
                    &trace.start_pols
                } else {
                    &trace.pols[i]
                },
                is_creator,
            });
        }
    }

    let mut ops: BTreeMap<String, BTreeMap<String, Vec<TraverseOp>>> = BTreeMap::new();
    let mut push_ops = |component: &str, path: &str, new_ops: Vec<TraverseOp>| -> Result<()> {
        if new_ops.is_empty() {
            return Ok(());
        }
        let slot = ops
            .entry(component.to_string())
            .or_default()
            .entry(path.to_string())
            .or_default();
        if !slot.is_empty() {
            return Err(Error::InvalidScene(vec![format!(
                "component `{component}` is traversed more than once on path `{path}`"
            )]));
        }
        *slot = new_ops;
        Ok(())
    };

    // Splitter ops: attached to the first traversal in event order, which
    // is the earliest arrival with the path name breaking ties.
    for (id, visits) in &splitter_visits {
        let comp = scene.component(id).expect("walked");
        let ComponentKind::BeamSplitter {
            region,
            inputs,
            outputs,
        } = &comp.kind
        else {
            unreachable!()
        };
        let first = visits
            .iter()
            .min_by(|a, b| a.arrival_m.total_cmp(&b.arrival_m).then(a.path.cmp(b.path)))
            .expect("non-empty visits");
        let mut splitter_ops = Vec::new();

        if visits.iter().any(|v| v.is_creator) {
            // Creating splitter, one occupied input mode.
            let input_path = &inputs[0];
            let input_pols = source_pols.get(input_path.as_str()).ok_or_else(|| {
                invalid(format!("splitter `{id}` input path `{input_path}` has no source term"))
            })?;
            let input_region = scene
                .source
                .terms
                .iter()
                .find(|t| &t.path == input_path)
                .map(|t| t.region.as_str())
                .unwrap_or(region);
            let land = |path: &str| -> &str {
                landing_region.get(path).copied().unwrap_or(region.as_str())
            };
            for &pol in input_pols {
                splitter_ops.push(TraverseOp::Apply(beam_splitter_split(
                    &basis,
                    &Mode::new(input_region, input_path, pol),
                    &Mode::new(land(&outputs[0]), &outputs[0], pol),
                    &Mode::new(land(&outputs[1]), &outputs[1], pol),
                )?));
            }
        } else {
            // Combiner: both input paths arrive on their own routes.
            let find = |path: &str| visits.iter().find(|v| v.path == path);
            let (vx, vy) = match (find(&inputs[0]), inputs.get(1).and_then(|p| find(p))) {
                (Some(vx), Some(vy)) => (vx, vy),
                _ => {
                    return Err(invalid(format!(
                        "splitter `{id}` needs every input path routed through it"
                    )))
                }
            };
            let missing_prev = |path: &str| {
                invalid(format!(
                    "splitter `{id}` input path `{path}` is already in region `{region}` when it arrives"
                ))
            };
            let px = vx.prev_region.ok_or_else(|| missing_prev(vx.path))?;
            let py = vy.prev_region.ok_or_else(|| missing_prev(vy.path))?;
            for &pol in vx.pols.union(vy.pols) {
                let has_x = vx.pols.contains(&pol);
                let has_y = vy.pols.contains(&pol);
                let op = if has_x && has_y {
                    beam_splitter_combine(
                        &basis,
                        &Mode::new(px, vx.path, pol),
                        &Mode::new(py, vy.path, pol),
                        &Mode::new(region, &outputs[0], pol),
                        &Mode::new(region, &outputs[1], pol),
                    )?
                } else if has_x {
                    mode_swap_unitary(
                        &basis,
                        &Mode::new(px, vx.path, pol),
                        &Mode::new(region, vx.path, pol),
                    )?
                } else {
                    mode_swap_unitary(
                        &basis,
                        &Mode::new(py, vy.path, pol),
                        &Mode::new(region, vy.path, pol),
                    )?
                };
                splitter_ops.push(TraverseOp::Apply(op));
            }
        }
        push_ops(id, first.path, splitter_ops)?;
    }

    // Everything else, in route order.
    for trace in &traces {
        for (i, step) in trace.steps.iter().enumerate() {
            let comp = scene.component(&step.component_id).expect("walked");
            if matches!(comp.kind, ComponentKind::BeamSplitter { .. }) {
                continue;
            }
            let pols = &trace.pols[i];
            let mut step_ops = Vec::new();

            // Crossing transport, unless the creating splitter already
            // landed the amplitude here.
            if let Some((from, to)) = &step.crossing {
                if trace.landing_step != Some(i) {
                    match &comp.kind {
                        ComponentKind::Polarizer { axis, .. } => {
                            step_ops.push(TraverseOp::Polarize {
                                axis: *axis,
                                path: trace.path.clone(),
                            });
                            for &pol in pols {
                                step_ops.push(TraverseOp::Apply(mode_swap_unitary(
                                    &basis,
                                    &Mode::new(from, &trace.path, pol),
                                    &Mode::new(to, &trace.path, pol),
                                )?));
                            }
                        }
                        _ => {
                            // Move every polarization that existed before
                            // this step; a windowed Pockels cell may have
                            // widened `pols` beyond what can be in flight.
                            let before: &BTreeSet<Polarization> = if i == 0 {
                                &trace.start_pols
                            } else {
                                &trace.pols[i - 1]
                            };
                            for &pol in before {
                                step_ops.push(TraverseOp::Apply(mode_swap_unitary(
                                    &basis,
                                    &Mode::new(from, &trace.path, pol),
                                    &Mode::new(to, &trace.path, pol),
                                )?));
                            }
                        }
                    }
                } else if matches!(comp.kind, ComponentKind::Polarizer { .. }) {
                    step_ops.push(TraverseOp::Polarize {
                        axis: match comp.kind {
                            ComponentKind::Polarizer { axis, .. } => axis,
                            _ => unreachable!(),
                        },
                        path: trace.path.clone(),
                    });
                }
            }

            match &comp.kind {
                ComponentKind::PhaseShifter { region, path, phi } => {
                    if path == &trace.path {
                        let targets: Vec<Mode> = pols
                            .iter()
                            .map(|&pol| Mode::new(region, path, pol))
                            .collect();
                        step_ops.push(TraverseOp::Apply(phase_shifter_unitary(
                            &basis, &targets, *phi,
                        )?));
                    }
                }
                ComponentKind::PockelsCell { region } => {
                    let on = pockels_schedule
                        .get(step.component_id.as_str())
                        .is_some_and(|s| {
                            s.is_on(scene.source.emit_time + step.offset_m / scene.speed)
                        });
                    if on {
                        step_ops.push(TraverseOp::Apply(pockels_apply(
                            &basis,
                            region,
                            &trace.path,
                            true,
                        )?));
                        step_ops.push(TraverseOp::Collapse);
                    }
                }
                _ => {}
            }

            push_ops(&step.component_id, &trace.path, step_ops)?;
        }
    }

    Ok(Compiled {
        basis,
        initial,
        ops,
    })
}

/// Evolves the scene's initial state through the timeline under `policy`.
///
/// Shutter transitions update the region graph and hand the state to the
/// collapse policy; traversals apply the optics compiled from the routes.
/// Identical inputs produce bit-identical output.
pub fn run(
    timeline: &Timeline,
    scene: &SceneDoc,
    policy: CollapsePolicy,
) -> Result<Evolution> {
    validate_timing(timeline)?;
    let compiled = compile(scene)?;

    let mut closed: BTreeSet<String> = BTreeSet::new();
    let mut graph = scene.graph(&closed)?;
    let mut graphs = vec![graph.clone()];
    let mut state = compiled.initial.to_density();

    for event in timeline.events() {
        match &event.kind {
            EventKind::Emit
            | EventKind::VoltageOn { .. }
            | EventKind::VoltageOff { .. }
            | EventKind::Detect => {}
            EventKind::ShutterClose { shutter } => {
                closed.insert(shutter.clone());
                graph = scene.graph(&closed)?;
                state = apply_policy(&state, policy, &graph)?;
                graphs.push(graph.clone());
            }
            EventKind::ShutterOpen { shutter } => {
                closed.remove(shutter);
                graph = scene.graph(&closed)?;
                state = apply_policy(&state, policy, &graph)?;
                graphs.push(graph.clone());
            }
            EventKind::Traverse {
                component, path, ..
            } => {
                let Some(step_ops) = compiled.ops_for(component, path) else {
                    continue;
                };
                for op in step_ops {
                    state = match op {
                        TraverseOp::Apply(u) => state.apply_unitary(u)?,
                        TraverseOp::Polarize { axis, path } => {
                            polarizer_apply(&state, *axis, path)
                        }
                        TraverseOp::Collapse => apply_policy(&state, policy, &graph)?,
                    };
                }
            }
        }
    }

    Ok(Evolution {
        final_state: state,
        basis: compiled.basis,
        graphs,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenedsl::parse;
    use approx::assert_relative_eq;

    fn mz_scene(phi: f64) -> SceneDoc {
        let text = format!(
            "\
scene mz speed=1 packet=0.001
region src
region xf
region yf
region out
beamsplitter bs1 at=src in=in out=x:y
phase ps at=xf path=x phi={phi}
segment sx at=xf length=1
segment sy at=yf length=1
beamsplitter bs2 at=out in=x:y out=x:y
detector x at=out path=x
detector y at=out path=y
source pulse emit=0 amp=src:in:V:1
route x via=bs1,ps,sx,bs2
route y via=bs1,sy,bs2
"
        );
        parse(&text).unwrap()
    }

    fn gated_interferometer(close: f64, open: f64) -> SceneDoc {
        let text = format!(
            "\
scene gated speed=2.99792458e8 packet=1e-9
region src
region xa
region xm
region xb
region yf
region out
beamsplitter bs1 at=src in=in out=x:y
phase ps at=xa path=x phi=0
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
close sa at={close}
open sa at={open}
close sb at={close}
open sb at={open}
"
        );
        parse(&text).unwrap()
    }

    fn diag(ev: &Evolution, region: &str, path: &str) -> f64 {
        let idx = ev
            .basis
            .require(&Mode::new(region, path, Polarization::V))
            .unwrap();
        ev.final_state.entry(idx, idx).re
    }

    #[test]
    fn min_separation_uses_decimal_arithmetic() {
        assert_eq!(min_separation(1e-6, 2.99792458e8).unwrap(), 299.792458);
        assert_eq!(min_separation(1e-6, 3e8).unwrap(), 300.0);
        assert_eq!(min_separation(0.5e-6, 3e8).unwrap(), 150.0);
        // The motivating case: binary multiplication is one ulp short.
        assert_ne!(1e-6 * 10.0, 1e-5);
        assert_eq!(min_separation(1e-6, 10.0).unwrap(), 1e-5);
    }

    #[test]
    fn min_separation_rejects_degenerate_inputs() {
        assert!(min_separation(0.0, 1.0).is_err());
        assert!(min_separation(1.0, -2.0).is_err());
        assert!(min_separation(f64::NAN, 1.0).is_err());
        assert!(min_separation(1.0, f64::INFINITY).is_err());
    }

    #[test]
    fn consecutive_arrivals_match_segment_lengths() {
        let text = "\
scene chain speed=2.99792458e8 packet=1e-9
region a
segment s1 at=a length=299.792458
segment s2 at=a length=299.792458
segment s3 at=a length=299.792458
detector d at=a path=p
source pulse emit=0 amp=a:p:V:1
route p via=s1,s2,s3,d
";
        let scene = parse(text).unwrap();
        let tl = schedule(&scene).unwrap();
        let arrivals: Vec<f64> = tl
            .events()
            .iter()
            .filter_map(|e| match &e.kind {
                EventKind::Traverse { .. } => Some(e.time),
                _ => None,
            })
            .collect();
        assert_eq!(arrivals.len(), 4);
        for pair in arrivals.windows(2) {
            let delta = pair[1] - pair[0];
            assert!(
                (delta - 1e-6).abs() <= 1e-15 * 1e-6_f64.max(delta),
                "delta {delta}"
            );
        }
    }

    #[test]
    fn events_sort_by_time_rank_and_route_position() {
        let scene = gated_interferometer(1.334e-6, 1.668e-6);
        let tl = schedule(&scene).unwrap();
        let times: Vec<f64> = tl.events().iter().map(|e| e.time).collect();
        assert!(times.windows(2).all(|w| w[0] <= w[1]));
        assert!(matches!(tl.events()[0].kind, EventKind::Emit));
        assert!(matches!(
            tl.events().last().unwrap().kind,
            EventKind::Detect
        ));
        // Route order is preserved among same-time traversals: the
        // creating splitter acts before the zero-offset phase shifter.
        let zero_time: Vec<&str> = tl
            .events()
            .iter()
            .filter_map(|e| match &e.kind {
                EventKind::Traverse {
                    component, path, ..
                } if e.time == 0.0 && path == "x" => Some(component.as_str()),
                _ => None,
            })
            .collect();
        assert_eq!(zero_time, vec!["bs1", "ps", "seg_xa"]);
        // Close sorts before open at the same instant.
        let tie = Timeline::from_parts(
            vec![
                Event {
                    time: 1.0,
                    kind: EventKind::ShutterOpen {
                        shutter: "s".into(),
                    },
                },
                Event {
                    time: 1.0,
                    kind: EventKind::ShutterClose {
                        shutter: "s".into(),
                    },
                },
            ],
            1.0,
            1.0,
            BTreeMap::new(),
        );
        assert!(matches!(
            tie.events()[0].kind,
            EventKind::ShutterClose { .. }
        ));
    }

    #[test]
    fn detect_time_trails_the_last_event() {
        let scene = gated_interferometer(1.334e-6, 1.668e-6);
        let tl = schedule(&scene).unwrap();
        let last_arrival = 800.0 / 2.99792458e8;
        assert_relative_eq!(
            tl.detect_time(),
            last_arrival + 1e-9,
            max_relative = 1e-12
        );
    }

    #[test]
    fn contact_violation_is_reported() {
        // Shutter transition exactly when the packet crosses it.
        let t_sa = 100.0 / 2.99792458e8;
        let scene = gated_interferometer(t_sa, 1.668e-6);
        let tl = schedule(&scene).unwrap();
        let err = validate_timing(&tl).unwrap_err();
        let Error::Timing(violations) = err else {
            panic!("expected timing violations");
        };
        assert!(violations.iter().any(|v| matches!(
            v,
            TimingViolation::Contact { shutter, .. } if shutter == "sa"
        )));
    }

    #[test]
    fn ordering_violation_is_reported() {
        // Shutters close before the packet ever reaches the first one and
        // reopen long after it would have passed the second.
        let scene = gated_interferometer(1e-7, 5e-6);
        let tl = schedule(&scene).unwrap();
        let err = validate_timing(&tl).unwrap_err();
        let Error::Timing(violations) = err else {
            panic!("expected timing violations");
        };
        assert!(violations.iter().any(|v| matches!(
            v,
            TimingViolation::Ordering { shutter, .. } if shutter == "sa"
        )));
    }

    #[test]
    fn run_rejects_timing_violations() {
        let scene = gated_interferometer(1e-7, 5e-6);
        let tl = schedule(&scene).unwrap();
        assert!(matches!(
            run(&tl, &scene, CollapsePolicy::PoV1),
            Err(Error::Timing(_))
        ));
    }

    #[test]
    fn balanced_interferometer_matches_closed_form() {
        for phi in [
            0.0,
            std::f64::consts::FRAC_PI_3,
            std::f64::consts::FRAC_PI_2,
            std::f64::consts::PI,
            4.2,
        ] {
            let scene = mz_scene(phi);
            let tl = schedule(&scene).unwrap();
            let ev = run(&tl, &scene, CollapsePolicy::PoV1).unwrap();
            // One output takes |e^{i phi} - 1|^2 / 4, the other
            // |e^{i phi} + 1|^2 / 4.
            let px = (phi / 2.0).sin().powi(2);
            let py = (phi / 2.0).cos().powi(2);
            assert_relative_eq!(diag(&ev, "out", "x"), px, epsilon = 1e-12);
            assert_relative_eq!(diag(&ev, "out", "y"), py, epsilon = 1e-12);
            assert_relative_eq!(ev.final_state.trace(), 1.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn gated_run_under_unitary_policy_matches_ungated_run() {
        let gated = gated_interferometer(1.334e-6, 1.668e-6);
        let mut ungated = gated.clone();
        ungated.shutter_events.clear();

        let ev_gated = run(&schedule(&gated).unwrap(), &gated, CollapsePolicy::PoV1).unwrap();
        let ev_plain = run(
            &schedule(&ungated).unwrap(),
            &ungated,
            CollapsePolicy::PoV1,
        )
        .unwrap();
        assert_eq!(ev_gated.final_state.matrix(), ev_plain.final_state.matrix());
        // Balanced arms, zero phase: everything exits the y port.
        assert_relative_eq!(diag(&ev_gated, "out", "y"), 1.0, epsilon = 1e-12);
        assert!(diag(&ev_gated, "out", "x").abs() < 1e-12);
    }

    #[test]
    fn trapping_the_packet_between_shutters_erases_interference() {
        let scene = gated_interferometer(1.334e-6, 1.668e-6);
        let tl = schedule(&scene).unwrap();
        for policy in [CollapsePolicy::PoV2Strong, CollapsePolicy::PoV2Weak] {
            let ev = run(&tl, &scene, policy).unwrap();
            assert_relative_eq!(diag(&ev, "out", "x"), 0.5, epsilon = 1e-12);
            assert_relative_eq!(diag(&ev, "out", "y"), 0.5, epsilon = 1e-12);
        }
        // Initial graph + one snapshot per transition.
        let ev = run(&tl, &scene, CollapsePolicy::PoV2Strong).unwrap();
        assert_eq!(ev.graphs.len(), 5);
    }

    #[test]
    fn runs_are_deterministic() {
        let scene = gated_interferometer(1.334e-6, 1.668e-6);
        let tl = schedule(&scene).unwrap();
        let a = run(&tl, &scene, CollapsePolicy::PoV2Strong).unwrap();
        let b = run(&tl, &scene, CollapsePolicy::PoV2Strong).unwrap();
        assert_eq!(a.final_state.matrix(), b.final_state.matrix());
        assert_eq!(a.graphs, b.graphs);
    }

    #[test]
    fn windowed_rotation_swaps_polarization_modes() {
        let text = "\
scene rot speed=1 packet=0.001
region a
region b
segment s1 at=a length=1
pockels pc at=b
segment s2 at=b length=1
detector d at=b path=p
source pulse emit=0 amp=a:p:V:1
route p via=s1,pc,s2,d
window pc on=0.9 off=1.1
";
        let scene = parse(text).unwrap();
        let tl = schedule(&scene).unwrap();
        let ev = run(&tl, &scene, CollapsePolicy::PoV1).unwrap();
        let h = ev
            .basis
            .require(&Mode::new("b", "p", Polarization::H))
            .unwrap();
        assert_relative_eq!(ev.final_state.entry(h, h).re, 1.0, epsilon = 1e-12);

        // Voltage off at arrival: no rotation, and no H mode in the basis.
        let quiet = text.replace("window pc on=0.9 off=1.1", "window pc on=3 off=4");
        let scene = parse(&quiet).unwrap();
        let tl = schedule(&scene).unwrap();
        let ev = run(&tl, &scene, CollapsePolicy::PoV1).unwrap();
        let v = ev
            .basis
            .require(&Mode::new("b", "p", Polarization::V))
            .unwrap();
        assert_relative_eq!(ev.final_state.entry(v, v).re, 1.0, epsilon = 1e-12);
    }

    #[test]
    fn static_scene_keeps_its_initial_state() {
        let text = "\
scene boxes speed=1 packet=1e-3
region box1
region box2
shutter gate response=1e-6 between=box1:box2
detector d1 at=box1 path=left
detector d2 at=box2 path=right
source pulse emit=0 amp=box1:left:V:0.6 amp=box2:right:V:0:0.8
close gate at=1e-3
open gate at=2e-3
";
        let scene = parse(text).unwrap();
        let tl = schedule(&scene).unwrap();

        let unitary = run(&tl, &scene, CollapsePolicy::PoV1).unwrap();
        let m = unitary.final_state.matrix();
        assert_eq!(m[(0, 0)].re, 0.6 * 0.6);
        assert_eq!(m[(1, 1)].re, 0.8 * 0.8);
        assert_relative_eq!(m[(0, 1)].norm(), 0.48, epsilon = 1e-12);

        let collapsed = run(&tl, &scene, CollapsePolicy::PoV2Strong).unwrap();
        let m = collapsed.final_state.matrix();
        assert_eq!(m[(0, 0)].re, 0.6 * 0.6);
        assert_eq!(m[(1, 1)].re, 0.8 * 0.8);
        assert_eq!(m[(0, 1)], Complex64::new(0.0, 0.0));
        assert_eq!(m[(1, 0)], Complex64::new(0.0, 0.0));
    }

    #[test]
    fn schedule_rejects_degenerate_geometry() {
        let text = "\
scene bad speed=1 packet=1e-3
region a
segment s at=a length=0
detector d at=a path=p
source pulse emit=0 amp=a:p:V:1
route p via=s,d
";
        let scene = parse(text).unwrap();
        assert!(matches!(schedule(&scene), Err(Error::InvalidScene(_))));
    }
}
