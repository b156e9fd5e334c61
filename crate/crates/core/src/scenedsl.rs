//! The `.scene` bench-description language.
//!
//! A scene file is line-oriented: one declaration per line in the form
//! `keyword name key=value ...`, with `#` starting a comment and blank
//! lines ignored. Declarations may appear in any order. All units are SI
//! (meters, seconds, radians) and floats accept exponent literals.
//!
//! ```text
//! scene mz speed=2.99792458e8 packet=1e-9
//! region src
//! beamsplitter bs1 at=src in=in out=x:y
//! segment seg_x at=xf length=1000
//! shutter sa response=1e-6 between=xa:xm
//! source pulse emit=0 amp=src:in:V:1
//! route x via=bs1,seg_x,bs2
//! close sa at=1.3e-6
//! open sa at=1.6e-6
//! window pc1 on=1.16e-6 off=1.18e-6
//! ```
//!
//! [`parse`] collects every error it can find (each with line and column)
//! instead of stopping at the first; [`serialize`] emits a canonical
//! ordering such that parse and serialize are mutually inverse on valid
//! documents; [`validate`] cross-checks references, geometry, and schedule
//! sanity, and raises feasibility warnings for shutter spacing.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::str::FromStr;

use num_complex::Complex64;

use crate::error::{Error, ParseError, Result};
use crate::optics::{ComponentKind, ComponentSpec, ScreenParams};
use crate::qstate::Polarization;

/// An explicitly declared always-open passage between two regions.
#[derive(Debug, Clone, PartialEq)]
pub struct PassageDecl {
    pub id: String,
    pub region_a: String,
    pub region_b: String,
}

/// One amplitude term of the initial state.
#[derive(Debug, Clone, PartialEq)]
pub struct AmpTerm {
    pub region: String,
    pub path: String,
    pub pol: Polarization,
    pub amp: Complex64,
}

/// The single photon source: emission time plus the initial superposition.
#[derive(Debug, Clone, PartialEq)]
pub struct SourceSpec {
    pub id: String,
    pub emit_time: f64,
    pub terms: Vec<AmpTerm>,
}

/// Ordered component traversal list for one path.
#[derive(Debug, Clone, PartialEq)]
pub struct Route {
    pub path: String,
    pub component_ids: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum ShutterAction {
    Close,
    Open,
}

/// One scheduled shutter transition.
#[derive(Debug, Clone, PartialEq)]
pub struct ShutterEventDecl {
    pub shutter: String,
    pub action: ShutterAction,
    pub time: f64,
}

/// One voltage window for a Pockels cell.
#[derive(Debug, Clone, PartialEq)]
pub struct WindowDecl {
    pub pockels: String,
    pub on: f64,
    pub off: f64,
}

/// A parsed scene. Construction sorts every list into canonical order, so
/// structurally equal scenes compare equal and serialization is stable.
#[derive(Debug, Clone, PartialEq)]
pub struct SceneDoc {
    pub name: String,
    pub speed: f64,
    pub packet_duration: f64,
    pub regions: Vec<String>,
    pub rotators: Vec<String>,
    pub passages: Vec<PassageDecl>,
    pub components: Vec<ComponentSpec>,
    pub source: SourceSpec,
    pub routes: Vec<Route>,
    pub shutter_events: Vec<ShutterEventDecl>,
    pub windows: Vec<WindowDecl>,
}

impl SceneDoc {
    /// Normalizes ordering. Does not cross-check references; that is
    /// [`validate`]'s job.
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        name: String,
        speed: f64,
        packet_duration: f64,
        mut regions: Vec<String>,
        mut rotators: Vec<String>,
        mut passages: Vec<PassageDecl>,
        mut components: Vec<ComponentSpec>,
        mut source: SourceSpec,
        mut routes: Vec<Route>,
        mut shutter_events: Vec<ShutterEventDecl>,
        mut windows: Vec<WindowDecl>,
    ) -> Self {
        regions.sort();
        rotators.sort();
        passages.sort_by(|a, b| a.id.cmp(&b.id));
        components.sort_by(|a, b| a.id.cmp(&b.id));
        source.terms.sort_by(|a, b| {
            (&a.region, &a.path, a.pol).cmp(&(&b.region, &b.path, b.pol))
        });
        routes.sort_by(|a, b| a.path.cmp(&b.path));
        shutter_events.sort_by(|a, b| {
            a.time
                .total_cmp(&b.time)
                .then(a.action.cmp(&b.action))
                .then(a.shutter.cmp(&b.shutter))
        });
        windows.sort_by(|a, b| a.pockels.cmp(&b.pockels).then(a.on.total_cmp(&b.on)));
        SceneDoc {
            name,
            speed,
            packet_duration,
            regions,
            rotators,
            passages,
            components,
            source,
            routes,
            shutter_events,
            windows,
        }
    }

    pub fn component(&self, id: &str) -> Option<&ComponentSpec> {
        self.components.iter().find(|c| c.id == id)
    }

    /// The shutter transitions of one shutter in time order.
    pub fn shutter_schedule(&self, shutter: &str) -> Vec<&ShutterEventDecl> {
        self.shutter_events
            .iter()
            .filter(|e| e.shutter == shutter)
            .collect()
    }

    /// Region-graph snapshot with the given shutters closed.
    ///
    /// Edges come from declared passages (always open), polarizers
    /// (polarization-conditional), shutters (open or closed per
    /// `closed_shutters`), and any route crossing not already covered by
    /// one of those (an implicit open fiber joint). Rotator regions are
    /// the declared ones plus every region hosting a Pockels cell.
    pub fn graph(
        &self,
        closed_shutters: &BTreeSet<String>,
    ) -> Result<crate::topology::RegionGraph> {
        use crate::topology::{PassCondition, PassageEdge};

        let mut edges: Vec<PassageEdge> = Vec::new();
        let mut covered: BTreeSet<(String, String)> = BTreeSet::new();
        let key = |a: &str, b: &str| {
            if a <= b {
                (a.to_string(), b.to_string())
            } else {
                (b.to_string(), a.to_string())
            }
        };

        for p in &self.passages {
            covered.insert(key(&p.region_a, &p.region_b));
            edges.push(PassageEdge {
                a: p.region_a.clone(),
                b: p.region_b.clone(),
                condition: PassCondition::Open,
            });
        }
        let mut rotators: BTreeSet<String> = self.rotators.iter().cloned().collect();
        for c in &self.components {
            match &c.kind {
                ComponentKind::Shutter {
                    region_a, region_b, ..
                } => {
                    covered.insert(key(region_a, region_b));
                    edges.push(PassageEdge {
                        a: region_a.clone(),
                        b: region_b.clone(),
                        condition: if closed_shutters.contains(&c.id) {
                            PassCondition::Closed
                        } else {
                            PassCondition::Open
                        },
                    });
                }
                ComponentKind::Polarizer {
                    axis,
                    region_a,
                    region_b,
                } => {
                    covered.insert(key(region_a, region_b));
                    edges.push(PassageEdge {
                        a: region_a.clone(),
                        b: region_b.clone(),
                        condition: PassCondition::PolarizedOnly(*axis),
                    });
                }
                ComponentKind::PockelsCell { region } => {
                    rotators.insert(region.clone());
                }
                _ => {}
            }
        }

        for route in &self.routes {
            let steps = walk_route(self, route).map_err(|e| Error::InvalidScene(vec![e]))?;
            for step in steps {
                if let Some((from, to)) = step.crossing {
                    let k = key(&from, &to);
                    if covered.insert(k) {
                        edges.push(PassageEdge {
                            a: from,
                            b: to,
                            condition: PassCondition::Open,
                        });
                    }
                }
            }
        }

        crate::topology::RegionGraph::new(self.regions.iter().cloned(), edges, rotators)
    }
}

fn is_ident(s: &str) -> bool {
    !s.is_empty() && s.bytes().all(|b| b.is_ascii_alphanumeric() || b == b'_')
}

/// One whitespace-separated token with its 1-based byte column.
struct Token<'a> {
    text: &'a str,
    col: usize,
}

fn tokenize(line: &str) -> Vec<Token<'_>> {
    let mut out = Vec::new();
    let mut start = None;
    for (i, ch) in line.char_indices() {
        if ch.is_whitespace() {
            if let Some(s) = start.take() {
                out.push(Token {
                    text: &line[s..i],
                    col: s + 1,
                });
            }
        } else if start.is_none() {
            start = Some(i);
        }
    }
    if let Some(s) = start {
        out.push(Token {
            text: &line[s..],
            col: s + 1,
        });
    }
    out
}

/// Accumulates declarations plus the line each appeared on, so resolution
/// errors can cite their source.
#[derive(Default)]
struct Builder {
    name: Option<(String, f64, f64)>,
    scene_line: usize,
    regions: Vec<String>,
    rotators: Vec<String>,
    passages: Vec<PassageDecl>,
    components: Vec<ComponentSpec>,
    source: Option<SourceSpec>,
    routes: Vec<Route>,
    shutter_events: Vec<ShutterEventDecl>,
    windows: Vec<WindowDecl>,
    ids: BTreeMap<String, usize>,
    region_lines: BTreeMap<String, usize>,
    route_paths: BTreeMap<String, usize>,
    errors: Vec<ParseError>,
}

impl Builder {
    fn err(&mut self, line: usize, col: usize, message: impl Into<String>) {
        self.errors.push(ParseError {
            line,
            column: col,
            message: message.into(),
        });
    }

    /// Registers `id` in the shared component/passage/source namespace.
    fn claim_id(&mut self, id: &str, line: usize, col: usize) -> bool {
        if !is_ident(id) {
            self.err(line, col, format!("invalid identifier `{id}`"));
            return false;
        }
        if let Some(prev) = self.ids.get(id) {
            self.err(
                line,
                col,
                format!("duplicate identifier `{id}` (first declared on line {prev})"),
            );
            return false;
        }
        self.ids.insert(id.to_string(), line);
        true
    }
}

/// Declared keys of one line, with duplicate and unknown-key detection.
struct KeyValues<'a> {
    seen: BTreeMap<&'a str, (&'a str, usize)>,
}

impl<'a> KeyValues<'a> {
    fn collect(
        tokens: &[Token<'a>],
        line: usize,
        allowed: &[&str],
        errors: &mut Vec<ParseError>,
    ) -> Self {
        let mut seen: BTreeMap<&str, (&str, usize)> = BTreeMap::new();
        for t in tokens {
            match t.text.split_once('=') {
                Some((key, value)) => {
                    if !allowed.contains(&key) {
                        errors.push(ParseError {
                            line,
                            column: t.col,
                            message: format!("unknown key `{key}`"),
                        });
                    } else if seen.insert(key, (value, t.col)).is_some() {
                        errors.push(ParseError {
                            line,
                            column: t.col,
                            message: format!("duplicate key `{key}`"),
                        });
                    }
                }
                None => errors.push(ParseError {
                    line,
                    column: t.col,
                    message: format!("expected key=value, found `{}`", t.text),
                }),
            }
        }
        KeyValues { seen }
    }

    fn get(
        &self,
        key: &str,
        line: usize,
        keyword_col: usize,
        errors: &mut Vec<ParseError>,
    ) -> Option<(&'a str, usize)> {
        match self.seen.get(key) {
            Some(v) => Some(*v),
            None => {
                errors.push(ParseError {
                    line,
                    column: keyword_col,
                    message: format!("missing required key `{key}`"),
                });
                None
            }
        }
    }

}

fn parse_f64(s: &str, line: usize, col: usize, errors: &mut Vec<ParseError>) -> Option<f64> {
    match f64::from_str(s) {
        Ok(v) if v.is_finite() => Some(v),
        _ => {
            errors.push(ParseError {
                line,
                column: col,
                message: format!("expected a finite number, found `{s}`"),
            });
            None
        }
    }
}

fn parse_usize(s: &str, line: usize, col: usize, errors: &mut Vec<ParseError>) -> Option<usize> {
    match usize::from_str(s) {
        Ok(v) => Some(v),
        Err(_) => {
            errors.push(ParseError {
                line,
                column: col,
                message: format!("expected an integer, found `{s}`"),
            });
            None
        }
    }
}

fn parse_pair<'a>(
    s: &'a str,
    line: usize,
    col: usize,
    errors: &mut Vec<ParseError>,
) -> Option<(&'a str, &'a str)> {
    match s.split_once(':') {
        Some((a, b)) if is_ident(a) && is_ident(b) => Some((a, b)),
        _ => {
            errors.push(ParseError {
                line,
                column: col,
                message: format!("expected `name:name`, found `{s}`"),
            });
            None
        }
    }
}

/// Parses scene text, collecting every error found. Line and byte-column
/// numbers are 1-based.
pub fn parse(text: &str) -> Result<SceneDoc> {
    let mut b = Builder::default();

    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = match raw.find('#') {
            Some(pos) => &raw[..pos],
            None => raw,
        };
        let tokens = tokenize(line);
        if tokens.is_empty() {
            continue;
        }
        parse_line(&mut b, line_no, &tokens);
    }

    finish(b)
}

fn parse_line(b: &mut Builder, line: usize, tokens: &[Token<'_>]) {
    let keyword = &tokens[0];
    if tokens.len() < 2 {
        b.err(line, keyword.col, format!("`{}` needs a name", keyword.text));
        return;
    }
    let name_tok = &tokens[1];
    let name = name_tok.text;
    let rest = &tokens[2..];
    let mut errs = std::mem::take(&mut b.errors);

    match keyword.text {
        "scene" => {
            let kv = KeyValues::collect(rest, line, &["speed", "packet"], &mut errs);
            let speed = kv
                .get("speed", line, keyword.col, &mut errs)
                .and_then(|(v, c)| parse_f64(v, line, c, &mut errs));
            let packet = kv
                .get("packet", line, keyword.col, &mut errs)
                .and_then(|(v, c)| parse_f64(v, line, c, &mut errs));
            b.errors = errs;
            if !is_ident(name) {
                b.err(line, name_tok.col, format!("invalid scene name `{name}`"));
                return;
            }
            if b.name.is_some() {
                b.err(line, keyword.col, "duplicate scene declaration");
                return;
            }
            if let (Some(speed), Some(packet)) = (speed, packet) {
                b.name = Some((name.to_string(), speed, packet));
                b.scene_line = line;
            }
            return;
        }
        "region" => {
            b.errors = errs;
            if !is_ident(name) {
                b.err(line, name_tok.col, format!("invalid region name `{name}`"));
                return;
            }
            if let Some(prev) = b.region_lines.get(name) {
                let msg = format!("region `{name}` already declared on line {prev}");
                b.err(line, name_tok.col, msg);
                return;
            }
            b.region_lines.insert(name.to_string(), line);
            b.regions.push(name.to_string());
            if let Some(extra) = rest.first() {
                b.err(line, extra.col, "region takes no keys");
            }
            return;
        }
        "rotator" => {
            b.errors = errs;
            b.rotators.push(name.to_string());
            if let Some(extra) = rest.first() {
                b.err(line, extra.col, "rotator takes no keys");
            }
            return;
        }
        _ => {}
    }

    b.errors = errs;
    let mut errs = std::mem::take(&mut b.errors);

    match keyword.text {
        "passage" => {
            let kv = KeyValues::collect(rest, line, &["between"], &mut errs);
            let ends = kv
                .get("between", line, keyword.col, &mut errs)
                .and_then(|(v, c)| parse_pair(v, line, c, &mut errs));
            b.errors = errs;
            if b.claim_id(name, line, name_tok.col) {
                if let Some((ra, rb)) = ends {
                    b.passages.push(PassageDecl {
                        id: name.to_string(),
                        region_a: ra.to_string(),
                        region_b: rb.to_string(),
                    });
                }
            }
        }
        "beamsplitter" => {
            let kv = KeyValues::collect(rest, line, &["at", "in", "out"], &mut errs);
            let at = kv.get("at", line, keyword.col, &mut errs);
            let inputs = kv.get("in", line, keyword.col, &mut errs).and_then(|(v, c)| {
                let parts: Vec<&str> = v.split(':').collect();
                if (1..=2).contains(&parts.len()) && parts.iter().all(|p| is_ident(p)) {
                    Some(parts.iter().map(|p| p.to_string()).collect::<Vec<_>>())
                } else {
                    errs.push(ParseError {
                        line,
                        column: c,
                        message: format!("expected one or two `:`-joined paths, found `{v}`"),
                    });
                    None
                }
            });
            let outputs = kv
                .get("out", line, keyword.col, &mut errs)
                .and_then(|(v, c)| parse_pair(v, line, c, &mut errs));
            b.errors = errs;
            if b.claim_id(name, line, name_tok.col) {
                if let (Some((at, _)), Some(inputs), Some((oa, ob))) = (at, inputs, outputs) {
                    b.components.push(ComponentSpec {
                        id: name.to_string(),
                        kind: ComponentKind::BeamSplitter {
                            region: at.to_string(),
                            inputs,
                            outputs: [oa.to_string(), ob.to_string()],
                        },
                    });
                }
            }
        }
        "phase" => {
            let kv = KeyValues::collect(rest, line, &["at", "path", "phi"], &mut errs);
            let at = kv.get("at", line, keyword.col, &mut errs);
            let path = kv.get("path", line, keyword.col, &mut errs);
            let phi = kv
                .get("phi", line, keyword.col, &mut errs)
                .and_then(|(v, c)| parse_f64(v, line, c, &mut errs));
            b.errors = errs;
            if b.claim_id(name, line, name_tok.col) {
                if let (Some((at, _)), Some((path, _)), Some(phi)) = (at, path, phi) {
                    b.components.push(ComponentSpec {
                        id: name.to_string(),
                        kind: ComponentKind::PhaseShifter {
                            region: at.to_string(),
                            path: path.to_string(),
                            phi,
                        },
                    });
                }
            }
        }
        "mirror" | "pockels" => {
            let kind = keyword.text;
            let kv = KeyValues::collect(rest, line, &["at"], &mut errs);
            let at = kv.get("at", line, keyword.col, &mut errs);
            b.errors = errs;
            if b.claim_id(name, line, name_tok.col) {
                if let Some((at, _)) = at {
                    let kind = if kind == "mirror" {
                        ComponentKind::Mirror {
                            region: at.to_string(),
                        }
                    } else {
                        ComponentKind::PockelsCell {
                            region: at.to_string(),
                        }
                    };
                    b.components.push(ComponentSpec {
                        id: name.to_string(),
                        kind,
                    });
                }
            }
        }
        "polarizer" => {
            let kv = KeyValues::collect(rest, line, &["axis", "between"], &mut errs);
            let axis = kv.get("axis", line, keyword.col, &mut errs).and_then(|(v, c)| {
                Polarization::from_str(v)
                    .map_err(|e| {
                        errs.push(ParseError {
                            line,
                            column: c,
                            message: e,
                        })
                    })
                    .ok()
            });
            let ends = kv
                .get("between", line, keyword.col, &mut errs)
                .and_then(|(v, c)| parse_pair(v, line, c, &mut errs));
            b.errors = errs;
            if b.claim_id(name, line, name_tok.col) {
                if let (Some(axis), Some((ra, rb))) = (axis, ends) {
                    b.components.push(ComponentSpec {
                        id: name.to_string(),
                        kind: ComponentKind::Polarizer {
                            axis,
                            region_a: ra.to_string(),
                            region_b: rb.to_string(),
                        },
                    });
                }
            }
        }
        "segment" => {
            let kv = KeyValues::collect(rest, line, &["at", "length"], &mut errs);
            let at = kv.get("at", line, keyword.col, &mut errs);
            let length = kv
                .get("length", line, keyword.col, &mut errs)
                .and_then(|(v, c)| parse_f64(v, line, c, &mut errs));
            b.errors = errs;
            if b.claim_id(name, line, name_tok.col) {
                if let (Some((at, _)), Some(length)) = (at, length) {
                    b.components.push(ComponentSpec {
                        id: name.to_string(),
                        kind: ComponentKind::FiberSegment {
                            region: at.to_string(),
                            length,
                        },
                    });
                }
            }
        }
        "shutter" => {
            let kv = KeyValues::collect(rest, line, &["response", "between"], &mut errs);
            let response = kv
                .get("response", line, keyword.col, &mut errs)
                .and_then(|(v, c)| parse_f64(v, line, c, &mut errs));
            let ends = kv
                .get("between", line, keyword.col, &mut errs)
                .and_then(|(v, c)| parse_pair(v, line, c, &mut errs));
            b.errors = errs;
            if b.claim_id(name, line, name_tok.col) {
                if let (Some(response), Some((ra, rb))) = (response, ends) {
                    b.components.push(ComponentSpec {
                        id: name.to_string(),
                        kind: ComponentKind::Shutter {
                            response,
                            region_a: ra.to_string(),
                            region_b: rb.to_string(),
                        },
                    });
                }
            }
        }
        "detector" => {
            let kv = KeyValues::collect(rest, line, &["at", "path"], &mut errs);
            let at = kv.get("at", line, keyword.col, &mut errs);
            let path = kv.get("path", line, keyword.col, &mut errs);
            b.errors = errs;
            if b.claim_id(name, line, name_tok.col) {
                if let (Some((at, _)), Some((path, _))) = (at, path) {
                    b.components.push(ComponentSpec {
                        id: name.to_string(),
                        kind: ComponentKind::Detector {
                            region: at.to_string(),
                            path: path.to_string(),
                        },
                    });
                }
            }
        }
        "screen" => {
            let keys = ["at", "d", "dist", "lambda", "sigma", "bins", "halfwidth"];
            let kv = KeyValues::collect(rest, line, &keys, &mut errs);
            let at = kv.get("at", line, keyword.col, &mut errs);
            let d = kv
                .get("d", line, keyword.col, &mut errs)
                .and_then(|(v, c)| parse_f64(v, line, c, &mut errs));
            let dist = kv
                .get("dist", line, keyword.col, &mut errs)
                .and_then(|(v, c)| parse_f64(v, line, c, &mut errs));
            let lambda = kv
                .get("lambda", line, keyword.col, &mut errs)
                .and_then(|(v, c)| parse_f64(v, line, c, &mut errs));
            let sigma = kv
                .get("sigma", line, keyword.col, &mut errs)
                .and_then(|(v, c)| parse_f64(v, line, c, &mut errs));
            let bins = kv
                .get("bins", line, keyword.col, &mut errs)
                .and_then(|(v, c)| parse_usize(v, line, c, &mut errs));
            let halfwidth = kv
                .get("halfwidth", line, keyword.col, &mut errs)
                .and_then(|(v, c)| parse_f64(v, line, c, &mut errs));
            b.errors = errs;
            if b.claim_id(name, line, name_tok.col) {
                if let (Some((at, _)), Some(d), Some(dist), Some(lambda), Some(sigma), Some(bins), Some(halfwidth)) =
                    (at, d, dist, lambda, sigma, bins, halfwidth)
                {
                    b.components.push(ComponentSpec {
                        id: name.to_string(),
                        kind: ComponentKind::Screen {
                            region: at.to_string(),
                            params: ScreenParams {
                                slit_separation: d,
                                distance: dist,
                                wavelength: lambda,
                                envelope_sigma: sigma,
                                bins,
                                half_width: halfwidth,
                            },
                        },
                    });
                }
            }
        }
        "source" => {
            let mut emit = None;
            let mut terms = Vec::new();
            for t in rest {
                match t.text.split_once('=') {
                    Some(("emit", v)) => {
                        if emit.is_some() {
                            errs.push(ParseError {
                                line,
                                column: t.col,
                                message: "duplicate key `emit`".into(),
                            });
                        } else {
                            emit = parse_f64(v, line, t.col, &mut errs);
                        }
                    }
                    Some(("amp", v)) => {
                        if let Some(term) = parse_amp(v, line, t.col, &mut errs) {
                            terms.push(term);
                        }
                    }
                    Some((k, _)) => errs.push(ParseError {
                        line,
                        column: t.col,
                        message: format!("unknown key `{k}`"),
                    }),
                    None => errs.push(ParseError {
                        line,
                        column: t.col,
                        message: format!("expected key=value, found `{}`", t.text),
                    }),
                }
            }
            if emit.is_none() {
                errs.push(ParseError {
                    line,
                    column: keyword.col,
                    message: "missing required key `emit`".into(),
                });
            }
            if terms.is_empty() {
                errs.push(ParseError {
                    line,
                    column: keyword.col,
                    message: "source needs at least one amp=region:path:pol:re[:im] term".into(),
                });
            }
            b.errors = errs;
            if b.source.is_some() {
                b.err(line, keyword.col, "duplicate source declaration");
                return;
            }
            if b.claim_id(name, line, name_tok.col) {
                if let Some(emit_time) = emit {
                    if !terms.is_empty() {
                        b.source = Some(SourceSpec {
                            id: name.to_string(),
                            emit_time,
                            terms,
                        });
                    }
                }
            }
        }
        "route" => {
            let kv = KeyValues::collect(rest, line, &["via"], &mut errs);
            let via = kv.get("via", line, keyword.col, &mut errs).and_then(|(v, c)| {
                let parts: Vec<&str> = v.split(',').collect();
                if !parts.is_empty() && parts.iter().all(|p| is_ident(p)) {
                    Some(parts.iter().map(|p| p.to_string()).collect::<Vec<_>>())
                } else {
                    errs.push(ParseError {
                        line,
                        column: c,
                        message: format!("expected comma-separated component ids, found `{v}`"),
                    });
                    None
                }
            });
            b.errors = errs;
            if !is_ident(name) {
                b.err(line, name_tok.col, format!("invalid path name `{name}`"));
                return;
            }
            if let Some(prev) = b.route_paths.get(name) {
                let msg = format!("route for path `{name}` already declared on line {prev}");
                b.err(line, name_tok.col, msg);
                return;
            }
            b.route_paths.insert(name.to_string(), line);
            if let Some(component_ids) = via {
                b.routes.push(Route {
                    path: name.to_string(),
                    component_ids,
                });
            }
        }
        "close" | "open" => {
            let action = if keyword.text == "close" {
                ShutterAction::Close
            } else {
                ShutterAction::Open
            };
            let kv = KeyValues::collect(rest, line, &["at"], &mut errs);
            let at = kv
                .get("at", line, keyword.col, &mut errs)
                .and_then(|(v, c)| parse_f64(v, line, c, &mut errs));
            b.errors = errs;
            if let Some(time) = at {
                b.shutter_events.push(ShutterEventDecl {
                    shutter: name.to_string(),
                    action,
                    time,
                });
            }
        }
        "window" => {
            let kv = KeyValues::collect(rest, line, &["on", "off"], &mut errs);
            let on = kv
                .get("on", line, keyword.col, &mut errs)
                .and_then(|(v, c)| parse_f64(v, line, c, &mut errs));
            let off = kv
                .get("off", line, keyword.col, &mut errs)
                .and_then(|(v, c)| parse_f64(v, line, c, &mut errs));
            b.errors = errs;
            if let (Some(on), Some(off)) = (on, off) {
                b.windows.push(WindowDecl {
                    pockels: name.to_string(),
                    on,
                    off,
                });
            }
        }
        other => {
            b.errors = errs;
            b.err(line, keyword.col, format!("unknown keyword `{other}`"));
        }
    }
}

fn parse_amp(
    v: &str,
    line: usize,
    col: usize,
    errors: &mut Vec<ParseError>,
) -> Option<AmpTerm> {
    let parts: Vec<&str> = v.split(':').collect();
    if parts.len() != 4 && parts.len() != 5 {
        errors.push(ParseError {
            line,
            column: col,
            message: format!("expected amp=region:path:pol:re[:im], found `{v}`"),
        });
        return None;
    }
    if !is_ident(parts[0]) || !is_ident(parts[1]) {
        errors.push(ParseError {
            line,
            column: col,
            message: format!("invalid region or path in amp term `{v}`"),
        });
        return None;
    }
    let pol = match Polarization::from_str(parts[2]) {
        Ok(p) => p,
        Err(e) => {
            errors.push(ParseError {
                line,
                column: col,
                message: e,
            });
            return None;
        }
    };
    let re = parse_f64(parts[3], line, col, errors)?;
    let im = if parts.len() == 5 {
        parse_f64(parts[4], line, col, errors)?
    } else {
        0.0
    };
    Some(AmpTerm {
        region: parts[0].to_string(),
        path: parts[1].to_string(),
        pol,
        amp: Complex64::new(re, im),
    })
}

fn finish(mut b: Builder) -> Result<SceneDoc> {
    if b.name.is_none() && b.errors.iter().all(|e| !e.message.contains("scene")) {
        b.errors.push(ParseError {
            line: 1,
            column: 1,
            message: "missing scene declaration".into(),
        });
    }
    if b.source.is_none() && b.errors.iter().all(|e| !e.message.contains("source")) {
        b.errors.push(ParseError {
            line: 1,
            column: 1,
            message: "missing source declaration".into(),
        });
    }
    if !b.errors.is_empty() {
        return Err(Error::Parse(b.errors));
    }
    let (name, speed, packet) = b.name.unwrap();
    Ok(SceneDoc::new(
        name,
        speed,
        packet,
        b.regions,
        b.rotators,
        b.passages,
        b.components,
        b.source.unwrap(),
        b.routes,
        b.shutter_events,
        b.windows,
    ))
}

fn fmt_f64(v: f64) -> String {
    format!("{v}")
}

/// Canonical text form. `parse(serialize(doc))` is structurally equal to
/// `doc`, and serializing a parsed fixture reproduces it byte for byte
/// once the fixture itself is in canonical form.
pub fn serialize(doc: &SceneDoc) -> String {
    let mut out = String::new();
    let _ = writeln!(
        out,
        "scene {} speed={} packet={}",
        doc.name,
        fmt_f64(doc.speed),
        fmt_f64(doc.packet_duration)
    );

    let mut topology = String::new();
    for r in &doc.regions {
        let _ = writeln!(topology, "region {r}");
    }
    for r in &doc.rotators {
        let _ = writeln!(topology, "rotator {r}");
    }
    for p in &doc.passages {
        let _ = writeln!(topology, "passage {} between={}:{}", p.id, p.region_a, p.region_b);
    }
    if !topology.is_empty() {
        out.push('\n');
        out.push_str(&topology);
    }

    let mut comps = String::new();
    for c in &doc.components {
        let line = match &c.kind {
            ComponentKind::BeamSplitter {
                region,
                inputs,
                outputs,
            } => format!(
                "beamsplitter {} at={} in={} out={}:{}",
                c.id,
                region,
                inputs.join(":"),
                outputs[0],
                outputs[1]
            ),
            ComponentKind::PhaseShifter { region, path, phi } => {
                format!("phase {} at={} path={} phi={}", c.id, region, path, fmt_f64(*phi))
            }
            ComponentKind::Mirror { region } => format!("mirror {} at={}", c.id, region),
            ComponentKind::PockelsCell { region } => {
                format!("pockels {} at={}", c.id, region)
            }
            ComponentKind::Polarizer {
                axis,
                region_a,
                region_b,
            } => format!(
                "polarizer {} axis={} between={}:{}",
                c.id, axis, region_a, region_b
            ),
            ComponentKind::FiberSegment { region, length } => {
                format!("segment {} at={} length={}", c.id, region, fmt_f64(*length))
            }
            ComponentKind::Shutter {
                response,
                region_a,
                region_b,
            } => format!(
                "shutter {} response={} between={}:{}",
                c.id,
                fmt_f64(*response),
                region_a,
                region_b
            ),
            ComponentKind::Detector { region, path } => {
                format!("detector {} at={} path={}", c.id, region, path)
            }
            ComponentKind::Screen { region, params } => format!(
                "screen {} at={} d={} dist={} lambda={} sigma={} bins={} halfwidth={}",
                c.id,
                region,
                fmt_f64(params.slit_separation),
                fmt_f64(params.distance),
                fmt_f64(params.wavelength),
                fmt_f64(params.envelope_sigma),
                params.bins,
                fmt_f64(params.half_width)
            ),
        };
        let _ = writeln!(comps, "{line}");
    }
    if !comps.is_empty() {
        out.push('\n');
        out.push_str(&comps);
    }

    let mut beam = String::new();
    let mut src_line = format!(
        "source {} emit={}",
        doc.source.id,
        fmt_f64(doc.source.emit_time)
    );
    for t in &doc.source.terms {
        let _ = write!(src_line, " amp={}:{}:{}:{}", t.region, t.path, t.pol, fmt_f64(t.amp.re));
        if t.amp.im != 0.0 {
            let _ = write!(src_line, ":{}", fmt_f64(t.amp.im));
        }
    }
    let _ = writeln!(beam, "{src_line}");
    for r in &doc.routes {
        let _ = writeln!(beam, "route {} via={}", r.path, r.component_ids.join(","));
    }
    out.push('\n');
    out.push_str(&beam);

    let mut sched = String::new();
    for e in &doc.shutter_events {
        let verb = match e.action {
            ShutterAction::Close => "close",
            ShutterAction::Open => "open",
        };
        let _ = writeln!(sched, "{verb} {} at={}", e.shutter, fmt_f64(e.time));
    }
    for w in &doc.windows {
        let _ = writeln!(sched, "window {} on={} off={}", w.pockels, fmt_f64(w.on), fmt_f64(w.off));
    }
    if !sched.is_empty() {
        out.push('\n');
        out.push_str(&sched);
    }

    out
}

/// Everything found wrong (errors) or questionable (warnings) with a
/// parsed scene. Errors make a scene unrunnable; warnings do not.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SceneReport {
    pub errors: Vec<String>,
    pub warnings: Vec<String>,
}

impl SceneReport {
    pub fn is_clean(&self) -> bool {
        self.errors.is_empty() && self.warnings.is_empty()
    }

    pub fn is_runnable(&self) -> bool {
        self.errors.is_empty()
    }
}

/// One step of a route walk: the component traversed, the region the
/// packet occupies afterwards, whether a region boundary was crossed, and
/// the cumulative fiber length in meters before this component.
#[derive(Debug, Clone, PartialEq)]
pub struct RouteStep {
    pub component_id: String,
    pub region: String,
    pub crossing: Option<(String, String)>,
    pub offset_m: f64,
}

/// Walks a route through the scene, resolving regions and crossings.
///
/// The walk starts in the splitter's region when the route begins with a
/// beam splitter that creates the path, otherwise in the region of the
/// source term carrying the path. Gate components (shutters, polarizers)
/// must have the current region as one endpoint; `at=` components in a
/// different region imply an open crossing.
pub fn walk_route(doc: &SceneDoc, route: &Route) -> std::result::Result<Vec<RouteStep>, String> {
    let first = doc
        .component(&route.component_ids[0])
        .ok_or_else(|| format!("route `{}` references unknown component `{}`", route.path, route.component_ids[0]))?;
    let mut current: String = match &first.kind {
        ComponentKind::BeamSplitter { region, outputs, .. }
            if outputs.contains(&route.path) =>
        {
            region.clone()
        }
        _ => doc
            .source
            .terms
            .iter()
            .find(|t| t.path == route.path)
            .map(|t| t.region.clone())
            .ok_or_else(|| {
                format!(
                    "route `{}` starts at `{}`, but no source term or creating splitter defines where path `{}` begins",
                    route.path, route.component_ids[0], route.path
                )
            })?,
    };

    let mut steps = Vec::with_capacity(route.component_ids.len());
    let mut offset = 0.0_f64;
    for id in &route.component_ids {
        let comp = doc
            .component(id)
            .ok_or_else(|| format!("route `{}` references unknown component `{id}`", route.path))?;
        let mut crossing = None;
        match &comp.kind {
            ComponentKind::Shutter {
                region_a, region_b, ..
            }
            | ComponentKind::Polarizer {
                region_a, region_b, ..
            } => {
                let next = if *region_a == current {
                    region_b.clone()
                } else if *region_b == current {
                    region_a.clone()
                } else {
                    return Err(format!(
                        "route `{}` reaches gate `{id}` ({region_a}:{region_b}) from region `{current}`, which is not an endpoint",
                        route.path
                    ));
                };
                crossing = Some((current.clone(), next.clone()));
                current = next;
            }
            other => {
                let region = comp.region().ok_or_else(|| {
                    format!("route `{}` lists `{id}`, which has no single region", route.path)
                })?;
                if region != current {
                    crossing = Some((current.clone(), region.to_string()));
                    current = region.to_string();
                }
                if let ComponentKind::FiberSegment { length, .. } = other {
                    steps.push(RouteStep {
                        component_id: id.clone(),
                        region: current.clone(),
                        crossing,
                        offset_m: offset,
                    });
                    offset += length;
                    continue;
                }
            }
        }
        steps.push(RouteStep {
            component_id: id.clone(),
            region: current.clone(),
            crossing,
            offset_m: offset,
        });
    }
    Ok(steps)
}

/// Cross-checks a parsed scene. Pure: identical input yields an identical
/// report.
pub fn validate(doc: &SceneDoc) -> SceneReport {
    let mut report = SceneReport::default();
    let regions: BTreeSet<&str> = doc.regions.iter().map(String::as_str).collect();
    let err = |report: &mut SceneReport, msg: String| report.errors.push(msg);

    if doc.speed <= 0.0 {
        err(&mut report, format!("propagation speed must be positive, got {}", doc.speed));
    }
    if doc.packet_duration <= 0.0 {
        err(&mut report, format!("packet duration must be positive, got {}", doc.packet_duration));
    }

    for r in &doc.rotators {
        if !regions.contains(r.as_str()) {
            err(&mut report, format!("rotator region `{r}` is not declared"));
        }
    }
    for p in &doc.passages {
        for end in [&p.region_a, &p.region_b] {
            if !regions.contains(end.as_str()) {
                err(&mut report, format!("passage `{}` references unknown region `{end}`", p.id));
            }
        }
        if p.region_a == p.region_b {
            err(&mut report, format!("passage `{}` joins region `{}` to itself", p.id, p.region_a));
        }
    }

    for c in &doc.components {
        match &c.kind {
            ComponentKind::Shutter {
                response,
                region_a,
                region_b,
            } => {
                if *response <= 0.0 {
                    err(&mut report, format!("shutter `{}` response must be positive, got {response}", c.id));
                }
                for end in [region_a, region_b] {
                    if !regions.contains(end.as_str()) {
                        err(&mut report, format!("shutter `{}` references unknown region `{end}`", c.id));
                    }
                }
            }
            ComponentKind::Polarizer {
                region_a, region_b, ..
            } => {
                for end in [region_a, region_b] {
                    if !regions.contains(end.as_str()) {
                        err(&mut report, format!("polarizer `{}` references unknown region `{end}`", c.id));
                    }
                }
            }
            ComponentKind::FiberSegment { region, length } => {
                if *length <= 0.0 {
                    err(&mut report, format!("segment `{}` length must be positive, got {length}", c.id));
                }
                if !regions.contains(region.as_str()) {
                    err(&mut report, format!("segment `{}` references unknown region `{region}`", c.id));
                }
            }
            ComponentKind::Screen { region, params } => {
                if !regions.contains(region.as_str()) {
                    err(&mut report, format!("screen `{}` references unknown region `{region}`", c.id));
                }
                for (label, v) in [
                    ("d", params.slit_separation),
                    ("dist", params.distance),
                    ("lambda", params.wavelength),
                    ("sigma", params.envelope_sigma),
                    ("halfwidth", params.half_width),
                ] {
                    if v <= 0.0 {
                        err(&mut report, format!("screen `{}` {label} must be positive, got {v}", c.id));
                    }
                }
                if params.bins < 2 {
                    err(&mut report, format!("screen `{}` needs at least 2 bins, got {}", c.id, params.bins));
                }
            }
            _ => {
                if let Some(region) = c.region() {
                    if !regions.contains(region) {
                        err(&mut report, format!("component `{}` references unknown region `{region}`", c.id));
                    }
                }
            }
        }
    }

    for t in &doc.source.terms {
        if !regions.contains(t.region.as_str()) {
            err(&mut report, format!("source term `{}:{}` references unknown region", t.region, t.path));
        }
    }
    let mut seen_terms = BTreeSet::new();
    for t in &doc.source.terms {
        if !seen_terms.insert((t.region.clone(), t.path.clone(), t.pol)) {
            err(&mut report, format!("duplicate source term for {}:{}:{}", t.region, t.path, t.pol));
        }
    }
    let norm: f64 = doc.source.terms.iter().map(|t| t.amp.norm_sqr()).sum();
    if (norm - 1.0).abs() > crate::qstate::TOL_ALGEBRAIC {
        err(&mut report, format!("source amplitudes have squared norm {norm}, expected 1"));
    }
    if doc.source.emit_time < 0.0 {
        err(&mut report, format!("source emit time must be non-negative, got {}", doc.source.emit_time));
    }

    // Schedule sanity: shutters must exist and their events must alternate
    // close, open, close, ... ending open.
    let mut by_shutter: BTreeMap<&str, Vec<&ShutterEventDecl>> = BTreeMap::new();
    for e in &doc.shutter_events {
        by_shutter.entry(&e.shutter).or_default().push(e);
        if e.time < 0.0 {
            err(&mut report, format!("shutter event for `{}` at negative time {}", e.shutter, e.time));
        }
    }
    for (shutter, events) in &by_shutter {
        match doc.component(shutter).map(|c| &c.kind) {
            Some(ComponentKind::Shutter { .. }) => {}
            _ => {
                err(&mut report, format!("schedule references unknown shutter `{shutter}`"));
                continue;
            }
        }
        let mut expect = ShutterAction::Close;
        let mut prev_time = f64::NEG_INFINITY;
        let mut clean = true;
        for e in events {
            if e.action != expect {
                clean = false;
                break;
            }
            if e.time <= prev_time {
                clean = false;
                break;
            }
            prev_time = e.time;
            expect = match expect {
                ShutterAction::Close => ShutterAction::Open,
                ShutterAction::Open => ShutterAction::Close,
            };
        }
        if expect == ShutterAction::Open {
            // Schedule ended on a close with no matching open.
            clean = false;
        }
        if !clean {
            err(&mut report, format!(
                "shutter `{shutter}` schedule must alternate close/open pairs in increasing time order"
            ));
        }
    }

    // Pockels windows: target must exist; windows ordered and disjoint per
    // cell with positive extent.
    let mut by_pockels: BTreeMap<&str, Vec<(f64, f64)>> = BTreeMap::new();
    for w in &doc.windows {
        match doc.component(&w.pockels).map(|c| &c.kind) {
            Some(ComponentKind::PockelsCell { .. }) => {}
            _ => {
                err(&mut report, format!("window references unknown Pockels cell `{}`", w.pockels));
                continue;
            }
        }
        by_pockels.entry(&w.pockels).or_default().push((w.on, w.off));
    }
    for (id, windows) in by_pockels {
        if crate::optics::PockelsSchedule::new(windows).is_err() {
            err(&mut report, format!(
                "Pockels cell `{id}` windows must be positive-width, ordered, and disjoint"
            ));
        }
    }

    // Routes: components resolve and the walk is continuous.
    let mut walks = Vec::new();
    for route in &doc.routes {
        if route.component_ids.is_empty() {
            err(&mut report, format!("route `{}` lists no components", route.path));
            continue;
        }
        match walk_route(doc, route) {
            Ok(steps) => {
                for step in &steps {
                    if !regions.contains(step.region.as_str()) {
                        err(&mut report, format!(
                            "route `{}` enters undeclared region `{}`",
                            route.path, step.region
                        ));
                    }
                }
                walks.push((route, steps));
            }
            Err(e) => err(&mut report, e),
        }
    }

    if report.errors.is_empty() {
        feasibility_warnings(doc, &walks, &mut report);
    }
    report
}

/// Shutter-spacing and arrival-synchronization warnings.
fn feasibility_warnings(
    doc: &SceneDoc,
    walks: &[(&Route, Vec<RouteStep>)],
    report: &mut SceneReport,
) {
    // Consecutive shutters along a route need enough fiber between them
    // for a contact-free close/open cycle.
    for (route, steps) in walks {
        let shutters: Vec<(usize, &str, f64)> = steps
            .iter()
            .enumerate()
            .filter_map(|(i, s)| match doc.component(&s.component_id).map(|c| &c.kind) {
                Some(ComponentKind::Shutter { response, .. }) => {
                    Some((i, s.component_id.as_str(), *response))
                }
                _ => None,
            })
            .collect();
        for pair in shutters.windows(2) {
            let (ia, id_a, resp_a) = pair[0];
            let (ib, id_b, resp_b) = pair[1];
            let between = steps[ib].offset_m - steps[ia].offset_m;
            let needed = match crate::timeline::min_separation(resp_a.max(resp_b), doc.speed) {
                Ok(v) => v,
                Err(_) => continue,
            };
            if between < needed {
                report.warnings.push(format!(
                    "route `{}`: fiber between shutters `{id_a}` and `{id_b}` is {between} m, below the {needed} m minimum for a contact-free close/open cycle",
                    route.path
                ));
            }
        }
    }

    // Components shared by several routes should see all packets arrive
    // within one packet duration, or they cannot recombine coherently.
    let mut arrivals: BTreeMap<&str, Vec<(f64, &str)>> = BTreeMap::new();
    for (route, steps) in walks {
        for s in steps {
            arrivals
                .entry(s.component_id.as_str())
                .or_default()
                .push((s.offset_m, route.path.as_str()));
        }
    }
    for (id, mut times) in arrivals {
        if times.len() < 2 {
            continue;
        }
        times.sort_by(|a, b| a.0.total_cmp(&b.0));
        let spread_m = times.last().unwrap().0 - times.first().unwrap().0;
        let spread_s = spread_m / doc.speed;
        if spread_s > doc.packet_duration {
            report.warnings.push(format!(
                "component `{id}` is reached at path offsets spread over {spread_m} m ({spread_s} s), beyond the packet duration {} s",
                doc.packet_duration
            ));
        }
    }
}
