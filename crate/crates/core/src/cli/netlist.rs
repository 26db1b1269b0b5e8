//! Line-based circuit description format.
//!
//! ```text
//! # comment
//! mode a b c
//! qd q g=2.52 kappa_s=0.05 gamma=0.1 [detuning=0]     | qd q preset=ideal
//! input photon gate R=0.6 L=0.8 a=1                   # amplitudes are re or re,im
//! input spin q up=0.7071067811865476 down=-0.7071067811865476
//! stage gate|source|main <name>
//! inject photon s1 R=1 L=0 c1=0.6 d1=0.8
//! pbs <in1> <in2> <transmit> <reflect>
//! bs <m1> <m2> <o1> <o2> [rotated]
//! hwp <mode> 22.5|45
//! vbs <in> <out> <sink> [T=<v>] [qd=<name>]
//! qdscatter <qd> <top> <bottom>
//! mirror <in> <out>
//! detector <mode> <sink>
//! spinflip <qd>
//! pauliz polarization <photon> | spatial <photon> <mode> | spin <qd>
//! herald silent=D1,D2
//! measure spin <qd> +|-|all [as=<label>]
//! measure photon <mode> +|-|all plus=<sink> minus=<sink> [as=<label>]
//! measure path <first> <second> first|second|all [as=<label>]
//! if <label>=<outcome> <element statement>
//! parity <label> n=<N> <pauliz arguments>
//! freeze <photon>
//! snapshot <label>
//! def <name> <param>...  /  end  /  call <name> <arg>...   ({param} is substituted)
//! ```

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::{self, Write as _};

use crate::coeffs::{vbs_transmission, CavityParams};
use crate::devices::protocol::{CircuitBuilder, Outcome, Path, Protocol, StageKind};
use crate::devices::Cavity;
use crate::elements::{loss_sink_name, Element, HwpAngle, ZTarget};
use crate::error::Error;
use crate::registry::SinkKind;
use crate::state::{PhotonSpec, Sign, SpinSpec, C64, SPEC_TOLERANCE};

const MAX_CALL_DEPTH: usize = 16;

/// How a QD-cavity is specified in a netlist.
#[derive(Debug, Clone, PartialEq)]
pub enum QdSpec {
    Params {
        g: f64,
        kappa_s: f64,
        gamma: f64,
        detuning: Option<f64>,
    },
    Preset(String),
}

impl QdSpec {
    pub fn cavity(&self) -> crate::Result<Cavity> {
        match self {
            QdSpec::Params {
                g,
                kappa_s,
                gamma,
                detuning,
            } => Ok(Cavity::Params(match detuning {
                Some(d) => CavityParams::detuned(*g, *kappa_s, *gamma, *d),
                None => CavityParams::resonant(*g, *kappa_s, *gamma),
            })),
            QdSpec::Preset(name) => crate::analysis::preset(name),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum ZStmt {
    Polarization { photon: String },
    Spatial { photon: String, mode: String },
    Spin { qd: String },
}

#[derive(Debug, Clone, PartialEq)]
pub enum ElementStmt {
    Pbs {
        in1: String,
        in2: String,
        transmit: String,
        reflect: String,
    },
    Bs {
        m1: String,
        m2: String,
        o1: String,
        o2: String,
        rotated: bool,
    },
    Hwp {
        mode: String,
        angle: HwpAngle,
    },
    Vbs {
        input: String,
        output: String,
        sink: String,
        transmission: Option<f64>,
        qd: Option<String>,
    },
    QdScatter {
        qd: String,
        top: String,
        bottom: String,
    },
    Mirror {
        input: String,
        output: String,
    },
    Detector {
        mode: String,
        sink: String,
    },
    SpinFlip {
        qd: String,
    },
    PauliZ(ZStmt),
}

impl ElementStmt {
    fn modes_in(&self) -> Vec<&str> {
        match self {
            ElementStmt::Pbs { in1, in2, .. } => vec![in1, in2],
            ElementStmt::Bs { m1, m2, .. } => vec![m1, m2],
            ElementStmt::Hwp { mode, .. } | ElementStmt::Detector { mode, .. } => vec![mode],
            ElementStmt::Vbs { input, .. } | ElementStmt::Mirror { input, .. } => vec![input],
            ElementStmt::QdScatter { top, bottom, .. } => vec![top, bottom],
            ElementStmt::SpinFlip { .. } => vec![],
            ElementStmt::PauliZ(ZStmt::Spatial { mode, .. }) => vec![mode],
            ElementStmt::PauliZ(_) => vec![],
        }
    }

    fn modes_out(&self) -> Vec<&str> {
        match self {
            ElementStmt::Pbs { transmit, reflect, .. } => vec![transmit, reflect],
            ElementStmt::Bs { o1, o2, .. } => vec![o1, o2],
            ElementStmt::Vbs { output, .. } | ElementStmt::Mirror { output, .. } => vec![output],
            _ => vec![],
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum MeasureStmt {
    Spin {
        qd: String,
        fixed: Option<Sign>,
        label: String,
    },
    Photon {
        mode: String,
        fixed: Option<Sign>,
        plus: String,
        minus: String,
        label: String,
    },
    Path {
        first: String,
        second: String,
        fixed: Option<Path>,
        label: String,
    },
}

impl MeasureStmt {
    fn label(&self) -> &str {
        match self {
            MeasureStmt::Spin { label, .. } | MeasureStmt::Photon { label, .. } | MeasureStmt::Path { label, .. } => {
                label
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Stmt {
    Mode(Vec<String>),
    Qd { name: String, spec: QdSpec },
    InputPhoton { name: String, spec: PhotonSpec },
    InputSpin { qd: String, spec: SpinSpec },
    Stage { kind: StageKind, name: String },
    Inject { name: String, spec: PhotonSpec },
    Element(ElementStmt),
    If { label: String, outcome: Outcome, element: ElementStmt },
    Parity { label: String, n: usize, target: ZStmt },
    Measure(MeasureStmt),
    Herald(Vec<String>),
    Freeze(String),
    Snapshot(String),
}

/// A parsed, macro-expanded and declaration-checked netlist.
#[derive(Debug, Clone)]
pub struct Netlist {
    pub statements: Vec<Stmt>,
    /// Source position (line, column) of each statement.
    pub positions: Vec<(usize, usize)>,
}

/// Structural equality: positions are ignored.
impl PartialEq for Netlist {
    fn eq(&self, other: &Self) -> bool {
        self.statements == other.statements
    }
}

/// All errors found in one netlist, in source order.
#[derive(Debug, Clone, PartialEq)]
pub struct ParseErrors(pub Vec<Error>);

impl fmt::Display for ParseErrors {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, e) in self.0.iter().enumerate() {
            if i > 0 {
                writeln!(f)?;
            }
            write!(f, "{e}")?;
        }
        Ok(())
    }
}

impl std::error::Error for ParseErrors {}

impl From<ParseErrors> for Error {
    fn from(e: ParseErrors) -> Self {
        e.0.into_iter()
            .next()
            .unwrap_or_else(|| Error::Protocol("empty error list".into()))
    }
}

fn err(line: usize, column: usize, message: impl Into<String>) -> Error {
    Error::Netlist {
        line,
        column,
        message: message.into(),
    }
}

#[derive(Debug, Clone)]
struct Tok {
    text: String,
    line: usize,
    col: usize,
}

impl Tok {
    fn err(&self, message: impl Into<String>) -> Error {
        err(self.line, self.col, message)
    }
}

#[derive(Debug, Clone)]
struct Line {
    toks: Vec<Tok>,
}

fn lex(text: &str) -> Vec<Line> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let body = raw.split('#').next().unwrap_or("");
        let mut toks = Vec::new();
        let mut start = None;
        for (col, ch) in body.chars().chain([' ']).enumerate() {
            match (ch.is_whitespace(), start) {
                (false, None) => start = Some(col),
                (true, Some(s)) => {
                    toks.push(Tok {
                        text: body.chars().skip(s).take(col - s).collect(),
                        line: i + 1,
                        col: s + 1,
                    });
                    start = None;
                }
                _ => {}
            }
        }
        if !toks.is_empty() {
            out.push(Line { toks });
        }
    }
    out
}

struct Macro {
    params: Vec<String>,
    body: Vec<Line>,
}

/// Expands `def`/`call`, leaving plain statement lines.
fn expand(lines: Vec<Line>, errors: &mut Vec<Error>) -> Vec<Line> {
    let mut macros: BTreeMap<String, Macro> = BTreeMap::new();
    let mut top = Vec::new();
    let mut it = lines.into_iter();
    while let Some(line) = it.next() {
        let head = &line.toks[0];
        match head.text.as_str() {
            "def" => {
                let Some(name) = line.toks.get(1) else {
                    errors.push(head.err("`def` needs a macro name"));
                    continue;
                };
                let params: Vec<String> = line.toks[2..].iter().map(|t| t.text.clone()).collect();
                let mut body = Vec::new();
                let mut closed = false;
                for l in it.by_ref() {
                    match l.toks[0].text.as_str() {
                        "end" => {
                            closed = true;
                            break;
                        }
                        "def" => errors.push(l.toks[0].err("macros cannot be nested")),
                        _ => body.push(l),
                    }
                }
                if !closed {
                    errors.push(head.err(format!("macro `{}` has no `end`", name.text)));
                }
                if macros.insert(name.text.clone(), Macro { params, body }).is_some() {
                    errors.push(name.err(format!("macro `{}` defined twice", name.text)));
                }
            }
            "end" => errors.push(head.err("`end` without `def`")),
            _ => top.push(line),
        }
    }
    let mut out = Vec::new();
    for line in top {
        call_into(&macros, line, &BTreeMap::new(), 0, &mut out, errors);
    }
    out
}

fn substitute(t: &Tok, args: &BTreeMap<String, String>) -> Tok {
    let mut text = t.text.clone();
    for (k, v) in args {
        text = text.replace(&format!("{{{k}}}"), v);
    }
    Tok { text, ..t.clone() }
}

fn call_into(
    macros: &BTreeMap<String, Macro>,
    line: Line,
    args: &BTreeMap<String, String>,
    depth: usize,
    out: &mut Vec<Line>,
    errors: &mut Vec<Error>,
) {
    let line = Line {
        toks: line.toks.iter().map(|t| substitute(t, args)).collect(),
    };
    if let Some(t) = line.toks.iter().find(|t| t.text.contains('{')) {
        errors.push(t.err(format!("unbound parameter in `{}`", t.text)));
        return;
    }
    if line.toks[0].text != "call" {
        out.push(line);
        return;
    }
    let head = &line.toks[0];
    let Some(name) = line.toks.get(1) else {
        errors.push(head.err("`call` needs a macro name"));
        return;
    };
    let Some(m) = macros.get(&name.text) else {
        errors.push(name.err(format!("undeclared macro `{}`", name.text)));
        return;
    };
    let given = &line.toks[2..];
    if given.len() != m.params.len() {
        errors.push(head.err(format!(
            "arity mismatch: macro `{}` takes {} arguments, got {}",
            name.text,
            m.params.len(),
            given.len()
        )));
        return;
    }
    if depth >= MAX_CALL_DEPTH {
        errors.push(head.err("macro calls nested too deeply"));
        return;
    }
    let bound: BTreeMap<String, String> = m.params.iter().cloned().zip(given.iter().map(|t| t.text.clone())).collect();
    for l in &m.body {
        // Errors inside the body point at the call site.
        let relocated = Line {
            toks: l
                .toks
                .iter()
                .map(|t| Tok {
                    text: t.text.clone(),
                    line: head.line,
                    col: head.col,
                })
                .collect(),
        };
        call_into(macros, relocated, &bound, depth + 1, out, errors);
    }
}

fn parse_f64(t: &Tok, s: &str) -> Result<f64, Error> {
    let v: f64 = s.parse().map_err(|_| t.err(format!("`{s}` is not a number")))?;
    if !v.is_finite() {
        return Err(t.err(format!("`{s}` is not finite")));
    }
    Ok(v)
}

fn parse_amp(t: &Tok, s: &str) -> Result<C64, Error> {
    match s.split_once(',') {
        Some((re, im)) => Ok(C64::new(parse_f64(t, re)?, parse_f64(t, im)?)),
        None => Ok(C64::new(parse_f64(t, s)?, 0.0)),
    }
}

fn fmt_amp(a: C64) -> String {
    if a.im == 0.0 {
        format!("{}", a.re)
    } else {
        format!("{},{}", a.re, a.im)
    }
}

/// Positional tokens and `key=value` options of one statement.
struct Args<'a> {
    head: &'a Tok,
    pos: Vec<&'a Tok>,
    kv: Vec<(&'a Tok, String, String)>,
    used: BTreeSet<usize>,
}

impl<'a> Args<'a> {
    fn new(toks: &'a [Tok]) -> Self {
        let mut pos = Vec::new();
        let mut kv = Vec::new();
        for t in &toks[1..] {
            match t.text.split_once('=') {
                Some((k, v)) if !k.is_empty() => kv.push((t, k.to_string(), v.to_string())),
                _ => pos.push(t),
            }
        }
        Args {
            head: &toks[0],
            pos,
            kv,
            used: BTreeSet::new(),
        }
    }

    fn arity(&self, want: usize, usage: &str) -> Result<(), Error> {
        if self.pos.len() != want {
            return Err(self.head.err(format!(
                "arity mismatch: `{}` takes {want} arguments, got {} (usage: {usage})",
                self.head.text,
                self.pos.len()
            )));
        }
        Ok(())
    }

    fn arity_range(&self, lo: usize, hi: usize, usage: &str) -> Result<(), Error> {
        if self.pos.len() < lo || self.pos.len() > hi {
            return Err(self.head.err(format!(
                "arity mismatch: `{}` takes {lo} to {hi} arguments, got {} (usage: {usage})",
                self.head.text,
                self.pos.len()
            )));
        }
        Ok(())
    }

    fn p(&self, i: usize) -> String {
        self.pos[i].text.clone()
    }

    fn opt(&mut self, key: &str) -> Option<(&'a Tok, String)> {
        let i = self.kv.iter().position(|(_, k, _)| k == key)?;
        self.used.insert(i);
        Some((self.kv[i].0, self.kv[i].2.clone()))
    }

    fn req(&mut self, key: &str) -> Result<(&'a Tok, String), Error> {
        let head = self.head;
        self.opt(key)
            .ok_or_else(|| head.err(format!("`{}` needs `{key}=`", head.text)))
    }

    fn num(&mut self, key: &str) -> Result<Option<f64>, Error> {
        self.opt(key).map(|(t, v)| parse_f64(t, &v)).transpose()
    }

    /// Every option not consumed yet, for statements that take free keys.
    fn rest(&mut self) -> Vec<(&'a Tok, String, String)> {
        let out = self
            .kv
            .iter()
            .enumerate()
            .filter(|(i, _)| !self.used.contains(i))
            .map(|(_, x)| x.clone())
            .collect();
        self.used.extend(0..self.kv.len());
        out
    }

    fn finish(self) -> Result<(), Error> {
        for (i, (t, k, _)) in self.kv.iter().enumerate() {
            if !self.used.contains(&i) {
                return Err(t.err(format!("unknown option `{k}` for `{}`", self.head.text)));
            }
        }
        Ok(())
    }
}

fn parse_z(a: &Args, from: usize) -> Result<ZStmt, Error> {
    let kind = a.pos.get(from).ok_or_else(|| a.head.err("expected polarization, spatial or spin"))?;
    let n = a.pos.len() - from;
    let want = |k: usize| {
        if n != k {
            Err(kind.err(format!("arity mismatch: `pauliz {}` takes {} arguments", kind.text, k - 1)))
        } else {
            Ok(())
        }
    };
    match kind.text.as_str() {
        "polarization" => {
            want(2)?;
            Ok(ZStmt::Polarization { photon: a.p(from + 1) })
        }
        "spatial" => {
            want(3)?;
            Ok(ZStmt::Spatial {
                photon: a.p(from + 1),
                mode: a.p(from + 2),
            })
        }
        "spin" => {
            want(2)?;
            Ok(ZStmt::Spin { qd: a.p(from + 1) })
        }
        other => Err(kind.err(format!("unknown pauliz target `{other}`"))),
    }
}

fn parse_element(toks: &[Tok]) -> Result<Option<ElementStmt>, Error> {
    let mut a = Args::new(toks);
    let e = match toks[0].text.as_str() {
        "pbs" => {
            a.arity(4, "pbs <in1> <in2> <transmit> <reflect>")?;
            ElementStmt::Pbs {
                in1: a.p(0),
                in2: a.p(1),
                transmit: a.p(2),
                reflect: a.p(3),
            }
        }
        "bs" => {
            a.arity_range(4, 5, "bs <m1> <m2> <o1> <o2> [rotated]")?;
            let rotated = match a.pos.get(4) {
                None => false,
                Some(t) if t.text == "rotated" => true,
                Some(t) => return Err(t.err(format!("expected `rotated`, got `{}`", t.text))),
            };
            ElementStmt::Bs {
                m1: a.p(0),
                m2: a.p(1),
                o1: a.p(2),
                o2: a.p(3),
                rotated,
            }
        }
        "hwp" => {
            a.arity(2, "hwp <mode> <22.5|45>")?;
            let t = a.pos[1];
            let deg = parse_f64(t, &t.text)?;
            let angle = HwpAngle::from_degrees(deg).map_err(|_| t.err("HWP angle must be 22.5 or 45"))?;
            ElementStmt::Hwp { mode: a.p(0), angle }
        }
        "vbs" => {
            a.arity(3, "vbs <in> <out> <sink> [T=<v>] [qd=<name>]")?;
            let transmission = match a.opt("T") {
                Some((t, v)) => {
                    let x = parse_f64(t, &v)?;
                    if !(0.0..=1.0).contains(&x) {
                        return Err(t.err(format!("transmission {x} outside [0, 1]")));
                    }
                    Some(x)
                }
                None => None,
            };
            ElementStmt::Vbs {
                input: a.p(0),
                output: a.p(1),
                sink: a.p(2),
                transmission,
                qd: a.opt("qd").map(|(_, v)| v),
            }
        }
        "qdscatter" => {
            a.arity(3, "qdscatter <qd> <top> <bottom>")?;
            ElementStmt::QdScatter {
                qd: a.p(0),
                top: a.p(1),
                bottom: a.p(2),
            }
        }
        "mirror" => {
            a.arity(2, "mirror <in> <out>")?;
            ElementStmt::Mirror {
                input: a.p(0),
                output: a.p(1),
            }
        }
        "detector" => {
            a.arity(2, "detector <mode> <sink>")?;
            ElementStmt::Detector {
                mode: a.p(0),
                sink: a.p(1),
            }
        }
        "spinflip" => {
            a.arity(1, "spinflip <qd>")?;
            ElementStmt::SpinFlip { qd: a.p(0) }
        }
        "pauliz" => ElementStmt::PauliZ(parse_z(&a, 0)?),
        _ => return Ok(None),
    };
    a.finish()?;
    Ok(Some(e))
}

/// `R=`, `L=` and `<mode>=` amplitudes.
fn parse_photon(a: &mut Args) -> Result<PhotonSpec, Error> {
    let (rt, r) = a.req("R")?;
    let (lt, l) = a.req("L")?;
    let (r, l) = (parse_amp(rt, &r)?, parse_amp(lt, &l)?);
    let mut modes = Vec::new();
    for (t, k, v) in a.rest() {
        modes.push((k, parse_amp(t, &v)?));
    }
    if modes.is_empty() {
        return Err(a.head.err("photon needs at least one `<mode>=<amplitude>`"));
    }
    let norm = |x: f64| (x - 1.0).abs() <= SPEC_TOLERANCE;
    if !norm(r.norm_sqr() + l.norm_sqr()) {
        return Err(rt.err("polarization amplitudes are not normalized"));
    }
    if !norm(modes.iter().map(|(_, a)| a.norm_sqr()).sum()) {
        return Err(a.head.err("spatial amplitudes are not normalized"));
    }
    Ok(PhotonSpec { polarization: (r, l), modes })
}

fn parse_fixed_sign(t: &Tok) -> Result<Option<Sign>, Error> {
    match t.text.as_str() {
        "all" => Ok(None),
        "+" => Ok(Some(Sign::Plus)),
        "-" | "−" => Ok(Some(Sign::Minus)),
        other => Err(t.err(format!("expected +, - or all, got `{other}`"))),
    }
}

fn parse_stmt(toks: &[Tok]) -> Result<Stmt, Error> {
    if let Some(e) = parse_element(toks)? {
        return Ok(Stmt::Element(e));
    }
    let head = &toks[0];
    let mut a = Args::new(toks);
    let stmt = match head.text.as_str() {
        "mode" => {
            if a.pos.is_empty() || !a.kv.is_empty() {
                return Err(head.err("usage: mode <name>..."));
            }
            Stmt::Mode(a.pos.iter().map(|t| t.text.clone()).collect())
        }
        "qd" => {
            a.arity(1, "qd <name> g=<v> kappa_s=<v> gamma=<v> [detuning=<v>] | qd <name> preset=<name>")?;
            let spec = match a.opt("preset") {
                Some((t, name)) => {
                    crate::analysis::preset(&name).map_err(|e| t.err(e.to_string()))?;
                    QdSpec::Preset(name)
                }
                None => {
                    let mut num = |key: &str| a.req(key).and_then(|(t, v)| parse_f64(t, &v));
                    let (g, kappa_s, gamma) = (num("g")?, num("kappa_s")?, num("gamma")?);
                    QdSpec::Params {
                        g,
                        kappa_s,
                        gamma,
                        detuning: a.num("detuning")?,
                    }
                }
            };
            if let Ok(Cavity::Params(p)) = spec.cavity() {
                p.validate().map_err(|e| head.err(e.to_string()))?;
            }
            Stmt::Qd { name: a.p(0), spec }
        }
        "input" | "inject" => {
            let kind = a.pos.first().map(|t| t.text.as_str());
            match (head.text.as_str(), kind) {
                (_, Some("photon")) => {
                    a.arity(2, "input|inject photon <name> R=<a> L=<b> <mode>=<amp>...")?;
                    let name = a.p(1);
                    let spec = parse_photon(&mut a)?;
                    if head.text == "input" {
                        Stmt::InputPhoton { name, spec }
                    } else {
                        Stmt::Inject { name, spec }
                    }
                }
                ("input", Some("spin")) => {
                    a.arity(2, "input spin <qd> up=<a> down=<b>")?;
                    let (ut, up) = a.req("up")?;
                    let (dt, down) = a.req("down")?;
                    let spec = SpinSpec::new(parse_amp(ut, &up)?, parse_amp(dt, &down)?);
                    if (spec.up.norm_sqr() + spec.down.norm_sqr() - 1.0).abs() > SPEC_TOLERANCE {
                        return Err(ut.err("spin amplitudes are not normalized"));
                    }
                    Stmt::InputSpin { qd: a.p(1), spec }
                }
                _ => {
                    return Err(head.err(format!(
                        "expected `{} photon`{}",
                        head.text,
                        if head.text == "input" { " or `input spin`" } else { "" }
                    )))
                }
            }
        }
        "stage" => {
            a.arity(2, "stage <gate|source|main> <name>")?;
            let kind = match a.pos[0].text.as_str() {
                "gate" => StageKind::Gate,
                "source" => StageKind::Source,
                "main" => StageKind::Main,
                other => return Err(a.pos[0].err(format!("unknown stage kind `{other}`"))),
            };
            Stmt::Stage { kind, name: a.p(1) }
        }
        "herald" => {
            a.arity(0, "herald silent=<sink>,...")?;
            let silent = match a.opt("silent") {
                Some((_, v)) if !v.is_empty() => v.split(',').map(str::to_string).collect(),
                _ => Vec::new(),
            };
            Stmt::Herald(silent)
        }
        "freeze" => {
            a.arity(1, "freeze <photon>")?;
            Stmt::Freeze(a.p(0))
        }
        "snapshot" => {
            a.arity(1, "snapshot <label>")?;
            Stmt::Snapshot(a.p(0))
        }
        "measure" => {
            let kind = a.pos.first().ok_or_else(|| head.err("expected `measure spin|photon|path`"))?;
            let m = match kind.text.as_str() {
                "spin" => {
                    a.arity(3, "measure spin <qd> <+|-|all> [as=<label>]")?;
                    MeasureStmt::Spin {
                        qd: a.p(1),
                        fixed: parse_fixed_sign(a.pos[2])?,
                        label: a.opt("as").map(|x| x.1).unwrap_or_else(|| "spin".into()),
                    }
                }
                "photon" => {
                    a.arity(3, "measure photon <mode> <+|-|all> plus=<sink> minus=<sink> [as=<label>]")?;
                    MeasureStmt::Photon {
                        mode: a.p(1),
                        fixed: parse_fixed_sign(a.pos[2])?,
                        plus: a.req("plus")?.1,
                        minus: a.req("minus")?.1,
                        label: a.opt("as").map(|x| x.1).unwrap_or_else(|| a.p(1)),
                    }
                }
                "path" => {
                    a.arity(4, "measure path <first> <second> <first|second|all> [as=<label>]")?;
                    let t = a.pos[3];
                    let fixed = match t.text.as_str() {
                        "all" => None,
                        "first" => Some(Path::First),
                        "second" => Some(Path::Second),
                        other => return Err(t.err(format!("expected first, second or all, got `{other}`"))),
                    };
                    MeasureStmt::Path {
                        first: a.p(1),
                        second: a.p(2),
                        fixed,
                        label: a.opt("as").map(|x| x.1).unwrap_or_else(|| "path".into()),
                    }
                }
                other => return Err(kind.err(format!("cannot measure `{other}`"))),
            };
            Stmt::Measure(m)
        }
        "if" => {
            let (ct, label, outcome) = match a.kv.first() {
                Some((t, k, v)) if toks.len() > 2 && toks[1].col == t.col => (*t, k.clone(), v.clone()),
                _ => return Err(head.err("usage: if <label>=<outcome> <element statement>")),
            };
            let outcome: Outcome = outcome.parse().map_err(|_| ct.err(format!("unknown outcome `{outcome}`")))?;
            let element = parse_element(&toks[2..])?
                .ok_or_else(|| toks[2].err(format!("`{}` is not an element", toks[2].text)))?;
            return Ok(Stmt::If { label, outcome, element });
        }
        "parity" => {
            if a.pos.len() < 3 || a.pos[1].text != "pauliz" {
                return Err(head.err("usage: parity <label> n=<N> pauliz <target...>"));
            }
            let (nt, n) = a.req("n")?;
            let n: usize = n.parse().map_err(|_| nt.err(format!("`{n}` is not a count")))?;
            Stmt::Parity {
                label: a.p(0),
                n,
                target: parse_z(&a, 2)?,
            }
        }
        other => return Err(head.err(format!("unknown keyword `{other}`"))),
    };
    a.finish()?;
    Ok(stmt)
}

/// Declaration state shared by checking and building.
#[derive(Default)]
struct Scope {
    modes: BTreeSet<String>,
    qds: BTreeMap<String, usize>,
    spins: BTreeSet<String>,
    photons: Vec<String>,
    sinks: BTreeMap<String, SinkKind>,
    labels: BTreeSet<String>,
    staged: bool,
    inputs: usize,
}

impl Scope {
    fn mode(&self, name: &str, at: (usize, usize)) -> Result<(), Error> {
        if self.modes.contains(name) {
            Ok(())
        } else {
            Err(err(at.0, at.1, format!("undeclared mode `{name}`")))
        }
    }

    fn qd(&self, name: &str, at: (usize, usize)) -> Result<usize, Error> {
        self.qds
            .get(name)
            .copied()
            .ok_or_else(|| err(at.0, at.1, format!("undeclared qd `{name}`")))
    }

    fn photon(&self, name: &str, at: (usize, usize)) -> Result<usize, Error> {
        self.photons
            .iter()
            .position(|p| p == name)
            .ok_or_else(|| err(at.0, at.1, format!("undeclared photon `{name}`")))
    }

    fn sink(&mut self, name: &str, kind: SinkKind, at: (usize, usize)) -> Result<(), Error> {
        if self.modes.contains(name) {
            return Err(err(at.0, at.1, format!("`{name}` is a mode, not a detector")));
        }
        match self.sinks.insert(name.to_string(), kind) {
            Some(k) if k != kind => Err(err(at.0, at.1, format!("sink `{name}` used with two different roles"))),
            _ => Ok(()),
        }
    }

    fn element(&mut self, e: &ElementStmt, at: (usize, usize)) -> Result<(), Error> {
        for m in e.modes_in().into_iter().chain(e.modes_out()) {
            self.mode(m, at)?;
        }
        for list in [e.modes_in(), e.modes_out()] {
            for (i, m) in list.iter().enumerate() {
                if list[..i].contains(m) {
                    return Err(err(at.0, at.1, format!("duplicate mode write `{m}`")));
                }
            }
        }
        match e {
            ElementStmt::Vbs { sink, qd, transmission, .. } => {
                self.sink(sink, SinkKind::VbsReflection, at)?;
                match qd {
                    Some(q) => {
                        self.qd(q, at)?;
                    }
                    None if transmission.is_none() && self.qds.len() != 1 => {
                        return Err(err(at.0, at.1, "vbs needs `T=` or `qd=` when the circuit has several QDs"));
                    }
                    None if transmission.is_none() && self.qds.is_empty() => {
                        return Err(err(at.0, at.1, "vbs needs `T=` when no qd is declared"));
                    }
                    None => {}
                }
            }
            ElementStmt::Detector { sink, .. } => self.sink(sink, SinkKind::Detector, at)?,
            ElementStmt::QdScatter { qd, .. } | ElementStmt::SpinFlip { qd } | ElementStmt::PauliZ(ZStmt::Spin { qd }) => {
                self.qd(qd, at)?;
            }
            ElementStmt::PauliZ(ZStmt::Polarization { photon }) | ElementStmt::PauliZ(ZStmt::Spatial { photon, .. }) => {
                self.photon(photon, at)?;
            }
            _ => {}
        }
        Ok(())
    }

    fn check(&mut self, s: &Stmt, at: (usize, usize)) -> Result<(), Error> {
        match s {
            Stmt::Mode(names) => {
                for n in names {
                    if self.sinks.contains_key(n) {
                        return Err(err(at.0, at.1, format!("`{n}` is already a detector")));
                    }
                    self.modes.insert(n.clone());
                }
            }
            Stmt::Qd { name, .. } => {
                if self.qds.contains_key(name) {
                    return Err(err(at.0, at.1, format!("qd `{name}` declared twice")));
                }
                let i = self.qds.len();
                self.qds.insert(name.clone(), i);
                self.sink(&loss_sink_name(name), SinkKind::CavityLoss, at)?;
            }
            Stmt::InputPhoton { name, spec } | Stmt::Inject { name, spec } => {
                if matches!(s, Stmt::InputPhoton { .. }) {
                    if self.staged {
                        return Err(err(at.0, at.1, "input statements must precede the first stage"));
                    }
                    self.inputs += 1;
                }
                if self.photons.contains(name) {
                    return Err(err(at.0, at.1, format!("photon `{name}` declared twice")));
                }
                for (m, _) in &spec.modes {
                    self.mode(m, at)?;
                }
                self.photons.push(name.clone());
            }
            Stmt::InputSpin { qd, .. } => {
                if self.staged {
                    return Err(err(at.0, at.1, "input statements must precede the first stage"));
                }
                self.qd(qd, at)?;
                if !self.spins.insert(qd.clone()) {
                    return Err(err(at.0, at.1, format!("spin of `{qd}` given twice")));
                }
                self.inputs += 1;
            }
            Stmt::Stage { .. } => self.staged = true,
            Stmt::Element(e) => {
                self.staged = true;
                self.element(e, at)?;
            }
            Stmt::If { label, element, .. } => {
                self.staged = true;
                if !self.labels.contains(label) {
                    return Err(err(at.0, at.1, format!("no earlier measurement labelled `{label}`")));
                }
                self.element(element, at)?;
            }
            Stmt::Parity { label, target, .. } => {
                self.staged = true;
                if !self.labels.contains(label) {
                    return Err(err(at.0, at.1, format!("no earlier measurement labelled `{label}`")));
                }
                self.element(&ElementStmt::PauliZ(target.clone()), at)?;
            }
            Stmt::Measure(m) => {
                self.staged = true;
                match m {
                    MeasureStmt::Spin { qd, .. } => {
                        self.qd(qd, at)?;
                    }
                    MeasureStmt::Photon { mode, plus, minus, .. } => {
                        self.mode(mode, at)?;
                        self.sink(plus, SinkKind::Measurement, at)?;
                        self.sink(minus, SinkKind::Measurement, at)?;
                    }
                    MeasureStmt::Path { first, second, .. } => {
                        self.mode(first, at)?;
                        self.mode(second, at)?;
                        if first == second {
                            return Err(err(at.0, at.1, format!("duplicate mode write `{first}`")));
                        }
                    }
                }
                self.labels.insert(m.label().to_string());
            }
            Stmt::Herald(silent) => {
                self.staged = true;
                for s in silent {
                    if !self.sinks.contains_key(s) {
                        return Err(err(at.0, at.1, format!("undeclared detector `{s}`")));
                    }
                }
            }
            Stmt::Freeze(p) => {
                self.photon(p, at)?;
            }
            Stmt::Snapshot(_) => {}
        }
        Ok(())
    }
}

/// Parses `text`. Every line either parses or contributes a positioned
/// error; declarations are checked in order.
pub fn parse_netlist(text: &str) -> Result<Netlist, ParseErrors> {
    let mut errors = Vec::new();
    let lines = expand(lex(text), &mut errors);
    let mut statements = Vec::new();
    let mut positions = Vec::new();
    let mut scope = Scope::default();
    for line in &lines {
        let at = (line.toks[0].line, line.toks[0].col);
        match parse_stmt(&line.toks) {
            Ok(s) => {
                if let Err(e) = scope.check(&s, at) {
                    errors.push(e);
                }
                statements.push(s);
                positions.push(at);
            }
            Err(e) => errors.push(e),
        }
    }
    if errors.is_empty() {
        let end = text.lines().count().max(1);
        if scope.inputs == 0 {
            errors.push(err(1, 1, "missing input statement"));
        }
        for q in scope.qds.keys() {
            if !scope.spins.contains(q) {
                errors.push(err(end, 1, format!("qd `{q}` has no `input spin` statement")));
            }
        }
    }
    errors.sort_by_key(|e| match e {
        Error::Netlist { line, column, .. } => (*line, *column),
        _ => (0, 0),
    });
    if errors.is_empty() {
        Ok(Netlist { statements, positions })
    } else {
        Err(ParseErrors(errors))
    }
}

fn z_target(scope: &Scope, z: &ZStmt, at: (usize, usize)) -> Result<ZTarget, Error> {
    Ok(match z {
        ZStmt::Polarization { photon } => ZTarget::Polarization {
            photon: scope.photon(photon, at)?,
        },
        ZStmt::Spatial { photon, mode } => ZTarget::Spatial {
            photon: scope.photon(photon, at)?,
            second: mode.clone(),
        },
        ZStmt::Spin { qd } => ZTarget::Spin { qd: scope.qd(qd, at)? },
    })
}

impl Netlist {
    /// Compiles to a runnable protocol. `cavity` replaces every declared
    /// QD-cavity; `vbs` replaces every computed VBS transmission.
    pub fn to_protocol(&self, cavity: Option<&Cavity>, vbs: Option<f64>) -> crate::Result<Protocol> {
        let mut b = CircuitBuilder::new();
        let mut scope = Scope::default();
        for (s, &at) in self.statements.iter().zip(&self.positions) {
            let pos = |e: Error| match e {
                Error::Netlist { .. } => e,
                other => err(at.0, at.1, other.to_string()),
            };
            scope.check(s, at)?;
            match s {
                Stmt::Mode(names) => {
                    for n in names {
                        b.mode(n);
                    }
                }
                Stmt::Qd { name, spec } => {
                    let c = match cavity {
                        Some(c) => *c,
                        None => spec.cavity().map_err(pos)?,
                    };
                    b.qd(name, c.coefficients().map_err(pos)?).map_err(pos)?;
                }
                Stmt::InputPhoton { name, spec } => {
                    b.input_photon(name, spec.clone()).map_err(pos)?;
                }
                Stmt::InputSpin { qd, spec } => {
                    let i = scope.qd(qd, at)?;
                    b.input_spin(i, *spec).map_err(pos)?;
                }
                Stmt::Stage { kind, name } => {
                    b.stage(name, *kind);
                }
                Stmt::Inject { name, spec } => {
                    b.inject(name, spec.clone()).map_err(pos)?;
                }
                Stmt::Element(e) => {
                    let e = self.element(&b, &scope, e, at, vbs)?;
                    b.element(e).map_err(pos)?;
                }
                Stmt::If { label, outcome, element } => {
                    let e = self.element(&b, &scope, element, at, vbs)?;
                    b.conditional(label, *outcome, e).map_err(pos)?;
                }
                Stmt::Parity { label, n, target } => {
                    b.parity(label, *n, z_target(&scope, target, at)?).map_err(pos)?;
                }
                Stmt::Measure(m) => match m {
                    MeasureStmt::Spin { qd, fixed, label } => {
                        b.measure_spin(scope.qd(qd, at)?, label, *fixed).map_err(pos)?;
                    }
                    MeasureStmt::Photon {
                        mode,
                        fixed,
                        plus,
                        minus,
                        label,
                    } => b.measure_photon(mode, plus, minus, label, *fixed).map_err(pos)?,
                    MeasureStmt::Path {
                        first,
                        second,
                        fixed,
                        label,
                    } => b.measure_path(first, second, label, *fixed).map_err(pos)?,
                },
                Stmt::Herald(silent) => {
                    let names: Vec<&str> = silent.iter().map(String::as_str).collect();
                    b.herald(&names).map_err(pos)?;
                }
                Stmt::Freeze(p) => b.freeze(scope.photon(p, at)?).map_err(pos)?,
                Stmt::Snapshot(label) => b.snapshot(label),
            }
        }
        b.build()
    }

    fn element(
        &self,
        b: &CircuitBuilder,
        scope: &Scope,
        e: &ElementStmt,
        at: (usize, usize),
        vbs: Option<f64>,
    ) -> crate::Result<Element> {
        let pos = |e: Error| err(at.0, at.1, e.to_string());
        Ok(match e {
            ElementStmt::Pbs {
                in1,
                in2,
                transmit,
                reflect,
            } => Element::Pbs {
                in1: in1.clone(),
                in2: in2.clone(),
                transmit: transmit.clone(),
                reflect: reflect.clone(),
            },
            ElementStmt::Bs { m1, m2, o1, o2, rotated } => Element::Bs {
                m1: m1.clone(),
                m2: m2.clone(),
                o1: o1.clone(),
                o2: o2.clone(),
                rotated: *rotated,
            },
            ElementStmt::Hwp { mode, angle } => Element::Hwp {
                mode: mode.clone(),
                angle: *angle,
            },
            ElementStmt::Vbs {
                input,
                output,
                sink,
                transmission,
                qd,
            } => {
                let computed = |q: usize| b.coefficients(q).and_then(|c| vbs_transmission(&c)).map_err(pos);
                let t = match (transmission, qd) {
                    (Some(t), _) => *t,
                    (None, Some(q)) => {
                        let t = computed(scope.qd(q, at)?)?;
                        vbs.unwrap_or(t)
                    }
                    (None, None) => {
                        let t = computed(0)?;
                        vbs.unwrap_or(t)
                    }
                };
                Element::Vbs {
                    input: input.clone(),
                    transmit: output.clone(),
                    sink: sink.clone(),
                    transmission: t,
                }
            }
            ElementStmt::QdScatter { qd, top, bottom } => {
                let q = scope.qd(qd, at)?;
                Element::QdScatter {
                    qd: q,
                    top: top.clone(),
                    bottom: bottom.clone(),
                    coeffs: b.coefficients(q).map_err(pos)?,
                }
            }
            ElementStmt::Mirror { input, output } => Element::Mirror {
                input: input.clone(),
                output: output.clone(),
            },
            ElementStmt::Detector { mode, sink } => Element::Detector {
                mode: mode.clone(),
                sink: sink.clone(),
            },
            ElementStmt::SpinFlip { qd } => Element::SpinFlip { qd: scope.qd(qd, at)? },
            ElementStmt::PauliZ(z) => Element::PauliZ(z_target(scope, z, at)?),
        })
    }
}

impl fmt::Display for ZStmt {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ZStmt::Polarization { photon } => write!(f, "polarization {photon}"),
            ZStmt::Spatial { photon, mode } => write!(f, "spatial {photon} {mode}"),
            ZStmt::Spin { qd } => write!(f, "spin {qd}"),
        }
    }
}

impl fmt::Display for ElementStmt {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ElementStmt::Pbs {
                in1,
                in2,
                transmit,
                reflect,
            } => write!(f, "pbs {in1} {in2} {transmit} {reflect}"),
            ElementStmt::Bs { m1, m2, o1, o2, rotated } => {
                write!(f, "bs {m1} {m2} {o1} {o2}{}", if *rotated { " rotated" } else { "" })
            }
            ElementStmt::Hwp { mode, angle } => write!(f, "hwp {mode} {}", angle.degrees()),
            ElementStmt::Vbs {
                input,
                output,
                sink,
                transmission,
                qd,
            } => {
                write!(f, "vbs {input} {output} {sink}")?;
                if let Some(t) = transmission {
                    write!(f, " T={t}")?;
                }
                if let Some(q) = qd {
                    write!(f, " qd={q}")?;
                }
                Ok(())
            }
            ElementStmt::QdScatter { qd, top, bottom } => write!(f, "qdscatter {qd} {top} {bottom}"),
            ElementStmt::Mirror { input, output } => write!(f, "mirror {input} {output}"),
            ElementStmt::Detector { mode, sink } => write!(f, "detector {mode} {sink}"),
            ElementStmt::SpinFlip { qd } => write!(f, "spinflip {qd}"),
            ElementStmt::PauliZ(z) => write!(f, "pauliz {z}"),
        }
    }
}

fn photon_fields(spec: &PhotonSpec) -> String {
    let mut s = format!("R={} L={}", fmt_amp(spec.polarization.0), fmt_amp(spec.polarization.1));
    for (m, a) in &spec.modes {
        let _ = write!(s, " {m}={}", fmt_amp(*a));
    }
    s
}

fn sign_token(s: Option<Sign>) -> &'static str {
    match s {
        None => "all",
        Some(Sign::Plus) => "+",
        Some(Sign::Minus) => "-",
    }
}

impl fmt::Display for Stmt {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Stmt::Mode(names) => write!(f, "mode {}", names.join(" ")),
            Stmt::Qd { name, spec } => match spec {
                QdSpec::Params {
                    g,
                    kappa_s,
                    gamma,
                    detuning,
                } => {
                    write!(f, "qd {name} g={g} kappa_s={kappa_s} gamma={gamma}")?;
                    if let Some(d) = detuning {
                        write!(f, " detuning={d}")?;
                    }
                    Ok(())
                }
                QdSpec::Preset(p) => write!(f, "qd {name} preset={p}"),
            },
            Stmt::InputPhoton { name, spec } => write!(f, "input photon {name} {}", photon_fields(spec)),
            Stmt::InputSpin { qd, spec } => {
                write!(f, "input spin {qd} up={} down={}", fmt_amp(spec.up), fmt_amp(spec.down))
            }
            Stmt::Stage { kind, name } => write!(f, "stage {kind} {name}"),
            Stmt::Inject { name, spec } => write!(f, "inject photon {name} {}", photon_fields(spec)),
            Stmt::Element(e) => write!(f, "{e}"),
            Stmt::If { label, outcome, element } => write!(f, "if {label}={outcome} {element}"),
            Stmt::Parity { label, n, target } => write!(f, "parity {label} n={n} pauliz {target}"),
            Stmt::Measure(m) => match m {
                MeasureStmt::Spin { qd, fixed, label } => {
                    write!(f, "measure spin {qd} {} as={label}", sign_token(*fixed))
                }
                MeasureStmt::Photon {
                    mode,
                    fixed,
                    plus,
                    minus,
                    label,
                } => write!(
                    f,
                    "measure photon {mode} {} plus={plus} minus={minus} as={label}",
                    sign_token(*fixed)
                ),
                MeasureStmt::Path {
                    first,
                    second,
                    fixed,
                    label,
                } => {
                    let t = match fixed {
                        None => "all",
                        Some(Path::First) => "first",
                        Some(Path::Second) => "second",
                    };
                    write!(f, "measure path {first} {second} {t} as={label}")
                }
            },
            Stmt::Herald(s) => write!(f, "herald silent={}", s.join(",")),
            Stmt::Freeze(p) => write!(f, "freeze {p}"),
            Stmt::Snapshot(l) => write!(f, "snapshot {l}"),
        }
    }
}

/// Canonical text, one statement per line, macros expanded.
impl fmt::Display for Netlist {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for s in &self.statements {
            writeln!(f, "{s}")?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn first_error(text: &str) -> (usize, usize, String) {
        match parse_netlist(text).unwrap_err().0.remove(0) {
            Error::Netlist { line, column, message } => (line, column, message),
            other => panic!("{other:?}"),
        }
    }

    const SMALL: &str = "\
mode a b c d
qd q g=2.4 kappa_s=0.05 gamma=0.1
input photon p R=1 L=0 a=1
input spin q up=1 down=0
def split x y
  pbs {x} {y} c d
end
call split a b
detector d D1
herald silent=D1
";

    #[test]
    fn empty_file_needs_input() {
        let (line, col, msg) = first_error("");
        assert_eq!((line, col), (1, 1));
        assert_eq!(msg, "missing input statement");
    }

    #[test]
    fn arity_error_is_positioned() {
        let (line, col, msg) = first_error("mode a b c\nbs a b c\n");
        assert_eq!((line, col), (2, 1));
        assert!(msg.contains("arity"), "{msg}");
    }

    #[test]
    fn undeclared_and_unknown() {
        let (line, _, msg) = first_error("mode a\ninput photon p R=1 L=0 a=1\npbs a z a b\n");
        assert_eq!(line, 3);
        assert!(msg.contains("undeclared mode"), "{msg}");
        let (line, col, msg) = first_error("mode a\n  frobnicate a\n");
        assert_eq!((line, col), (2, 3));
        assert!(msg.contains("unknown keyword"));
    }

    #[test]
    fn duplicate_write_is_rejected() {
        let (_, _, msg) = first_error("mode a b c\ninput photon p R=1 L=0 a=1\npbs a b c c\n");
        assert!(msg.contains("duplicate mode write"), "{msg}");
    }

    #[test]
    fn every_bad_line_is_reported() {
        let e = parse_netlist("mode a\nbs a\nhwp a 30\nfoo\n").unwrap_err();
        let lines: Vec<usize> = e
            .0
            .iter()
            .map(|x| match x {
                Error::Netlist { line, .. } => *line,
                _ => 0,
            })
            .collect();
        assert_eq!(lines, vec![2, 3, 4]);
    }

    #[test]
    fn macros_expand_and_round_trip() {
        let n = parse_netlist(SMALL).unwrap();
        assert!(n.statements.contains(&Stmt::Element(ElementStmt::Pbs {
            in1: "a".into(),
            in2: "b".into(),
            transmit: "c".into(),
            reflect: "d".into(),
        })));
        let again = parse_netlist(&n.to_string()).unwrap();
        assert_eq!(n, again);
        let p = n.to_protocol(None, None).unwrap();
        assert_eq!(p.photon_names, vec!["p".to_string()]);
    }

    #[test]
    fn macro_arity_is_checked() {
        let (line, _, msg) = first_error("def m x\nmode {x}\nend\ncall m a b\n");
        assert_eq!(line, 4);
        assert!(msg.contains("arity"));
    }

    #[test]
    fn complex_amplitudes_parse() {
        let n = parse_netlist("mode a b\ninput photon p R=0.6,0.0 L=0,0.8 a=0.6 b=0,-0.8\n").unwrap();
        let Stmt::InputPhoton { spec, .. } = &n.statements[1] else { panic!() };
        assert_eq!(spec.polarization.1, C64::new(0.0, 0.8));
        assert!(parse_netlist("mode a\ninput photon p R=1 L=1 a=1\n").is_err());
    }
}
