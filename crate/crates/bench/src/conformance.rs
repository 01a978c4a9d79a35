//! Protocol conformance: exercise everything an endpoint advertises and
//! report pass, fail or skip per clause.

use std::fmt;
use std::io::{BufRead, Write};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use volprompt_core::io::{rle_encode, write_nifti, RleMask};
use volprompt_core::morphology::bounding_box_3d;
use volprompt_core::oracles::{generate_synthetic_case, SyntheticCaseSpec};
use volprompt_core::prompt::{Mode, Prompt, PromptKind};
use volprompt_core::segmenter::{Capabilities, CaseData, PredictRequest, Scope};
use volprompt_core::wire::{ErrorCode, ImageRef, InlineVolume, ReferenceMasks, Request, Response, WireClient};
use volprompt_core::{Axis, BinaryMask, Dims, Error as CoreError, Segmenter};

use crate::error::Result;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    Pass,
    Fail,
    Skip,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClauseResult {
    pub clause: String,
    pub status: Status,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConformanceReport {
    pub endpoint: String,
    pub capabilities: Capabilities,
    pub clauses: Vec<ClauseResult>,
}

impl ConformanceReport {
    pub fn passed(&self) -> bool {
        self.clauses.iter().all(|c| c.status != Status::Fail)
    }

    pub fn status(&self, clause: &str) -> Option<Status> {
        self.clauses.iter().find(|c| c.clause == clause).map(|c| c.status)
    }
}

impl fmt::Display for ConformanceReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "endpoint: {}", self.endpoint)?;
        for c in &self.clauses {
            let s = match c.status {
                Status::Pass => "PASS",
                Status::Fail => "FAIL",
                Status::Skip => "SKIP",
            };
            writeln!(f, "{s}  {:<24} {}", c.clause, c.detail)?;
        }
        write!(f, "{}", if self.passed() { "conformant" } else { "NOT conformant" })
    }
}

struct Probe {
    dims: Dims,
    volume: Arc<volprompt_core::Volume>,
    truth: BinaryMask,
    center: [usize; 3],
    bbox: ([usize; 3], [usize; 3]),
}

fn probe_case() -> Probe {
    let spec = SyntheticCaseSpec {
        dims: Dims::new(20, 18, 12),
        instances: 1,
        radius_range: [3, 4],
        contrast: 200.0,
        noise_sigma: 1.0,
        background: 100.0,
        seed: 5,
    };
    let case = generate_synthetic_case(&spec).expect("probe case fits");
    let truth = case.instances[0].clone();
    let bbox = bounding_box_3d(&truth).expect("non-empty");
    let center = std::array::from_fn(|a| (bbox.0[a] + bbox.1[a]) / 2);
    Probe {
        dims: spec.dims,
        volume: Arc::new(case.volume),
        truth,
        center,
        bbox,
    }
}

#[derive(Default)]
struct Clauses(Vec<ClauseResult>);

impl Clauses {
    fn push(&mut self, clause: &str, status: Status, detail: impl Into<String>) {
        self.0.push(ClauseResult {
            clause: clause.to_string(),
            status,
            detail: detail.into(),
        });
    }

    fn check(&mut self, clause: &str, ok: bool, detail: impl Into<String>) {
        self.push(clause, if ok { Status::Pass } else { Status::Fail }, detail);
    }
}

fn describe(r: &std::result::Result<Response, CoreError>) -> String {
    match r {
        Ok(Response::Mask { mask }) => format!("mask {:?}", mask.dims),
        Ok(Response::Error { code, message }) => format!("error {code:?}: {message}"),
        Ok(other) => format!("{other:?}"),
        Err(e) => format!("transport: {e}"),
    }
}

/// Prompts of one kind for the probe, on the median slice in 2D.
fn prompts_of(kind: PromptKind, mode: Mode, p: &Probe) -> Vec<Prompt> {
    let c = p.center;
    let (lo, hi) = p.bbox;
    match (kind, mode) {
        (PromptKind::PosPoint, _) => vec![Prompt::pos(c)],
        (PromptKind::NegPoint, _) => vec![Prompt::pos(c), Prompt::neg([0, 0, c[2]])],
        (PromptKind::Box2d, _) => vec![Prompt::box2d(c[2], [lo[0], lo[1]], [hi[0], hi[1]])],
        (PromptKind::Box3d, _) => vec![Prompt::box3d(lo, hi)],
        _ => Vec::new(),
    }
}

fn mode_kinds(mode: Mode) -> [PromptKind; 3] {
    match mode {
        Mode::TwoD => [PromptKind::PosPoint, PromptKind::NegPoint, PromptKind::Box2d],
        Mode::ThreeD => [PromptKind::PosPoint, PromptKind::NegPoint, PromptKind::Box3d],
    }
}

fn scope_for(mode: Mode, p: &Probe) -> Scope {
    match mode {
        Mode::TwoD => Scope::axial(p.center[2]),
        Mode::ThreeD => Scope::Volume,
    }
}

fn predict_line(session: &str, scope: Scope, prompts: Vec<Prompt>, prev: Option<RleMask>) -> Request {
    Request::Predict {
        session_id: session.to_string(),
        scope,
        prompts,
        prev_mask: prev,
    }
}

/// Run every clause against a connected endpoint.
pub fn run_conformance<R, W>(client: &mut WireClient<R, W>, endpoint: &str) -> Result<ConformanceReport>
where
    R: BufRead + Send,
    W: Write + Send,
{
    let caps = client.capabilities();
    let p = probe_case();
    let mut out = Clauses::default();
    let mut masks: Vec<(Scope, RleMask)> = Vec::new();

    // HELLO
    let hello = client.request(&Request::Hello { protocol: volprompt_core::wire::PROTOCOL_VERSION });
    out.check(
        "HELLO",
        matches!(&hello, Ok(Response::Capabilities { protocol, .. }) if *protocol == volprompt_core::wire::PROTOCOL_VERSION),
        describe(&hello),
    );

    let reference = caps.wants_reference.then(|| ReferenceMasks {
        instances: vec![rle_encode(&p.truth)],
    });

    // OPEN_CASE (inline image)
    let opened = client.request(&Request::OpenCase {
        case_id: "probe".into(),
        image: ImageRef::Inline(InlineVolume::from_volume(&p.volume)),
        reference: reference.clone(),
    });
    let session = match &opened {
        Ok(Response::Ack { session_id: Some(id) }) => Some(id.clone()),
        _ => None,
    };
    out.check("OPEN_CASE", session.is_some(), describe(&opened));

    // OPEN_CASE_PATH
    let dir = tempfile::tempdir().map_err(|e| crate::error::BenchError::io("<tempdir>", e))?;
    let image_path = dir.path().join("probe.nii.gz");
    write_nifti(&p.volume, &image_path)?;
    let by_path = client.request(&Request::OpenCase {
        case_id: "probe-path".into(),
        image: ImageRef::Path(image_path),
        reference,
    });
    match &by_path {
        Ok(Response::Ack { session_id: Some(id) }) => {
            let _ = client.request(&Request::Close { session_id: id.clone() });
            out.push("OPEN_CASE_PATH", Status::Pass, describe(&by_path));
        }
        _ => out.push("OPEN_CASE_PATH", Status::Fail, describe(&by_path)),
    }

    let Some(session) = session else {
        for c in ["SCOPE_SLICE", "SCOPE_VOLUME", "PROMPT_KINDS", "PREV_MASK", "ORDERED", "CLOSE"] {
            out.push(c, Status::Fail, "no session could be opened");
        }
        return Ok(finish(out, masks, endpoint, caps, &p, client));
    };

    // SCOPE_SLICE / SCOPE_VOLUME
    for (clause, mode) in [("SCOPE_SLICE", Mode::TwoD), ("SCOPE_VOLUME", Mode::ThreeD)] {
        if !caps.supports_mode(mode) {
            out.push(clause, Status::Skip, format!("{mode} not advertised"));
            continue;
        }
        let Some(kind) = mode_kinds(mode).into_iter().find(|k| caps.accepts(*k)) else {
            out.push(clause, Status::Skip, "no usable prompt kind advertised");
            continue;
        };
        let scope = scope_for(mode, &p);
        let r = client.request(&predict_line(&session, scope, prompts_of(kind, mode, &p), None));
        if let Ok(Response::Mask { mask }) = &r {
            masks.push((scope, mask.clone()));
        }
        out.check(clause, matches!(r, Ok(Response::Mask { .. })), describe(&r));
    }

    // PROMPT_KINDS
    let mut tried = 0;
    let mut bad = Vec::new();
    for mode in [Mode::TwoD, Mode::ThreeD].into_iter().filter(|m| caps.supports_mode(*m)) {
        for kind in mode_kinds(mode).into_iter().filter(|k| caps.accepts(*k)) {
            let prompts = prompts_of(kind, mode, &p);
            if prompts.iter().any(|q| !caps.accepts(q.kind())) {
                continue;
            }
            tried += 1;
            let scope = scope_for(mode, &p);
            match client.request(&predict_line(&session, scope, prompts, None)) {
                Ok(Response::Mask { mask }) => masks.push((scope, mask)),
                other => bad.push(format!("{kind:?} in {mode}: {}", describe(&other))),
            }
        }
    }
    if tried == 0 {
        out.push("PROMPT_KINDS", Status::Skip, "no advertised prompt kinds");
    } else {
        out.check("PROMPT_KINDS", bad.is_empty(), if bad.is_empty() { format!("{tried} kinds accepted") } else { bad.join("; ") });
    }

    // PREV_MASK
    if !caps.accepts_mask_prompt {
        out.push("PREV_MASK", Status::Skip, "accepts_mask_prompt not advertised");
    } else if let Some((scope, prev)) = masks.first().cloned() {
        let mode = if scope == Scope::Volume { Mode::ThreeD } else { Mode::TwoD };
        let kind = mode_kinds(mode).into_iter().find(|k| caps.accepts(*k)).unwrap_or(PromptKind::PosPoint);
        let r = client.request(&predict_line(&session, scope, prompts_of(kind, mode, &p), Some(prev)));
        if let Ok(Response::Mask { mask }) = &r {
            masks.push((scope, mask.clone()));
        }
        out.check("PREV_MASK", matches!(r, Ok(Response::Mask { .. })), describe(&r));
    } else {
        out.push("PREV_MASK", Status::Fail, "no earlier mask to send back");
    }

    // ORDERED: pipelined requests answered in order
    let usable = [Mode::TwoD, Mode::ThreeD]
        .into_iter()
        .filter(|m| caps.supports_mode(*m))
        .find_map(|m| mode_kinds(m).into_iter().find(|k| caps.accepts(*k)).map(|k| (m, k)));
    match usable {
        Some((mode, kind)) => {
            let lines: Vec<String> = [
                Request::Hello { protocol: volprompt_core::wire::PROTOCOL_VERSION },
                predict_line(&session, scope_for(mode, &p), prompts_of(kind, mode, &p), None),
                predict_line("no-such-session", scope_for(mode, &p), prompts_of(kind, mode, &p), None),
                Request::Hello { protocol: volprompt_core::wire::PROTOCOL_VERSION },
            ]
            .iter()
            .map(|r| serde_json::to_string(r).expect("serializable"))
            .collect();
            match client.pipeline(&lines) {
                Ok(rs) => {
                    let ok = matches!(
                        rs.as_slice(),
                        [Response::Capabilities { .. }, Response::Mask { .. }, Response::Error { .. }, Response::Capabilities { .. }]
                    );
                    if let Some(Response::Mask { mask }) = rs.get(1) {
                        masks.push((scope_for(mode, &p), mask.clone()));
                    }
                    let kinds: Vec<&str> = rs
                        .iter()
                        .map(|r| match r {
                            Response::Capabilities { .. } => "capabilities",
                            Response::Ack { .. } => "ack",
                            Response::Mask { .. } => "mask",
                            Response::Error { .. } => "error",
                        })
                        .collect();
                    out.check("ORDERED", ok, kinds.join(","));
                }
                Err(e) => out.push("ORDERED", Status::Fail, e.to_string()),
            }
        }
        None => out.push("ORDERED", Status::Skip, "no usable prompt kind advertised"),
    }

    // ERROR_UNKNOWN_SESSION
    let r = client.request(&predict_line("no-such-session", Scope::Volume, vec![Prompt::pos(p.center)], None));
    out.check(
        "ERROR_UNKNOWN_SESSION",
        matches!(r, Ok(Response::Error { code: ErrorCode::UnknownSession, .. })),
        describe(&r),
    );

    // ERROR_BAD_REQUEST: unparseable line and an out-of-range scope
    let garbage = client.send_raw("{not json");
    let out_of_range = client.request(&predict_line(
        &session,
        Scope::Slice { axis: Axis::Z, idx: p.dims.nz + 3 },
        vec![Prompt::pos(p.center)],
        None,
    ));
    out.check(
        "ERROR_BAD_REQUEST",
        matches!(garbage, Ok(Response::Error { code: ErrorCode::BadRequest, .. }))
            && matches!(out_of_range, Ok(Response::Error { code: ErrorCode::BadRequest, .. })),
        format!("{}; {}", describe(&garbage), describe(&out_of_range)),
    );

    // CLOSE
    let closed = client.request(&Request::Close { session_id: session.clone() });
    let after = client.request(&predict_line(&session, Scope::Volume, vec![Prompt::pos(p.center)], None));
    out.check(
        "CLOSE",
        matches!(closed, Ok(Response::Ack { .. }))
            && matches!(after, Ok(Response::Error { code: ErrorCode::UnknownSession, .. })),
        format!("{}; then {}", describe(&closed), describe(&after)),
    );

    Ok(finish(out, masks, endpoint, caps, &p, client))
}

fn finish<R: BufRead + Send, W: Write + Send>(
    mut out: Clauses,
    masks: Vec<(Scope, RleMask)>,
    endpoint: &str,
    caps: Capabilities,
    p: &Probe,
    client: &mut WireClient<R, W>,
) -> ConformanceReport {
    // MASK_DIMS and RLE_VALID over every mask received
    if masks.is_empty() {
        out.push("MASK_DIMS", Status::Skip, "no masks received");
        out.push("RLE_VALID", Status::Skip, "no masks received");
    } else {
        let wrong: Vec<String> = masks
            .iter()
            .filter(|(s, m)| m.dims != s.mask_dims(p.dims))
            .map(|(s, m)| format!("{s:?}: got {:?}, want {:?}", m.dims, s.mask_dims(p.dims)))
            .collect();
        out.check(
            "MASK_DIMS",
            wrong.is_empty(),
            if wrong.is_empty() { format!("{} masks", masks.len()) } else { wrong.join("; ") },
        );
        let invalid: Vec<String> = masks.iter().filter_map(|(_, m)| m.validate().err().map(|e| e.to_string())).collect();
        out.check(
            "RLE_VALID",
            invalid.is_empty(),
            if invalid.is_empty() { format!("{} masks", masks.len()) } else { invalid.join("; ") },
        );
    }

    // CLIENT_CAPABILITY_GUARD: the client must refuse locally whatever the
    // endpoint did not advertise, and stay in sync afterwards
    let mut refused = 0;
    let mut leaked = Vec::new();
    for mode in [Mode::TwoD, Mode::ThreeD] {
        let kinds: Vec<PromptKind> = if caps.supports_mode(mode) {
            mode_kinds(mode).into_iter().filter(|k| !caps.accepts(*k)).collect()
        } else {
            vec![mode_kinds(mode)[0]]
        };
        for kind in kinds {
            let req = PredictRequest {
                scope: scope_for(mode, p),
                prompts: prompts_of(kind, mode, p),
                prev_mask: None,
            };
            match Segmenter::predict(client, "guard", &req) {
                Err(CoreError::CapabilityMissing(_)) => refused += 1,
                other => leaked.push(format!("{kind:?} in {mode}: {:?}", other.map(|m| m.dims()))),
            }
        }
    }
    if !caps.accepts_mask_prompt {
        let req = PredictRequest {
            scope: Scope::Volume,
            prompts: Vec::new(),
            prev_mask: Some(BinaryMask::empty(p.dims)),
        };
        match Segmenter::predict(client, "guard", &req) {
            Err(CoreError::CapabilityMissing(_)) => refused += 1,
            other => leaked.push(format!("prev_mask: {:?}", other.map(|m| m.dims()))),
        }
    }
    let in_sync = matches!(
        client.request(&Request::Hello { protocol: volprompt_core::wire::PROTOCOL_VERSION }),
        Ok(Response::Capabilities { .. })
    );
    if refused == 0 && leaked.is_empty() {
        out.push("CLIENT_CAPABILITY_GUARD", Status::Pass, "everything advertised; nothing to guard");
    } else {
        out.check(
            "CLIENT_CAPABILITY_GUARD",
            leaked.is_empty() && in_sync,
            if leaked.is_empty() { format!("{refused} unadvertised requests refused locally") } else { leaked.join("; ") },
        );
    }

    ConformanceReport {
        endpoint: endpoint.to_string(),
        capabilities: caps,
        clauses: out.0,
    }
}

/// Open the probe case through the [`Segmenter`] interface; used by
/// callers that want a quick smoke check rather than the clause list.
pub fn smoke<S: Segmenter>(seg: &mut S) -> volprompt_core::Result<BinaryMask> {
    let p = probe_case();
    let caps = seg.capabilities();
    let data = CaseData {
        case_id: "probe".into(),
        volume: p.volume.clone(),
        image_path: None,
        reference: caps.wants_reference.then(|| Arc::new(vec![p.truth.clone()])),
    };
    let id = seg.open_case(&data)?;
    let mode = if caps.supports_3d { Mode::ThreeD } else { Mode::TwoD };
    let kind = mode_kinds(mode).into_iter().find(|k| caps.accepts(*k)).unwrap_or(PromptKind::PosPoint);
    let mask = seg.predict(
        &id,
        &PredictRequest {
            scope: scope_for(mode, &p),
            prompts: prompts_of(kind, mode, &p),
            prev_mask: None,
        },
    )?;
    seg.close_case(&id)?;
    Ok(mask)
}
