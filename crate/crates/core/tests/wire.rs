use std::io::{BufReader, Write};
use std::sync::Arc;
use std::thread;

use volprompt_core::io::{read_nifti, rle_decode, rle_encode, write_nifti, RleMask};
use volprompt_core::oracles::{ellipsoid, OracleSegmenter, OracleSpec};
use volprompt_core::wire::{serve, ErrorCode, Request, Response, Server, WireClient};
use volprompt_core::{
    BinaryMask, CaseData, Dims, Mode, PredictRequest, Prompt, Scope, SeededRng, Segmenter, Volume, VoxelData,
};

fn probe() -> (Arc<Volume>, BinaryMask) {
    let dims = Dims::new(16, 14, 10);
    let gt = ellipsoid(dims, [8, 7, 5], [4, 3, 3]);
    let data = gt.bits().iter().map(|&b| if b { 300.0 } else { 100.0 }).collect();
    (Arc::new(Volume::new(dims, [1.0, 1.0, 2.0], VoxelData::Float32(data)).unwrap()), gt)
}

/// An oracle served on a thread, reached through OS pipes.
fn piped(spec: OracleSpec, mode: Option<Mode>) -> (impl Segmenter, thread::JoinHandle<()>) {
    let (req_r, req_w) = std::io::pipe().unwrap();
    let (resp_r, resp_w) = std::io::pipe().unwrap();
    let handle = thread::spawn(move || {
        let mut seg = OracleSegmenter::new(&spec).unwrap();
        if let Some(m) = mode {
            seg = seg.with_mode(m);
        }
        serve(seg, BufReader::new(req_r), resp_w).unwrap();
    });
    (WireClient::handshake(BufReader::new(resp_r), req_w).unwrap(), handle)
}

#[test]
fn remote_oracle_matches_local_oracle() {
    let (volume, gt) = probe();
    let data = CaseData {
        case_id: "p".into(),
        volume,
        image_path: None,
        reference: Some(Arc::new(vec![gt.clone()])),
    };
    let (mut remote, handle) = piped(OracleSpec::Dilated { k: 1 }, None);
    let mut local = OracleSegmenter::new(&OracleSpec::Dilated { k: 1 }).unwrap();
    let requests = [
        PredictRequest {
            scope: Scope::Volume,
            prompts: vec![Prompt::pos([8, 7, 5])],
            prev_mask: None,
        },
        PredictRequest {
            scope: Scope::axial(5),
            prompts: vec![Prompt::box2d(5, [4, 4], [12, 10])],
            prev_mask: None,
        },
    ];
    let rid = remote.open_case(&data).unwrap();
    let lid = local.open_case(&data).unwrap();
    for req in &requests {
        assert_eq!(remote.predict(&rid, req).unwrap(), local.predict(&lid, req).unwrap());
    }
    remote.close_case(&rid).unwrap();
    drop(remote);
    handle.join().unwrap();
}

#[test]
fn client_never_sends_unadvertised_prompts() {
    let (volume, gt) = probe();
    let data = CaseData {
        case_id: "p".into(),
        volume,
        image_path: None,
        reference: Some(Arc::new(vec![gt])),
    };
    let (mut remote, handle) = piped(OracleSpec::Perfect, Some(Mode::TwoD));
    let id = remote.open_case(&data).unwrap();
    let err = remote
        .predict(
            &id,
            &PredictRequest {
                scope: Scope::Volume,
                prompts: vec![Prompt::pos([8, 7, 5])],
                prev_mask: None,
            },
        )
        .unwrap_err();
    assert!(matches!(err, volprompt_core::Error::CapabilityMissing(_)));
    // the stream is still in step
    let ok = remote.predict(
        &id,
        &PredictRequest {
            scope: Scope::axial(5),
            prompts: vec![Prompt::pos([8, 7, 5])],
            prev_mask: None,
        },
    );
    assert_eq!(ok.unwrap().dims(), Dims::new(16, 14, 1));
    drop(remote);
    handle.join().unwrap();
}

#[test]
fn server_errors() {
    let mut server = Server::new(OracleSegmenter::new(&OracleSpec::Perfect).unwrap());
    let bad = server.handle_line("{\"type\":\"predict\"");
    assert!(matches!(bad, Response::Error { code: ErrorCode::BadRequest, .. }));
    let unknown = server.handle(Request::Close { session_id: "nope".into() });
    assert!(matches!(unknown, Response::Error { code: ErrorCode::UnknownSession, .. }));
}

#[test]
fn responses_keep_request_order() {
    let (req_r, mut req_w) = std::io::pipe().unwrap();
    let (resp_r, resp_w) = std::io::pipe().unwrap();
    let handle = thread::spawn(move || {
        serve(OracleSegmenter::new(&OracleSpec::Perfect).unwrap(), BufReader::new(req_r), resp_w).unwrap();
    });
    let lines = [
        r#"{"type":"hello","protocol":1}"#,
        r#"{"type":"close","session_id":"a"}"#,
        "garbage",
        r#"{"type":"hello","protocol":1}"#,
    ];
    for l in lines {
        writeln!(req_w, "{l}").unwrap();
    }
    drop(req_w);
    let responses: Vec<Response> = std::io::BufRead::lines(BufReader::new(resp_r))
        .map(|l| serde_json::from_str(&l.unwrap()).unwrap())
        .collect();
    handle.join().unwrap();
    let tags: Vec<&str> = responses
        .iter()
        .map(|r| match r {
            Response::Capabilities { .. } => "capabilities",
            Response::Error { .. } => "error",
            _ => "other",
        })
        .collect();
    assert_eq!(tags, ["capabilities", "error", "error", "capabilities"]);
}

fn random_mask(rng: &mut SeededRng) -> BinaryMask {
    let dims = Dims::new(1 + rng.below(12), 1 + rng.below(12), 1 + rng.below(12));
    let density = rng.unit();
    let bits = (0..dims.len()).map(|_| rng.bernoulli(density)).collect();
    BinaryMask::from_bits(dims, bits).unwrap()
}

#[test]
fn rle_round_trip_fuzz() {
    for seed in 0..1000 {
        let mut rng = SeededRng::new(seed, "rle");
        let m = random_mask(&mut rng);
        let rle = rle_encode(&m);
        rle.validate().unwrap();
        assert_eq!(rle.foreground_count() as usize, m.voxel_count());
        let text = serde_json::to_string(&rle).unwrap();
        let back: RleMask = serde_json::from_str(&text).unwrap();
        assert_eq!(rle_decode(&back).unwrap(), m, "seed {seed}");
    }
}

#[test]
fn nifti_round_trip_fuzz() {
    let dir = tempfile::tempdir().unwrap();
    for seed in 0..1000 {
        let mut rng = SeededRng::new(seed, "nifti");
        let dims = Dims::new(1 + rng.below(6), 1 + rng.below(6), 1 + rng.below(6));
        let n = dims.len();
        let data = match seed % 3 {
            0 => VoxelData::Uint8((0..n).map(|_| rng.below(256) as u8).collect()),
            1 => VoxelData::Int16((0..n).map(|_| rng.below(65536) as i32 as i16).collect()),
            _ => VoxelData::Float32((0..n).map(|_| f32::from_bits(rng.next_u64() as u32 & 0x7f7f_ffff)).collect()),
        };
        let spacing = [0.5 + rng.unit(), 0.5 + rng.unit(), 1.0 + 4.0 * rng.unit()];
        let spacing = spacing.map(|s| s as f32 as f64);
        let v = Volume::new(dims, spacing, data).unwrap();
        let path = dir.path().join(if seed % 2 == 0 { "v.nii.gz" } else { "v.nii" });
        write_nifti(&v, &path).unwrap();
        let back = read_nifti(&path).unwrap();
        assert_eq!(back.dims(), v.dims());
        assert_eq!(back.spacing(), v.spacing());
        assert_eq!(back.data(), v.data(), "seed {seed}");
    }
}
