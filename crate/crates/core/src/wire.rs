//! Newline-delimited JSON protocol between the engine and an external
//! segmenter. Every request gets exactly one response, in order.
//!
//! ```text
//! > {"type":"hello","protocol":1}
//! < {"type":"capabilities","protocol":1,"capabilities":{...}}
//! > {"type":"open_case","case_id":"c0","image":{"path":"/data/c0.nii.gz"}}
//! < {"type":"ack","session_id":"c0#1"}
//! > {"type":"predict","session_id":"c0#1","scope":{"slice":{"axis":"z","idx":4}},"prompts":[...]}
//! < {"type":"mask","mask":{"dims":[64,64,1],"runs":[...]}}
//! > {"type":"close","session_id":"c0#1"}
//! < {"type":"ack","session_id":"c0#1"}
//! ```

use std::collections::HashMap;
use std::io::{BufRead, BufReader, Write};
use std::net::{TcpStream, ToSocketAddrs};
use std::path::PathBuf;
use std::process::{Child, ChildStdin, ChildStdout, Command, Stdio};
use std::sync::Arc;

use base64::Engine;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{BinaryMask, Dims, Dtype, Volume, VoxelData};
use crate::io::{read_volume, rle_decode, rle_encode, RleMask};
use crate::prompt::Prompt;
use crate::segmenter::{Capabilities, CaseData, PredictRequest, Scope, Segmenter};

pub const PROTOCOL_VERSION: u32 = 1;

/// Raw little-endian voxels, base64 encoded.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InlineVolume {
    pub dims: Dims,
    pub spacing: [f64; 3],
    pub dtype: Dtype,
    pub data_b64: String,
}

impl InlineVolume {
    pub fn from_volume(v: &Volume) -> Self {
        Self {
            dims: v.dims(),
            spacing: v.spacing(),
            dtype: v.dtype(),
            data_b64: base64::engine::general_purpose::STANDARD.encode(v.data().to_le_bytes()),
        }
    }

    pub fn to_volume(&self) -> Result<Volume> {
        let bytes = base64::engine::general_purpose::STANDARD
            .decode(&self.data_b64)
            .map_err(|e| Error::Protocol(format!("bad base64: {e}")))?;
        let expected = self.dims.len() * self.dtype.size();
        if bytes.len() != expected {
            return Err(Error::DataLength {
                expected,
                actual: bytes.len(),
            });
        }
        Volume::new(self.dims, self.spacing, VoxelData::from_le_bytes(self.dtype, &bytes))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ImageRef {
    Path(PathBuf),
    Inline(InlineVolume),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReferenceMasks {
    pub instances: Vec<RleMask>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Request {
    Hello {
        protocol: u32,
    },
    OpenCase {
        case_id: String,
        image: ImageRef,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        reference: Option<ReferenceMasks>,
    },
    Predict {
        session_id: String,
        scope: Scope,
        prompts: Vec<Prompt>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        prev_mask: Option<RleMask>,
    },
    Close {
        session_id: String,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum ErrorCode {
    BadRequest,
    UnknownSession,
    UnsupportedPrompt,
    Internal,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Response {
    Capabilities {
        protocol: u32,
        capabilities: Capabilities,
    },
    Ack {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        session_id: Option<String>,
    },
    Mask {
        mask: RleMask,
    },
    Error {
        code: ErrorCode,
        message: String,
    },
}

impl Response {
    fn error(code: ErrorCode, message: impl Into<String>) -> Self {
        Response::Error {
            code,
            message: message.into(),
        }
    }
}

/// Protocol state of a server: which sessions exist and on what grid.
pub struct Server<S> {
    seg: S,
    sessions: HashMap<String, Dims>,
}

impl<S: Segmenter> Server<S> {
    pub fn new(seg: S) -> Self {
        Self {
            seg,
            sessions: HashMap::new(),
        }
    }

    /// Answer one raw request line.
    pub fn handle_line(&mut self, line: &str) -> Response {
        match serde_json::from_str::<Request>(line) {
            Ok(req) => self.handle(req),
            Err(e) => Response::error(ErrorCode::BadRequest, e.to_string()),
        }
    }

    pub fn handle(&mut self, req: Request) -> Response {
        match req {
            Request::Hello { .. } => Response::Capabilities {
                protocol: PROTOCOL_VERSION,
                capabilities: self.seg.capabilities(),
            },
            Request::OpenCase {
                case_id,
                image,
                reference,
            } => {
                let (volume, image_path) = match image {
                    ImageRef::Path(p) => match read_volume(&p) {
                        Ok(v) => (v, Some(p)),
                        Err(e) => return Response::error(ErrorCode::BadRequest, e.to_string()),
                    },
                    ImageRef::Inline(iv) => match iv.to_volume() {
                        Ok(v) => (v, None),
                        Err(e) => return Response::error(ErrorCode::BadRequest, e.to_string()),
                    },
                };
                let reference = match reference {
                    Some(r) => {
                        let masks: Result<Vec<BinaryMask>> = r.instances.iter().map(rle_decode).collect();
                        match masks {
                            Ok(m) if m.iter().all(|m| m.dims() == volume.dims()) => Some(Arc::new(m)),
                            Ok(_) => return Response::error(ErrorCode::BadRequest, "reference dims differ from image"),
                            Err(e) => return Response::error(ErrorCode::BadRequest, e.to_string()),
                        }
                    }
                    None => None,
                };
                let dims = volume.dims();
                let case = CaseData {
                    case_id,
                    volume: Arc::new(volume),
                    image_path,
                    reference,
                };
                match self.seg.open_case(&case) {
                    Ok(id) => {
                        self.sessions.insert(id.clone(), dims);
                        Response::Ack { session_id: Some(id) }
                    }
                    Err(e) => Response::error(ErrorCode::Internal, e.to_string()),
                }
            }
            Request::Predict {
                session_id,
                scope,
                prompts,
                prev_mask,
            } => {
                let Some(&dims) = self.sessions.get(&session_id) else {
                    return Response::error(ErrorCode::UnknownSession, format!("no session {session_id}"));
                };
                if !scope.is_valid_for(dims) {
                    return Response::error(ErrorCode::BadRequest, format!("scope {scope:?} outside {dims:?}"));
                }
                if let Some(p) = prompts.iter().find(|p| !p.in_bounds(dims)) {
                    return Response::error(ErrorCode::BadRequest, format!("prompt out of bounds: {p:?}"));
                }
                let prev_mask = match prev_mask.map(|m| rle_decode(&m)).transpose() {
                    Ok(m) => m,
                    Err(e) => return Response::error(ErrorCode::BadRequest, e.to_string()),
                };
                if let Some(m) = &prev_mask {
                    if m.dims() != scope.mask_dims(dims) {
                        return Response::error(ErrorCode::BadRequest, "prev_mask dims do not match scope");
                    }
                }
                let req = PredictRequest {
                    scope,
                    prompts,
                    prev_mask,
                };
                if let Err(e) = self.seg.capabilities().check_request(&req) {
                    return Response::error(ErrorCode::UnsupportedPrompt, e.to_string());
                }
                match self.seg.predict(&session_id, &req) {
                    Ok(mask) => Response::Mask { mask: rle_encode(&mask) },
                    Err(e) => Response::error(ErrorCode::Internal, e.to_string()),
                }
            }
            Request::Close { session_id } => {
                if self.sessions.remove(&session_id).is_none() {
                    return Response::error(ErrorCode::UnknownSession, format!("no session {session_id}"));
                }
                match self.seg.close_case(&session_id) {
                    Ok(()) => Response::Ack { session_id: Some(session_id) },
                    Err(e) => Response::error(ErrorCode::Internal, e.to_string()),
                }
            }
        }
    }
}

/// Serve requests from `input` until end of stream.
pub fn serve<S: Segmenter, R: BufRead, W: Write>(seg: S, input: R, mut output: W) -> Result<()> {
    let mut server = Server::new(seg);
    for line in input.lines() {
        let line = line.map_err(|e| Error::io("<input>", e))?;
        if line.trim().is_empty() {
            continue;
        }
        let resp = server.handle_line(&line);
        serde_json::to_writer(&mut output, &resp)?;
        output.write_all(b"\n").map_err(|e| Error::io("<output>", e))?;
        output.flush().map_err(|e| Error::io("<output>", e))?;
    }
    Ok(())
}

/// A segmenter on the other end of a pipe or socket.
pub struct WireClient<R, W> {
    reader: R,
    writer: Option<W>,
    caps: Capabilities,
    child: Option<Child>,
}

pub type ProcessClient = WireClient<BufReader<ChildStdout>, ChildStdin>;
pub type TcpClient = WireClient<BufReader<TcpStream>, TcpStream>;

impl<R: BufRead, W: Write> WireClient<R, W> {
    /// Say hello and learn the remote capabilities.
    pub fn handshake(reader: R, writer: W) -> Result<Self> {
        let mut c = Self {
            reader,
            writer: Some(writer),
            caps: Capabilities::all(""),
            child: None,
        };
        match c.request(&Request::Hello {
            protocol: PROTOCOL_VERSION,
        })? {
            Response::Capabilities { capabilities, .. } => c.caps = capabilities,
            other => return Err(Error::Protocol(format!("expected capabilities, got {other:?}"))),
        }
        Ok(c)
    }

    /// Send one request line and read one response line.
    pub fn request(&mut self, req: &Request) -> Result<Response> {
        let line = serde_json::to_string(req)?;
        self.send_raw(&line)
    }

    /// Write every line first, then read one response per line.
    pub fn pipeline(&mut self, lines: &[String]) -> Result<Vec<Response>> {
        let io = |e| Error::io("<segmenter>", e);
        let writer = self.writer.as_mut().expect("open until drop");
        for line in lines {
            writer.write_all(line.as_bytes()).map_err(io)?;
            writer.write_all(b"\n").map_err(io)?;
        }
        writer.flush().map_err(io)?;
        (0..lines.len()).map(|_| self.read_response()).collect()
    }

    fn read_response(&mut self) -> Result<Response> {
        let mut buf = String::new();
        let n = self.reader.read_line(&mut buf).map_err(|e| Error::io("<segmenter>", e))?;
        if n == 0 {
            return Err(Error::Protocol("segmenter closed the connection".into()));
        }
        serde_json::from_str(buf.trim_end()).map_err(|e| Error::Protocol(format!("unparseable response: {e}")))
    }

    /// Send an arbitrary line, e.g. a deliberately malformed one.
    pub fn send_raw(&mut self, line: &str) -> Result<Response> {
        let io = |e| Error::io("<segmenter>", e);
        let writer = self.writer.as_mut().expect("open until drop");
        writer.write_all(line.as_bytes()).map_err(io)?;
        writer.write_all(b"\n").map_err(io)?;
        writer.flush().map_err(io)?;
        self.read_response()
    }
}

impl ProcessClient {
    /// Start `command[0]` with the remaining arguments and talk over stdio.
    pub fn spawn(command: &[String]) -> Result<Self> {
        let (prog, args) = command
            .split_first()
            .ok_or_else(|| Error::InvalidParameter("empty segmenter command".into()))?;
        let mut child = Command::new(prog)
            .args(args)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::inherit())
            .spawn()
            .map_err(|e| Error::io(prog, e))?;
        let stdin = child.stdin.take().expect("piped");
        let stdout = child.stdout.take().expect("piped");
        let mut c = match Self::handshake(BufReader::new(stdout), stdin) {
            Ok(c) => c,
            Err(e) => {
                let _ = child.kill();
                let _ = child.wait();
                return Err(e);
            }
        };
        c.child = Some(child);
        Ok(c)
    }
}

impl TcpClient {
    pub fn connect(addr: impl ToSocketAddrs) -> Result<Self> {
        let stream = TcpStream::connect(addr).map_err(|e| Error::io("<tcp>", e))?;
        let read = stream.try_clone().map_err(|e| Error::io("<tcp>", e))?;
        Self::handshake(BufReader::new(read), stream)
    }
}

impl<R, W> Drop for WireClient<R, W> {
    fn drop(&mut self) {
        // closing stdin lets a well-behaved server exit on its own
        self.writer.take();
        if let Some(mut child) = self.child.take() {
            let _ = child.wait();
        }
    }
}

fn remote_error(code: ErrorCode, message: &str) -> Error {
    match code {
        ErrorCode::UnsupportedPrompt => Error::CapabilityMissing(message.to_string()),
        _ => Error::SegmenterFailure(format!("{code:?}: {message}")),
    }
}

impl<R: BufRead + Send, W: Write + Send> Segmenter for WireClient<R, W> {
    fn capabilities(&self) -> Capabilities {
        self.caps.clone()
    }

    fn open_case(&mut self, case: &CaseData) -> Result<String> {
        let image = match &case.image_path {
            Some(p) => ImageRef::Path(std::path::absolute(p).map_err(|e| Error::io(p, e))?),
            None => ImageRef::Inline(InlineVolume::from_volume(&case.volume)),
        };
        let reference = match (&case.reference, self.caps.wants_reference) {
            (Some(r), true) => Some(ReferenceMasks {
                instances: r.iter().map(rle_encode).collect(),
            }),
            _ => None,
        };
        match self.request(&Request::OpenCase {
            case_id: case.case_id.clone(),
            image,
            reference,
        })? {
            Response::Ack { session_id: Some(id) } => Ok(id),
            Response::Error { code, message } => Err(remote_error(code, &message)),
            other => Err(Error::Protocol(format!("expected ack, got {other:?}"))),
        }
    }

    fn predict(&mut self, session: &str, req: &PredictRequest) -> Result<BinaryMask> {
        // never send what the remote did not advertise
        self.caps.check_request(req)?;
        match self.request(&Request::Predict {
            session_id: session.to_string(),
            scope: req.scope,
            prompts: req.prompts.clone(),
            prev_mask: req.prev_mask.as_ref().map(rle_encode),
        })? {
            Response::Mask { mask } => rle_decode(&mask),
            Response::Error { code, message } => Err(remote_error(code, &message)),
            other => Err(Error::Protocol(format!("expected mask, got {other:?}"))),
        }
    }

    fn close_case(&mut self, session: &str) -> Result<()> {
        match self.request(&Request::Close {
            session_id: session.to_string(),
        })? {
            Response::Ack { .. } => Ok(()),
            Response::Error { code, message } => Err(remote_error(code, &message)),
            other => Err(Error::Protocol(format!("expected ack, got {other:?}"))),
        }
    }
}
