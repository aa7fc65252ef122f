//! Single-round wire protocol between the client and the server.
//!
//! Request frame: `CPX1` | version u8 | op u16 | params len u32 | params |
//! payload len u64 | payload. Response frame: `CPX1` | version u8 |
//! status u16 | payload len u64 | payload. Integers are big-endian.
//!
//! Params are UTF-8 `key=value` lines. An ok response payload is a u32 count
//! followed by u64-length-prefixed blobs; an error payload is the message.

use std::collections::BTreeMap;
use std::io::{self, Read, Write};
use std::net::{Shutdown, SocketAddr, TcpListener, TcpStream, ToSocketAddrs};
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::Arc;
use std::thread::{self, JoinHandle};

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use sha2::{Digest, Sha256};

use crate::codec::{put_u16, put_u32, put_u64, Reader};
use crate::encoding::EncryptedNumber;
use crate::encrypted_image::{EncryptedHistogram, EncryptedImage};
use crate::error::{Error, Result};
use crate::kernel::{Kernel, StructuringElement};
use crate::ops::{self, OpId};
use crate::paillier::{os_rng, Entropy, PublicKey};

pub const MAGIC: &[u8; 4] = b"CPX1";
pub const PROTOCOL_VERSION: u8 = 1;
pub const DEFAULT_MAX_PAYLOAD: u64 = 1 << 30;
pub const ADDR_ENV: &str = "CRYPTOPIX_ADDR";

pub const STATUS_OK: u16 = 0;
pub const STATUS_MALFORMED: u16 = 1;
pub const STATUS_VERSION: u16 = 2;
pub const STATUS_UNKNOWN_OP: u16 = 3;
pub const STATUS_BAD_PARAMS: u16 = 4;
pub const STATUS_KEY_MISMATCH: u16 = 5;
pub const STATUS_TOO_LARGE: u16 = 6;
pub const STATUS_FAILED: u16 = 7;

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Params(pub BTreeMap<String, String>);

impl Params {
    pub fn insert(&mut self, key: &str, value: impl Into<String>) {
        self.0.insert(key.to_string(), value.into());
    }

    pub fn get(&self, key: &str) -> Result<&str> {
        self.0
            .get(key)
            .map(String::as_str)
            .ok_or_else(|| Error::Parameter(format!("missing parameter {key:?}")))
    }

    pub fn parse<T: std::str::FromStr>(&self, key: &str) -> Result<T> {
        let raw = self.get(key)?;
        raw.parse()
            .map_err(|_| Error::Parameter(format!("bad value for {key:?}: {raw:?}")))
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = String::new();
        for (k, v) in &self.0 {
            out.push_str(k);
            out.push('=');
            out.push_str(v);
            out.push('\n');
        }
        out.into_bytes()
    }

    pub fn decode(bytes: &[u8]) -> Result<Params> {
        let text = std::str::from_utf8(bytes)
            .map_err(|_| Error::Protocol("params are not UTF-8".into()))?;
        let mut map = BTreeMap::new();
        for line in text.lines().filter(|l| !l.is_empty()) {
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Protocol(format!("bad param line {line:?}")))?;
            if map.insert(k.to_string(), v.to_string()).is_some() {
                return Err(Error::Protocol(format!("duplicate param {k:?}")));
            }
        }
        Ok(Params(map))
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Request {
    pub version: u8,
    pub op: u16,
    pub params: Params,
    pub payload: Vec<u8>,
}

impl Request {
    pub fn encode(&self) -> Vec<u8> {
        let params = self.params.encode();
        let mut out = Vec::with_capacity(4 + 1 + 2 + 4 + params.len() + 8 + self.payload.len());
        out.extend_from_slice(MAGIC);
        out.push(self.version);
        put_u16(&mut out, self.op);
        put_u32(&mut out, params.len() as u32);
        out.extend_from_slice(&params);
        put_u64(&mut out, self.payload.len() as u64);
        out.extend_from_slice(&self.payload);
        out
    }

    /// Decodes exactly one frame; trailing bytes are an error.
    pub fn decode(bytes: &[u8]) -> Result<Request> {
        let mut r = Reader::new(bytes);
        r.magic(MAGIC)?;
        let version = r.u8()?;
        let op = r.u16()?;
        let plen = r.u32()? as usize;
        let params = Params::decode(r.take(plen)?)?;
        let len = r.u64()?;
        let payload = r.take(usize::try_from(len).map_err(|_| Error::Protocol("payload too large".into()))?)?;
        r.finish()?;
        Ok(Request { version, op, params, payload: payload.to_vec() })
    }

    /// Reads one frame from a stream, rejecting payloads above `max_payload`
    /// before allocating them.
    pub fn read_from(stream: &mut impl Read, max_payload: u64) -> Result<Request> {
        let mut head = [0u8; 11];
        stream.read_exact(&mut head)?;
        if &head[..4] != MAGIC {
            return Err(Error::Protocol("bad frame magic".into()));
        }
        let version = head[4];
        let op = u16::from_be_bytes([head[5], head[6]]);
        let plen = u32::from_be_bytes(head[7..11].try_into().unwrap()) as u64;
        if plen > max_payload {
            return Err(Error::Protocol(format!("params of {plen} bytes exceed the limit")));
        }
        let mut params = vec![0u8; plen as usize];
        stream.read_exact(&mut params)?;
        let mut len = [0u8; 8];
        stream.read_exact(&mut len)?;
        let len = u64::from_be_bytes(len);
        if len > max_payload {
            return Err(TooLarge(len).into());
        }
        let mut payload = vec![0u8; len as usize];
        stream.read_exact(&mut payload)?;
        Ok(Request { version, op, params: Params::decode(&params)?, payload })
    }
}

struct TooLarge(u64);

impl From<TooLarge> for Error {
    fn from(t: TooLarge) -> Error {
        Error::Remote {
            code: STATUS_TOO_LARGE,
            message: format!("payload of {} bytes exceeds the server limit", t.0),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Response {
    pub version: u8,
    pub status: u16,
    pub blobs: Vec<Vec<u8>>,
    pub message: String,
}

impl Response {
    pub fn ok(blobs: Vec<Vec<u8>>) -> Response {
        Response { version: PROTOCOL_VERSION, status: STATUS_OK, blobs, message: String::new() }
    }

    pub fn error(status: u16, message: impl Into<String>) -> Response {
        Response { version: PROTOCOL_VERSION, status, blobs: Vec::new(), message: message.into() }
    }

    pub fn from_error(e: &Error) -> Response {
        let status = match e {
            Error::Remote { code, .. } => *code,
            Error::Version(_) => STATUS_VERSION,
            Error::Format(_) | Error::Protocol(_) | Error::MalformedCiphertext | Error::Io(_) => {
                STATUS_MALFORMED
            }
            Error::Parameter(_)
            | Error::Shape(_)
            | Error::Range(_)
            | Error::EncodingOverflow(_)
            | Error::BaseMismatch(..)
            | Error::UnsupportedKeySize(_) => STATUS_BAD_PARAMS,
            Error::KeyMismatch => STATUS_KEY_MISMATCH,
            _ => STATUS_FAILED,
        };
        let message = match e {
            Error::Remote { message, .. } => message.clone(),
            other => other.to_string(),
        };
        Response::error(status, message)
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut payload = Vec::new();
        if self.status == STATUS_OK {
            put_u32(&mut payload, self.blobs.len() as u32);
            for b in &self.blobs {
                put_u64(&mut payload, b.len() as u64);
                payload.extend_from_slice(b);
            }
        } else {
            payload.extend_from_slice(self.message.as_bytes());
        }
        let mut out = Vec::with_capacity(15 + payload.len());
        out.extend_from_slice(MAGIC);
        out.push(self.version);
        put_u16(&mut out, self.status);
        put_u64(&mut out, payload.len() as u64);
        out.extend_from_slice(&payload);
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Response> {
        let mut r = Reader::new(bytes);
        r.magic(MAGIC)?;
        let version = r.u8()?;
        if version != PROTOCOL_VERSION {
            return Err(Error::Version(version));
        }
        let status = r.u16()?;
        let len = r.u64()? as usize;
        let payload = r.take(len)?;
        r.finish()?;
        let mut p = Reader::new(payload);
        if status == STATUS_OK {
            let count = p.u32()? as usize;
            let mut blobs = Vec::with_capacity(count.min(64));
            for _ in 0..count {
                let len = p.u64()? as usize;
                blobs.push(p.take(len)?.to_vec());
            }
            p.finish()?;
            Ok(Response::ok(blobs))
        } else {
            let message = String::from_utf8_lossy(payload).into_owned();
            Ok(Response { version, status, blobs: Vec::new(), message })
        }
    }

    pub fn into_result(self) -> Result<Vec<Vec<u8>>> {
        if self.status == STATUS_OK {
            Ok(self.blobs)
        } else {
            Err(Error::Remote { code: self.status, message: self.message })
        }
    }
}

/// A server-side operation together with its plaintext parameters.
#[derive(Clone, Debug, PartialEq)]
pub enum Operation {
    Negate,
    Brightness(EncryptedNumber),
    Convolve(Kernel),
    Gradient(Kernel, Kernel),
    Sharpen { k: f64, lpf: Kernel },
    MorphSum(StructuringElement),
    EqualizeTransform,
}

impl Operation {
    pub fn id(&self) -> OpId {
        match self {
            Operation::Negate => OpId::Negate,
            Operation::Brightness(_) => OpId::Brightness,
            Operation::Convolve(_) => OpId::Convolve,
            Operation::Gradient(..) => OpId::Gradient,
            Operation::Sharpen { .. } => OpId::Sharpen,
            Operation::MorphSum(_) => OpId::MorphSum,
            Operation::EqualizeTransform => OpId::EqualizeTransform,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Payload {
    Image(EncryptedImage),
    Histogram(EncryptedHistogram),
}

impl Payload {
    fn to_bytes(&self, pk: &PublicKey) -> Result<Vec<u8>> {
        match self {
            Payload::Image(i) => i.to_bytes(pk),
            Payload::Histogram(h) => h.to_bytes(pk),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Output {
    Images(Vec<EncryptedImage>),
    Histogram(EncryptedHistogram),
}

impl Output {
    pub fn into_image(self) -> Result<EncryptedImage> {
        match self {
            Output::Images(mut v) if v.len() == 1 => Ok(v.remove(0)),
            _ => Err(Error::Protocol("expected a single image in the response".into())),
        }
    }

    pub fn into_images(self) -> Result<Vec<EncryptedImage>> {
        match self {
            Output::Images(v) => Ok(v),
            _ => Err(Error::Protocol("expected images in the response".into())),
        }
    }

    pub fn into_histogram(self) -> Result<EncryptedHistogram> {
        match self {
            Output::Histogram(h) => Ok(h),
            _ => Err(Error::Protocol("expected a histogram in the response".into())),
        }
    }
}

/// Runs an operation in-process. The server and the CLI's local mode share it.
pub fn execute<R: Entropy + ?Sized>(
    pk: &PublicKey,
    op: &Operation,
    payload: &Payload,
    rng: &mut R,
) -> Result<Output> {
    let image = || match payload {
        Payload::Image(i) => Ok(i),
        Payload::Histogram(_) => Err(Error::Parameter("operation needs an encrypted image".into())),
    };
    Ok(match op {
        Operation::Negate => Output::Images(vec![ops::negate(pk, image()?, rng)?]),
        Operation::Brightness(v) => Output::Images(vec![ops::brightness(pk, image()?, v)?]),
        Operation::Convolve(k) => Output::Images(vec![ops::convolve(pk, image()?, k)?]),
        Operation::Gradient(h1, h2) => {
            let (gx, gy) = ops::gradient(pk, image()?, h1, h2)?;
            Output::Images(vec![gx, gy])
        }
        Operation::Sharpen { k, lpf } => Output::Images(vec![ops::sharpen(pk, image()?, *k, lpf)?]),
        Operation::MorphSum(se) => Output::Images(vec![ops::morph_sum(pk, image()?, se)?]),
        Operation::EqualizeTransform => match payload {
            Payload::Histogram(h) => Output::Histogram(ops::equalize_histogram(pk, h)?),
            Payload::Image(_) => {
                return Err(Error::Parameter("equalization needs an encrypted histogram".into()))
            }
        },
    })
}

pub fn build_request(pk: &PublicKey, op: &Operation, payload: &Payload) -> Result<Request> {
    let mut params = Params::default();
    params.insert("pk", hex::encode(pk.to_bytes()));
    match op {
        Operation::Negate | Operation::EqualizeTransform => {}
        Operation::Brightness(v) => params.insert("value", hex::encode(v.to_bytes())),
        Operation::Convolve(k) => params.insert("kernel", k.to_string()),
        Operation::Gradient(h1, h2) => {
            params.insert("h1", h1.to_string());
            params.insert("h2", h2.to_string());
        }
        Operation::Sharpen { k, lpf } => {
            params.insert("k", format!("{k:?}"));
            params.insert("kernel", lpf.to_string());
        }
        Operation::MorphSum(se) => params.insert("se", se.to_string()),
    }
    if let Payload::Histogram(h) = payload {
        params.insert("levels", h.levels.to_string());
        params.insert("w", h.width.to_string());
        params.insert("l", h.height.to_string());
    }
    Ok(Request {
        version: PROTOCOL_VERSION,
        op: op.id() as u16,
        params,
        payload: payload.to_bytes(pk)?,
    })
}

/// Server-side decoding of a request into key, operation and payload.
pub fn parse_request(req: &Request) -> Result<(PublicKey, Operation, Payload)> {
    if req.version != PROTOCOL_VERSION {
        return Err(Error::Version(req.version));
    }
    let op = OpId::from_u16(req.op).ok_or_else(|| Error::Remote {
        code: STATUS_UNKNOWN_OP,
        message: format!("unknown operation {}", req.op),
    })?;
    let p = &req.params;
    let pk_bytes = hex::decode(p.get("pk")?)
        .map_err(|_| Error::Parameter("public key is not hex".into()))?;
    let pk = PublicKey::from_bytes(&pk_bytes)?;
    let payload = if op == OpId::EqualizeTransform {
        let h = EncryptedHistogram::from_bytes(&req.payload)?;
        let declared: (u32, usize, usize) = (p.parse("levels")?, p.parse("w")?, p.parse("l")?);
        if declared != (h.levels, h.width, h.height) || h.bins.len() != h.levels as usize {
            return Err(Error::Parameter("histogram size does not match G, w, l".into()));
        }
        Payload::Histogram(h)
    } else {
        Payload::Image(EncryptedImage::from_bytes(&req.payload)?)
    };
    let operation = match op {
        OpId::Negate => Operation::Negate,
        OpId::Brightness => {
            let Payload::Image(img) = &payload else { unreachable!() };
            let bytes = hex::decode(p.get("value")?)
                .map_err(|_| Error::Parameter("value is not hex".into()))?;
            Operation::Brightness(EncryptedNumber::from_bytes(&bytes, img.fingerprint, img.base)?)
        }
        OpId::Convolve => Operation::Convolve(p.parse_with("kernel")?),
        OpId::Gradient => Operation::Gradient(p.parse_with("h1")?, p.parse_with("h2")?),
        OpId::Sharpen => Operation::Sharpen { k: p.parse("k")?, lpf: p.parse_with("kernel")? },
        OpId::MorphSum => Operation::MorphSum(p.parse_with("se")?),
        OpId::EqualizeTransform => Operation::EqualizeTransform,
    };
    Ok((pk, operation, payload))
}

impl Params {
    /// Like `parse`, keeping the parser's own error message.
    fn parse_with<T: std::str::FromStr<Err = Error>>(&self, key: &str) -> Result<T> {
        self.get(key)?.parse()
    }
}

pub fn parse_output(pk: &PublicKey, op: OpId, blobs: Vec<Vec<u8>>) -> Result<Output> {
    let out = if op == OpId::EqualizeTransform {
        match <[Vec<u8>; 1]>::try_from(blobs) {
            Ok([b]) => Output::Histogram(EncryptedHistogram::from_bytes(&b)?),
            Err(_) => return Err(Error::Protocol("expected one histogram blob".into())),
        }
    } else {
        let expected = if op == OpId::Gradient { 2 } else { 1 };
        if blobs.len() != expected {
            return Err(Error::Protocol(format!("expected {expected} image blobs, got {}", blobs.len())));
        }
        Output::Images(blobs.iter().map(|b| EncryptedImage::from_bytes(b)).collect::<Result<_>>()?)
    };
    match &out {
        Output::Images(v) => v.iter().try_for_each(|i| i.check_key(pk))?,
        Output::Histogram(h) => h.check_key(pk)?,
    }
    Ok(out)
}

fn encode_output(pk: &PublicKey, out: &Output) -> Result<Vec<Vec<u8>>> {
    match out {
        Output::Images(v) => v.iter().map(|i| i.to_bytes(pk)).collect(),
        Output::Histogram(h) => Ok(vec![h.to_bytes(pk)?]),
    }
}

#[derive(Debug, Default)]
pub struct ServerStats {
    pub connections: AtomicU64,
    pub requests_ok: AtomicU64,
    pub requests_failed: AtomicU64,
}

impl ServerStats {
    pub fn snapshot(&self) -> (u64, u64, u64) {
        (
            self.connections.load(Ordering::SeqCst),
            self.requests_ok.load(Ordering::SeqCst),
            self.requests_failed.load(Ordering::SeqCst),
        )
    }
}

/// Stateless request handler. With a seed, the randomness used for server
/// constants is derived from the seed and the request, so identical requests
/// get identical responses.
#[derive(Debug)]
pub struct Server {
    pub max_payload: u64,
    pub seed: Option<u64>,
    pub stats: ServerStats,
}

impl Default for Server {
    fn default() -> Self {
        Server { max_payload: DEFAULT_MAX_PAYLOAD, seed: None, stats: ServerStats::default() }
    }
}

impl Server {
    pub fn new(max_payload: u64, seed: Option<u64>) -> Server {
        Server { max_payload, seed, stats: ServerStats::default() }
    }

    fn request_rng(&self, req: &Request) -> ChaCha20Rng {
        match self.seed {
            Some(seed) => {
                let mut h = Sha256::new();
                h.update(seed.to_be_bytes());
                h.update(req.op.to_be_bytes());
                h.update(req.params.encode());
                h.update(&req.payload);
                ChaCha20Rng::from_seed(h.finalize().into())
            }
            None => os_rng(),
        }
    }

    fn dispatch(&self, req: &Request) -> Result<Vec<Vec<u8>>> {
        if req.payload.len() as u64 > self.max_payload {
            return Err(TooLarge(req.payload.len() as u64).into());
        }
        let (pk, op, payload) = parse_request(req)?;
        let out = execute(&pk, &op, &payload, &mut self.request_rng(req))?;
        encode_output(&pk, &out)
    }

    pub fn handle(&self, req: &Request) -> Response {
        let resp = match self.dispatch(req) {
            Ok(blobs) => Response::ok(blobs),
            Err(e) => Response::from_error(&e),
        };
        let counter = if resp.status == STATUS_OK {
            &self.stats.requests_ok
        } else {
            &self.stats.requests_failed
        };
        counter.fetch_add(1, Ordering::SeqCst);
        resp
    }

    /// Decodes a raw frame and handles it.
    pub fn handle_frame(&self, frame: &[u8]) -> Vec<u8> {
        match Request::decode(frame) {
            Ok(req) => self.handle(&req).encode(),
            Err(e) => {
                self.stats.requests_failed.fetch_add(1, Ordering::SeqCst);
                Response::from_error(&e).encode()
            }
        }
    }

    /// One request, one response, then close.
    pub fn serve_connection(&self, mut stream: TcpStream) -> io::Result<()> {
        self.stats.connections.fetch_add(1, Ordering::SeqCst);
        let resp = match Request::read_from(&mut stream, self.max_payload) {
            Ok(req) => self.handle(&req),
            Err(e) => {
                self.stats.requests_failed.fetch_add(1, Ordering::SeqCst);
                Response::from_error(&e)
            }
        };
        stream.write_all(&resp.encode())?;
        stream.flush()?;
        stream.shutdown(Shutdown::Both).or_else(|e| {
            if e.kind() == io::ErrorKind::NotConnected {
                Ok(())
            } else {
                Err(e)
            }
        })
    }

    /// Accepts connections until `stop` is set, one thread per connection.
    pub fn serve(self: Arc<Self>, listener: TcpListener, stop: Arc<AtomicBool>) -> io::Result<()> {
        for conn in listener.incoming() {
            if stop.load(Ordering::SeqCst) {
                break;
            }
            let stream = match conn {
                Ok(s) => s,
                Err(e) => {
                    eprintln!("accept failed: {e}");
                    continue;
                }
            };
            let server = Arc::clone(&self);
            thread::spawn(move || {
                if let Err(e) = server.serve_connection(stream) {
                    eprintln!("connection error: {e}");
                }
            });
        }
        Ok(())
    }

    /// Binds and serves on a background thread.
    pub fn spawn(self: Arc<Self>, addr: impl ToSocketAddrs) -> io::Result<ServerHandle> {
        let listener = TcpListener::bind(addr)?;
        let addr = listener.local_addr()?;
        let stop = Arc::new(AtomicBool::new(false));
        let flag = Arc::clone(&stop);
        let server = Arc::clone(&self);
        let thread = thread::spawn(move || server.serve(listener, flag));
        Ok(ServerHandle { addr, stop, thread: Some(thread), server: self })
    }
}

pub struct ServerHandle {
    pub addr: SocketAddr,
    pub server: Arc<Server>,
    stop: Arc<AtomicBool>,
    thread: Option<JoinHandle<io::Result<()>>>,
}

impl ServerHandle {
    pub fn shutdown(mut self) {
        self.stop_and_join();
    }

    fn stop_and_join(&mut self) {
        self.stop.store(true, Ordering::SeqCst);
        // wake the accept loop
        let _ = TcpStream::connect(self.addr);
        if let Some(t) = self.thread.take() {
            let _ = t.join();
        }
    }
}

impl Drop for ServerHandle {
    fn drop(&mut self) {
        self.stop_and_join();
    }
}

/// One request frame out, one response frame back.
pub trait Transport {
    fn exchange(&self, frame: &[u8]) -> Result<Vec<u8>>;

    /// Completed request/response exchanges so far.
    fn rounds(&self) -> u64;
}

#[derive(Debug)]
pub struct TcpTransport {
    addr: String,
    rounds: AtomicU64,
}

impl TcpTransport {
    pub fn new(addr: impl Into<String>) -> TcpTransport {
        TcpTransport { addr: addr.into(), rounds: AtomicU64::new(0) }
    }

    /// Address from `CRYPTOPIX_ADDR`.
    pub fn from_env() -> Result<TcpTransport> {
        std::env::var(ADDR_ENV)
            .map(TcpTransport::new)
            .map_err(|_| Error::Parameter(format!("{ADDR_ENV} is not set")))
    }

    pub fn addr(&self) -> &str {
        &self.addr
    }
}

impl Transport for TcpTransport {
    fn exchange(&self, frame: &[u8]) -> Result<Vec<u8>> {
        let mut stream = TcpStream::connect(&self.addr)?;
        stream.write_all(frame)?;
        stream.flush()?;
        let mut resp = Vec::new();
        stream.read_to_end(&mut resp)?;
        self.rounds.fetch_add(1, Ordering::SeqCst);
        Ok(resp)
    }

    fn rounds(&self) -> u64 {
        self.rounds.load(Ordering::SeqCst)
    }
}

/// In-process transport over the same frame encoding.
#[derive(Debug)]
pub struct LoopbackTransport {
    pub server: Arc<Server>,
    rounds: AtomicU64,
}

impl LoopbackTransport {
    pub fn new(server: Arc<Server>) -> LoopbackTransport {
        LoopbackTransport { server, rounds: AtomicU64::new(0) }
    }
}

impl Transport for LoopbackTransport {
    fn exchange(&self, frame: &[u8]) -> Result<Vec<u8>> {
        let resp = self.server.handle_frame(frame);
        self.rounds.fetch_add(1, Ordering::SeqCst);
        Ok(resp)
    }

    fn rounds(&self) -> u64 {
        self.rounds.load(Ordering::SeqCst)
    }
}

/// Sends one request and decodes its response.
pub fn request(transport: &dyn Transport, req: &Request) -> Result<Response> {
    Response::decode(&transport.exchange(&req.encode())?)
}

/// Client side of a full operation: build, send, check and decode.
pub fn remote_execute(
    transport: &dyn Transport,
    pk: &PublicKey,
    op: &Operation,
    payload: &Payload,
) -> Result<Output> {
    let req = build_request(pk, op, payload)?;
    let blobs = request(transport, &req)?.into_result()?;
    parse_output(pk, op.id(), blobs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoding::Precision;
    use crate::encrypted_image::{decrypt_image, encrypt_image};
    use crate::image::PlainImage;
    use crate::paillier::{seeded_rng, Keypair};
    use std::sync::OnceLock;

    fn kp() -> &'static Keypair {
        static KEY: OnceLock<Keypair> = OnceLock::new();
        KEY.get_or_init(|| Keypair::generate(256, &mut seeded_rng(31)).unwrap())
    }

    fn small_image() -> (PlainImage, EncryptedImage) {
        let img = PlainImage::from_fn(8, 8, 256, |x, y| (x * 30 + y) as u32).unwrap();
        let e = encrypt_image(&kp().public, &img, &Precision::default(), &mut seeded_rng(4)).unwrap();
        (img, e)
    }

    #[test]
    fn params_round_trip() {
        let mut p = Params::default();
        p.insert("kernel", "3x3:1.0,0.0,-1.0,2.0,0.0,-2.0,1.0,0.0,-1.0/1.0");
        p.insert("k", "1.5");
        assert_eq!(Params::decode(&p.encode()).unwrap(), p);
        assert!(Params::decode(b"no equals sign\n").is_err());
        assert!(Params::decode(b"a=1\na=2\n").is_err());
    }

    #[test]
    fn request_frame_layout() {
        let req = Request {
            version: 1,
            op: 3,
            params: Params::decode(b"k=1\n").unwrap(),
            payload: vec![9, 8, 7],
        };
        let bytes = req.encode();
        assert_eq!(&bytes[..4], b"CPX1");
        assert_eq!(bytes[4], 1);
        assert_eq!(&bytes[5..7], &[0, 3]);
        assert_eq!(&bytes[7..11], &[0, 0, 0, 4]);
        assert_eq!(&bytes[11..15], b"k=1\n");
        assert_eq!(&bytes[15..23], &[0, 0, 0, 0, 0, 0, 0, 3]);
        assert_eq!(&bytes[23..], &[9, 8, 7]);
        assert_eq!(Request::decode(&bytes).unwrap(), req);
        assert_eq!(Request::read_from(&mut &bytes[..], 100).unwrap(), req);
        let mut extra = bytes.clone();
        extra.push(0);
        assert!(Request::decode(&extra).is_err());
        assert!(Request::read_from(&mut &bytes[..], 2).is_err());
    }

    #[test]
    fn response_round_trip() {
        let ok = Response::ok(vec![vec![1, 2], vec![], vec![3]]);
        assert_eq!(Response::decode(&ok.encode()).unwrap(), ok);
        let err = Response::error(STATUS_UNKNOWN_OP, "unknown operation 99");
        assert_eq!(Response::decode(&err.encode()).unwrap(), err);
        match err.into_result() {
            Err(Error::Remote { code, .. }) => assert_eq!(code, STATUS_UNKNOWN_OP),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn negate_over_loopback() {
        let pk = &kp().public;
        let (img, e) = small_image();
        let t = LoopbackTransport::new(Arc::new(Server::default()));
        let out = remote_execute(&t, pk, &Operation::Negate, &Payload::Image(e)).unwrap();
        let dec = decrypt_image(&kp().private, &out.into_image().unwrap(), false).unwrap();
        assert!(dec.pixels().iter().zip(img.pixels()).all(|(a, b)| a + b == 255));
        assert_eq!(t.rounds(), 1);
    }

    #[test]
    fn unknown_op_and_bad_version() {
        let pk = &kp().public;
        let (_, e) = small_image();
        let server = Server::default();
        let mut req = build_request(pk, &Operation::Negate, &Payload::Image(e)).unwrap();
        req.op = 99;
        assert_eq!(server.handle(&req).status, STATUS_UNKNOWN_OP);
        req.op = 1;
        req.version = 2;
        assert_eq!(server.handle(&req).status, STATUS_VERSION);
        assert_eq!(
            Response::decode(&server.handle_frame(b"garbage")).unwrap().status,
            STATUS_MALFORMED
        );
        assert_eq!(server.stats.snapshot(), (0, 0, 3));
    }

    #[test]
    fn oversized_payload_rejected() {
        let pk = &kp().public;
        let (_, e) = small_image();
        let server = Server::new(64, None);
        let req = build_request(pk, &Operation::Negate, &Payload::Image(e)).unwrap();
        assert_eq!(server.handle(&req).status, STATUS_TOO_LARGE);
    }

    #[test]
    fn bad_params_rejected() {
        let pk = &kp().public;
        let (_, e) = small_image();
        let server = Server::default();
        let mut req = build_request(pk, &Operation::Convolve(Kernel::average(3, 3).unwrap()), &Payload::Image(e)).unwrap();
        req.params.insert("kernel", "2x2:1,1,1,1");
        assert_eq!(server.handle(&req).status, STATUS_BAD_PARAMS);
        req.params.0.remove("pk");
        assert_eq!(server.handle(&req).status, STATUS_BAD_PARAMS);
    }

    #[test]
    fn wrong_key_rejected() {
        let other = Keypair::generate(256, &mut seeded_rng(32)).unwrap();
        let (_, e) = small_image();
        let server = Server::default();
        let mut req = build_request(&kp().public, &Operation::Negate, &Payload::Image(e)).unwrap();
        req.params.insert("pk", hex::encode(other.public.to_bytes()));
        assert_eq!(server.handle(&req).status, STATUS_KEY_MISMATCH);
    }

    #[test]
    fn socket_matches_loopback_bitwise() {
        let pk = &kp().public;
        let (_, e) = small_image();
        let server = Arc::new(Server::new(DEFAULT_MAX_PAYLOAD, Some(5)));
        let handle = Arc::clone(&server).spawn("127.0.0.1:0").unwrap();
        let tcp = TcpTransport::new(handle.addr.to_string());
        let lo = LoopbackTransport::new(server);
        let req = build_request(pk, &Operation::Negate, &Payload::Image(e)).unwrap();
        let a = tcp.exchange(&req.encode()).unwrap();
        let b = lo.exchange(&req.encode()).unwrap();
        assert_eq!(a, b);
        assert_eq!((tcp.rounds(), lo.rounds()), (1, 1));
        handle.shutdown();
    }
}
