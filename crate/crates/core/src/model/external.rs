//! Score model backed by a child process speaking a binary protocol on
//! stdin/stdout.
//!
//! Request: opcode u8 (`0x01` forward, `0x02` gradient) | class u32 LE
//! (gradient only) | input video as an `AOST` tensor.
//! Response: status u8 (0 = ok) | `AOST` tensor (rank-1 scores or rank-4
//! gradient). A non-zero status carries no payload. One request is in
//! flight at a time.

use std::io::{BufReader, BufWriter, Read, Write};
use std::process::{Child, ChildStdin, Command, Stdio};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError};
use std::sync::Mutex;
use std::thread;
use std::time::Duration;

use super::{check_class, check_input, ScoreMode, ScoreModel};
use crate::error::{Error, Result};
use crate::tensor_io::RawTensor;
use crate::video::{VideoDims, VideoTensor};

pub const OP_FORWARD: u8 = 0x01;
pub const OP_GRADIENT: u8 = 0x02;
pub const STATUS_OK: u8 = 0;

#[derive(Debug, Clone, PartialEq)]
pub enum Request {
    Forward(RawTensor),
    Gradient { class: u32, input: RawTensor },
}

pub fn write_request<W: Write>(mut w: W, req: &Request) -> Result<()> {
    match req {
        Request::Forward(t) => {
            w.write_all(&[OP_FORWARD])?;
            t.write_to(&mut w)?;
        }
        Request::Gradient { class, input } => {
            w.write_all(&[OP_GRADIENT])?;
            w.write_all(&class.to_le_bytes())?;
            input.write_to(&mut w)?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Reads one request; `Ok(None)` on clean end of stream.
pub fn read_request<R: Read>(mut r: R) -> Result<Option<Request>> {
    let mut op = [0u8; 1];
    match r.read(&mut op)? {
        0 => return Ok(None),
        _ => {}
    }
    match op[0] {
        OP_FORWARD => Ok(Some(Request::Forward(read_tensor(&mut r)?))),
        OP_GRADIENT => {
            let mut class = [0u8; 4];
            r.read_exact(&mut class)
                .map_err(|_| Error::Protocol("truncated class id".into()))?;
            Ok(Some(Request::Gradient {
                class: u32::from_le_bytes(class),
                input: read_tensor(&mut r)?,
            }))
        }
        other => Err(Error::Protocol(format!("unknown opcode {other:#04x}"))),
    }
}

pub fn write_response<W: Write>(mut w: W, result: std::result::Result<&RawTensor, u8>) -> Result<()> {
    match result {
        Ok(t) => {
            w.write_all(&[STATUS_OK])?;
            t.write_to(&mut w)?;
        }
        Err(status) => w.write_all(&[status.max(1)])?,
    }
    w.flush()?;
    Ok(())
}

fn read_tensor<R: Read>(r: &mut R) -> Result<RawTensor> {
    RawTensor::read_from(r).map_err(|e| match e {
        Error::Format(msg) => Error::Protocol(format!("bad tensor: {msg}")),
        other => other,
    })
}

/// Reads one response from the child.
pub fn read_response<R: Read>(mut r: R) -> Result<RawTensor> {
    let mut status = [0u8; 1];
    r.read_exact(&mut status)
        .map_err(|_| Error::Protocol("child closed stdout".into()))?;
    if status[0] != STATUS_OK {
        return Err(Error::Model(format!("child returned status {}", status[0])));
    }
    read_tensor(&mut r)
}

struct Channel {
    child: Child,
    stdin: BufWriter<ChildStdin>,
    responses: Receiver<Result<RawTensor>>,
    broken: bool,
}

/// Subprocess-backed [`ScoreModel`].
pub struct ExternalModel {
    channel: Mutex<Channel>,
    classes: usize,
    dims: Option<VideoDims>,
    mode: ScoreMode,
    timeout: Duration,
    label: String,
}

impl ExternalModel {
    pub fn spawn(
        program: &str,
        args: &[String],
        classes: usize,
        dims: Option<VideoDims>,
        mode: ScoreMode,
        timeout: Duration,
    ) -> Result<Self> {
        let mut child = Command::new(program)
            .args(args)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::inherit())
            .spawn()
            .map_err(|e| Error::Model(format!("cannot start {program}: {e}")))?;
        let stdin = BufWriter::new(child.stdin.take().expect("piped stdin"));
        let stdout = child.stdout.take().expect("piped stdout");
        let (tx, rx) = mpsc::channel();
        thread::spawn(move || {
            let mut reader = BufReader::new(stdout);
            loop {
                let resp = read_response(&mut reader);
                let fatal = matches!(resp, Err(Error::Protocol(_)) | Err(Error::Io(_)));
                if tx.send(resp).is_err() || fatal {
                    break;
                }
            }
        });
        Ok(Self {
            channel: Mutex::new(Channel {
                child,
                stdin,
                responses: rx,
                broken: false,
            }),
            classes,
            dims,
            mode,
            timeout,
            label: format!("external:{program}"),
        })
    }

    fn call(&self, req: &Request) -> Result<RawTensor> {
        let mut ch = self.channel.lock().unwrap_or_else(|p| p.into_inner());
        if ch.broken {
            return Err(Error::Model("external model is no longer usable".into()));
        }
        let sent = write_request(&mut ch.stdin, req);
        if let Err(e) = sent {
            ch.broken = true;
            return Err(self.exit_error(&mut ch).unwrap_or(e));
        }
        match ch.responses.recv_timeout(self.timeout) {
            Ok(Ok(t)) => Ok(t),
            Ok(Err(e)) => {
                if matches!(e, Error::Protocol(_) | Error::Io(_)) {
                    ch.broken = true;
                    let _ = ch.child.kill();
                }
                Err(e)
            }
            Err(RecvTimeoutError::Timeout) => {
                ch.broken = true;
                let _ = ch.child.kill();
                Err(Error::Model(format!("timed out after {:?}", self.timeout)))
            }
            Err(RecvTimeoutError::Disconnected) => {
                ch.broken = true;
                Err(self
                    .exit_error(&mut ch)
                    .unwrap_or_else(|| Error::Protocol("child closed stdout".into())))
            }
        }
    }

    fn exit_error(&self, ch: &mut Channel) -> Option<Error> {
        match ch.child.wait() {
            Ok(status) if !status.success() => Some(Error::Model(format!("child exited with {status}"))),
            _ => None,
        }
    }
}

impl Drop for ExternalModel {
    fn drop(&mut self) {
        if let Ok(ch) = self.channel.get_mut() {
            let _ = ch.child.kill();
            let _ = ch.child.wait();
        }
    }
}

impl ScoreModel for ExternalModel {
    fn class_count(&self) -> usize {
        self.classes
    }

    fn input_dims(&self) -> Option<VideoDims> {
        self.dims
    }

    fn score_mode(&self) -> ScoreMode {
        self.mode
    }

    fn forward(&self, video: &VideoTensor) -> Result<Vec<f64>> {
        check_input(self, video)?;
        let out = self.call(&Request::Forward(RawTensor::from(video)))?;
        if out.rank() != 1 || out.dims[0] != self.classes {
            return Err(Error::Protocol(format!(
                "expected {} scores, got dims {:?}",
                self.classes, out.dims
            )));
        }
        Ok(out.to_f64())
    }

    fn gradient(&self, video: &VideoTensor, class: usize) -> Result<Vec<f64>> {
        check_input(self, video)?;
        check_class(self, class)?;
        let out = self.call(&Request::Gradient {
            class: class as u32,
            input: RawTensor::from(video),
        })?;
        let d = video.dims();
        if out.dims != [d.frames, d.height, d.width, d.channels] {
            return Err(Error::Protocol(format!(
                "gradient dims {:?} do not match input {d}",
                out.dims
            )));
        }
        Ok(out.to_f64())
    }

    fn name(&self) -> String {
        self.label.clone()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn request_round_trip() {
        let t = RawTensor::new(vec![2, 1, 1, 1], vec![0.5, -1.0]).unwrap();
        for req in [
            Request::Forward(t.clone()),
            Request::Gradient {
                class: 7,
                input: t.clone(),
            },
        ] {
            let mut buf = Vec::new();
            write_request(&mut buf, &req).unwrap();
            assert_eq!(read_request(buf.as_slice()).unwrap(), Some(req));
        }
        assert_eq!(read_request(&[][..]).unwrap(), None);
    }

    #[test]
    fn malformed_inputs_are_protocol_errors() {
        assert!(matches!(read_request(&[0x09][..]), Err(Error::Protocol(_))));
        assert!(matches!(read_request(&[0x02, 1, 0][..]), Err(Error::Protocol(_))));
        assert!(matches!(read_response(&b"\0XXXX"[..]), Err(Error::Protocol(_))));
        assert!(matches!(read_response(&[3u8][..]), Err(Error::Model(_))));
    }
}
