//! Minimal external model for exercising the subprocess protocol.
//!
//! Usage:
//!   aosa-stub-model fixed 0.1,0.2,0.7
//!   aosa-stub-model linear WEIGHTS.aost
//!   aosa-stub-model garbage | hang | exit

use std::io::{self, BufReader, BufWriter, Write};
use std::process::ExitCode;

use aosa::model::external::{read_request, write_response, Request};
use aosa::tensor_io::RawTensor;

enum Behavior {
    Fixed(Vec<f32>),
    Linear(RawTensor),
    Garbage,
    Hang,
    Exit,
}

fn parse_args() -> Result<Behavior, String> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    match args.first().map(String::as_str) {
        Some("fixed") => {
            let list = args.get(1).ok_or("fixed needs a score list")?;
            let scores = list
                .split(',')
                .map(|s| s.trim().parse::<f32>().map_err(|e| e.to_string()))
                .collect::<Result<Vec<_>, _>>()?;
            Ok(Behavior::Fixed(scores))
        }
        Some("linear") => {
            let path = args.get(1).ok_or("linear needs a weight tensor path")?;
            Ok(Behavior::Linear(RawTensor::load(path).map_err(|e| e.to_string())?))
        }
        Some("garbage") => Ok(Behavior::Garbage),
        Some("hang") => Ok(Behavior::Hang),
        Some("exit") => Ok(Behavior::Exit),
        _ => Err("usage: aosa-stub-model fixed LIST | linear PATH | garbage | hang | exit".into()),
    }
}

fn main() -> ExitCode {
    let behavior = match parse_args() {
        Ok(b) => b,
        Err(msg) => {
            eprintln!("{msg}");
            return ExitCode::from(2);
        }
    };
    let mut input = BufReader::new(io::stdin().lock());
    let mut output = BufWriter::new(io::stdout().lock());
    loop {
        let req = match read_request(&mut input) {
            Ok(Some(r)) => r,
            Ok(None) => return ExitCode::SUCCESS,
            Err(e) => {
                eprintln!("stub: {e}");
                return ExitCode::from(1);
            }
        };
        let reply = match (&behavior, &req) {
            (Behavior::Exit, _) => return ExitCode::from(3),
            (Behavior::Hang, _) => {
                std::thread::sleep(std::time::Duration::from_secs(3600));
                return ExitCode::SUCCESS;
            }
            (Behavior::Garbage, _) => {
                // Status ok followed by a tensor with a corrupt header.
                let _ = output.write_all(b"\0JUNK\x01\x09\0\0");
                let _ = output.flush();
                continue;
            }
            (Behavior::Fixed(scores), Request::Forward(_)) => {
                RawTensor::new(vec![scores.len()], scores.clone())
            }
            (Behavior::Fixed(_), Request::Gradient { input, .. }) => {
                RawTensor::new(input.dims.clone(), vec![0.0; input.data.len()])
            }
            (Behavior::Linear(w), Request::Forward(x)) => {
                if w.data.len() != x.data.len() {
                    let _ = write_response(&mut output, Err(4));
                    continue;
                }
                let dot: f64 = w.data.iter().zip(&x.data).map(|(a, b)| *a as f64 * *b as f64).sum();
                RawTensor::new(vec![1], vec![dot as f32])
            }
            (Behavior::Linear(w), Request::Gradient { .. }) => Ok(w.clone()),
        };
        let sent = match reply {
            Ok(t) => write_response(&mut output, Ok(&t)),
            Err(_) => write_response(&mut output, Err(5)),
        };
        if sent.is_err() {
            return ExitCode::from(1);
        }
    }
}
