//! key=value config files, spliced into argv ahead of explicit flags so that
//! flags win.

use std::ffi::OsString;
use std::fs;
use std::path::Path;

pub const ENV_VAR: &str = "AOSA_CONFIG";

/// Turns `key=value` lines into `--key value` tokens. `key=true` becomes a
/// bare `--key`, `key=false` is dropped. `#` starts a comment.
pub fn config_tokens(text: &str) -> Result<Vec<OsString>, String> {
    let mut out = Vec::new();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| format!("config line {}: expected key=value, got {raw:?}", n + 1))?;
        let (k, v) = (k.trim().trim_start_matches("--"), v.trim());
        match v {
            "true" => out.push(format!("--{k}").into()),
            "false" => {}
            _ => {
                out.push(format!("--{k}").into());
                out.push(v.into());
            }
        }
    }
    Ok(out)
}

/// Inserts config tokens right after the subcommand name. The file comes
/// from `--config PATH` when present, else from `AOSA_CONFIG`.
pub fn expand_args(mut args: Vec<OsString>) -> Result<Vec<OsString>, String> {
    let mut explicit = None;
    if let Some(i) = args.iter().position(|a| a == "--config") {
        if i + 1 >= args.len() {
            return Err("--config needs a path".into());
        }
        explicit = Some(args.remove(i + 1));
        args.remove(i);
    }
    let path = explicit.or_else(|| std::env::var_os(ENV_VAR).filter(|p| !p.is_empty()));
    let Some(path) = path else { return Ok(args) };
    let text = fs::read_to_string(Path::new(&path))
        .map_err(|e| format!("cannot read config {}: {e}", Path::new(&path).display()))?;
    let tokens = config_tokens(&text)?;
    // argv[0] then the subcommand; only splice when a subcommand is present.
    if args.len() < 2 || args[1].to_string_lossy().starts_with('-') {
        return Ok(args);
    }
    let tail = args.split_off(2);
    args.extend(tokens);
    args.extend(tail);
    Ok(args)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lines_to_tokens() {
        let t = config_tokens("method=approx\n# note\nK = 3 # inline\nnormalize-coverage=true\nno-adjust=false\n").unwrap();
        let t: Vec<String> = t.into_iter().map(|s| s.into_string().unwrap()).collect();
        assert_eq!(t, ["--method", "approx", "--K", "3", "--normalize-coverage"]);
        assert!(config_tokens("novalue").is_err());
    }
}
