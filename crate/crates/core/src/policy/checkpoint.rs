//! `CPOL1` checkpoint files.
//!
//! Layout: the line `CPOL1`, one header line of `key=value` pairs, then the
//! parameter vector as little-endian `f64`s.

use std::fs;
use std::path::Path;

use super::distribution::HeadKind;
use super::network::{NetSpec, PolicyNetwork};
use crate::{Error, Result};

const MAGIC: &str = "CPOL1";

pub fn encode(net: &PolicyNetwork) -> Vec<u8> {
    let s = net.spec();
    let hidden: Vec<String> = s.hidden.iter().map(usize::to_string).collect();
    let head = match s.head {
        HeadKind::Gaussian => "gaussian",
        HeadKind::Categorical => "categorical",
    };
    let params = net.parameter_vector();
    let header = format!(
        "{MAGIC}\nobs_dim={} act_dim={} hidden={} head={head} shared_trunk={} n_params={}\n",
        s.obs_dim,
        s.act_dim,
        hidden.join(","),
        u8::from(s.shared_trunk),
        params.len()
    );
    let mut out = header.into_bytes();
    for p in params {
        out.extend_from_slice(&p.to_le_bytes());
    }
    out
}

fn bad(msg: impl Into<String>) -> Error {
    Error::Checkpoint(msg.into())
}

pub fn decode(bytes: &[u8]) -> Result<PolicyNetwork> {
    let mut lines = bytes.splitn(3, |&b| b == b'\n');
    if lines.next() != Some(MAGIC.as_bytes()) {
        return Err(bad("missing CPOL1 magic"));
    }
    let header = std::str::from_utf8(lines.next().ok_or_else(|| bad("missing header"))?)
        .map_err(|_| bad("header is not utf-8"))?;
    let body = lines.next().unwrap_or_default();

    let (mut obs_dim, mut act_dim, mut hidden, mut head, mut shared, mut n_params) =
        (None, None, None, None, None, None);
    for field in header.split_whitespace() {
        let (k, v) = field
            .split_once('=')
            .ok_or_else(|| bad(format!("malformed field {field:?}")))?;
        let num = |v: &str| v.parse::<usize>().map_err(|_| bad(format!("bad value for {k}: {v:?}")));
        match k {
            "obs_dim" => obs_dim = Some(num(v)?),
            "act_dim" => act_dim = Some(num(v)?),
            "hidden" => {
                hidden = Some(if v.is_empty() {
                    Vec::new()
                } else {
                    v.split(',').map(num).collect::<Result<Vec<_>>>()?
                })
            }
            "head" => {
                head = Some(match v {
                    "gaussian" => HeadKind::Gaussian,
                    "categorical" => HeadKind::Categorical,
                    _ => return Err(bad(format!("unknown head {v:?}"))),
                })
            }
            "shared_trunk" => shared = Some(num(v)? != 0),
            "n_params" => n_params = Some(num(v)?),
            _ => return Err(bad(format!("unknown header key {k:?}"))),
        }
    }
    let missing = |name: &str| bad(format!("header lacks {name}"));
    let spec = NetSpec {
        obs_dim: obs_dim.ok_or_else(|| missing("obs_dim"))?,
        act_dim: act_dim.ok_or_else(|| missing("act_dim"))?,
        hidden: hidden.ok_or_else(|| missing("hidden"))?,
        head: head.ok_or_else(|| missing("head"))?,
        shared_trunk: shared.unwrap_or(false),
    };
    let n_params = n_params.ok_or_else(|| missing("n_params"))?;
    if body.len() != 8 * n_params {
        return Err(bad(format!(
            "expected {} parameter bytes, found {}",
            8 * n_params,
            body.len()
        )));
    }
    let params: Vec<f64> = body
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
        .collect();
    let mut net = PolicyNetwork::zeros(spec)?;
    net.load_parameter_vector(&params)?;
    Ok(net)
}

pub fn save(net: &PolicyNetwork, path: &Path) -> Result<()> {
    fs::write(path, encode(net)).map_err(|e| Error::io(path, e))
}

pub fn load(path: &Path) -> Result<PolicyNetwork> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes).map_err(|e| match e {
        Error::Checkpoint(m) => Error::Checkpoint(format!("{}: {m}", path.display())),
        other => other,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_is_bit_exact() {
        for (hidden, head, shared) in [
            (vec![8, 4], HeadKind::Gaussian, false),
            (vec![], HeadKind::Categorical, false),
            (vec![3], HeadKind::Categorical, true),
        ] {
            let mut spec = NetSpec::new(5, 3, hidden, head);
            spec.shared_trunk = shared;
            let mut net = PolicyNetwork::init(spec, 11).unwrap();
            // Values that survive only a bit-exact encoding.
            net.params_mut()[0].data_mut()[0] = f64::MIN_POSITIVE / 3.0;
            net.params_mut()[0].data_mut()[1] = -0.0;
            let back = decode(&encode(&net)).unwrap();
            let a: Vec<u64> = net.parameter_vector().iter().map(|x| x.to_bits()).collect();
            let b: Vec<u64> = back.parameter_vector().iter().map(|x| x.to_bits()).collect();
            assert_eq!(a, b);
            assert_eq!(back.spec(), net.spec());
        }
    }

    #[test]
    fn corrupt_input_rejected() {
        let net = PolicyNetwork::init(NetSpec::new(2, 2, vec![2], HeadKind::Gaussian), 0).unwrap();
        let bytes = encode(&net);
        assert!(decode(&bytes[..bytes.len() - 1]).is_err());
        assert!(decode(b"CPOL2\n").is_err());
        let mut wrong = bytes.clone();
        wrong[0] = b'X';
        assert!(decode(&wrong).is_err());
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("p.cpol");
        let net = PolicyNetwork::init(NetSpec::new(2, 1, vec![3], HeadKind::Gaussian), 1).unwrap();
        save(&net, &path).unwrap();
        assert_eq!(load(&path).unwrap(), net);
    }
}
