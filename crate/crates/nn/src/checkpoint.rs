//! Binary parameter snapshots: magic, version, architecture fingerprint,
//! parameter count, then little-endian `f64` parameters.

use std::io::{Read, Write};

use crate::error::{NnError, Result};
use crate::network::Network;
use crate::spec::NetworkSpec;

const MAGIC: &[u8; 8] = b"MCNOMANN";
const VERSION: u32 = 1;

pub fn write_params<W: Write>(net: &Network, mut w: W) -> Result<()> {
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&net.spec().fingerprint().to_le_bytes())?;
    w.write_all(&(net.param_count() as u64).to_le_bytes())?;
    for v in net.flat_params() {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

/// Loads parameters for `spec`; refuses snapshots of a different architecture.
pub fn read_params<R: Read>(spec: NetworkSpec, mut r: R) -> Result<Network> {
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(NnError::Checkpoint("bad magic".into()));
    }
    let mut b4 = [0u8; 4];
    r.read_exact(&mut b4)?;
    let version = u32::from_le_bytes(b4);
    if version != VERSION {
        return Err(NnError::Checkpoint(format!("unsupported version {version}")));
    }
    let mut b8 = [0u8; 8];
    r.read_exact(&mut b8)?;
    let fingerprint = u64::from_le_bytes(b8);
    if fingerprint != spec.fingerprint() {
        return Err(NnError::Checkpoint(format!(
            "architecture fingerprint {fingerprint:016x} does not match {:016x}",
            spec.fingerprint()
        )));
    }
    r.read_exact(&mut b8)?;
    let count = u64::from_le_bytes(b8) as usize;
    if count != spec.param_count() {
        return Err(NnError::Checkpoint(format!(
            "parameter count {count} does not match {}",
            spec.param_count()
        )));
    }
    let mut flat = Vec::with_capacity(count);
    for _ in 0..count {
        r.read_exact(&mut b8)?;
        flat.push(f64::from_le_bytes(b8));
    }
    Network::from_flat(spec, &flat)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spec::{Activation, LayerSpec};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn spec(width: usize) -> NetworkSpec {
        NetworkSpec::new(
            vec![3],
            vec![
                LayerSpec::Dense {
                    inputs: 3,
                    outputs: width,
                    activation: Activation::Relu,
                },
                LayerSpec::Residual { width },
            ],
        )
        .unwrap()
    }

    #[test]
    fn round_trip_is_bitwise() {
        let net = Network::new(spec(5), &mut ChaCha8Rng::seed_from_u64(1));
        let mut buf = Vec::new();
        write_params(&net, &mut buf).unwrap();
        let back = read_params(spec(5), buf.as_slice()).unwrap();
        assert_eq!(back, net);
    }

    #[test]
    fn architecture_mismatch_refused() {
        let net = Network::new(spec(5), &mut ChaCha8Rng::seed_from_u64(1));
        let mut buf = Vec::new();
        write_params(&net, &mut buf).unwrap();
        assert!(matches!(
            read_params(spec(6), buf.as_slice()),
            Err(NnError::Checkpoint(_))
        ));
    }

    #[test]
    fn truncated_snapshot_is_io_error() {
        let net = Network::new(spec(5), &mut ChaCha8Rng::seed_from_u64(1));
        let mut buf = Vec::new();
        write_params(&net, &mut buf).unwrap();
        buf.truncate(buf.len() - 3);
        assert!(matches!(read_params(spec(5), buf.as_slice()), Err(NnError::Io(_))));
    }
}
