//! Trajectory files and byte-stable numeric formatting.
//!
//! Binary layout (little endian):
//!
//! ```text
//! "IPSK" | version u16 | N u32 | d u32 | L u32 | dt f64 | sigma f64 | (L+1)*N*d f64
//! ```
//!
//! States are stored time-major, particle-major, coordinate-minor.

use std::io::{Read, Write};

use crate::error::{Error, Result};
use crate::sim::{Trajectory, TrajectoryMeta};

pub const MAGIC: &[u8; 4] = b"IPSK";
pub const VERSION: u16 = 1;

/// Formats with 17 significant digits so every `f64` round-trips.
pub fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}

pub fn write_trajectory<W: Write>(mut w: W, traj: &Trajectory) -> Result<()> {
    let to_u32 = |v: usize, what: &str| u32::try_from(v).map_err(|_| Error::Format(format!("{what} = {v} does not fit in u32")));
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&to_u32(traj.n(), "N")?.to_le_bytes())?;
    w.write_all(&to_u32(traj.d(), "d")?.to_le_bytes())?;
    w.write_all(&to_u32(traj.steps(), "L")?.to_le_bytes())?;
    w.write_all(&traj.dt().to_le_bytes())?;
    w.write_all(&traj.meta.sigma.to_le_bytes())?;
    let mut buf = Vec::with_capacity(traj.states().len() * 8);
    for x in traj.states() {
        buf.extend_from_slice(&x.to_le_bytes());
    }
    w.write_all(&buf)?;
    w.flush()?;
    Ok(())
}

/// Reads a trajectory; seed and stream are not part of the format and read back as 0.
pub fn read_trajectory<R: Read>(mut r: R) -> Result<Trajectory> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(Error::Format(format!("bad magic {magic:?}")));
    }
    let mut b2 = [0u8; 2];
    r.read_exact(&mut b2)?;
    let version = u16::from_le_bytes(b2);
    if version != VERSION {
        return Err(Error::Format(format!("unsupported version {version}")));
    }
    let mut b4 = [0u8; 4];
    let mut next_u32 = |r: &mut R| -> Result<usize> {
        r.read_exact(&mut b4)?;
        Ok(u32::from_le_bytes(b4) as usize)
    };
    let n = next_u32(&mut r)?;
    let d = next_u32(&mut r)?;
    let steps = next_u32(&mut r)?;
    let mut b8 = [0u8; 8];
    r.read_exact(&mut b8)?;
    let dt = f64::from_le_bytes(b8);
    r.read_exact(&mut b8)?;
    let sigma = f64::from_le_bytes(b8);
    let len =
        (steps + 1).checked_mul(n).and_then(|v| v.checked_mul(d)).ok_or_else(|| Error::Format("header dimensions overflow".into()))?;
    let mut raw = vec![0u8; len * 8];
    r.read_exact(&mut raw)?;
    let mut rest = Vec::new();
    r.read_to_end(&mut rest)?;
    if !rest.is_empty() {
        return Err(Error::Format(format!("{} trailing bytes after state data", rest.len())));
    }
    let states = raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
    let meta = TrajectoryMeta { seed: 0, stream: 0, sigma, kernel_id: String::new(), gap: 1 };
    Trajectory::new(n, d, dt, states, meta).map_err(|e| Error::Format(e.to_string()))
}

/// CSV with header `t,x_1_1,...,x_N_d`, one row per time.
pub fn write_trajectory_csv<W: Write>(mut w: W, traj: &Trajectory) -> Result<()> {
    let mut header = String::from("t");
    for i in 1..=traj.n() {
        for k in 1..=traj.d() {
            header.push_str(&format!(",x_{i}_{k}"));
        }
    }
    writeln!(w, "{header}")?;
    for (l, t) in traj.times().into_iter().enumerate() {
        let mut row = fmt_f64(t);
        for x in traj.state(l) {
            row.push(',');
            row.push_str(&fmt_f64(*x));
        }
        writeln!(w, "{row}")?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{InitialDistribution, InteractionKernel, SystemParams};
    use crate::sim::{simulate, NoiseStream};

    fn sample() -> Trajectory {
        let p = SystemParams::new(3, 2, 0.25, InteractionKernel::opinion()).unwrap();
        let init = InitialDistribution::IsotropicGaussian { mean: 0.0, scale: 1.0 };
        simulate(&p, &init, 0.05, 0.01, NoiseStream::new(4, 1)).unwrap()
    }

    #[test]
    fn binary_round_trip_is_bit_exact() {
        let t = sample();
        let mut buf = Vec::new();
        write_trajectory(&mut buf, &t).unwrap();
        assert_eq!(&buf[..4], b"IPSK");
        assert_eq!(buf.len(), 4 + 2 + 12 + 16 + 6 * 6 * 8);
        let back = read_trajectory(&buf[..]).unwrap();
        assert_eq!(back.states(), t.states());
        assert_eq!(back.dt().to_bits(), t.dt().to_bits());
        assert_eq!(back.meta.sigma, 0.25);
        assert_eq!((back.n(), back.d(), back.steps()), (3, 2, 5));
    }

    #[test]
    fn rejects_corrupt_files() {
        let t = sample();
        let mut buf = Vec::new();
        write_trajectory(&mut buf, &t).unwrap();
        let mut bad = buf.clone();
        bad[0] = b'X';
        assert!(matches!(read_trajectory(&bad[..]), Err(Error::Format(_))));
        assert!(read_trajectory(&buf[..buf.len() - 3]).is_err());
        let mut long = buf.clone();
        long.push(0);
        assert!(matches!(read_trajectory(&long[..]), Err(Error::Format(_))));
    }

    #[test]
    fn csv_layout() {
        let t = sample();
        let mut buf = Vec::new();
        write_trajectory_csv(&mut buf, &t).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next().unwrap(), "t,x_1_1,x_1_2,x_2_1,x_2_2,x_3_1,x_3_2");
        let row: Vec<f64> = lines.nth(1).unwrap().split(',').map(|s| s.parse().unwrap()).collect();
        assert_eq!(row[0], 0.01);
        assert_eq!(&row[1..], t.state(1));
        assert_eq!(text.lines().count(), 7);
    }
}
