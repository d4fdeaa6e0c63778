//! Binary containers for wavefunction snapshots and world ensembles, plus a
//! CSV export for small grids.
//!
//! All numbers are little-endian. Wavefunction layout:
//!
//! ```text
//! "MWWF" | version u32 | dims u32 | dims x (n u64, lo f64, hi f64)
//!        | components u32 | time f64 | values (re f64, im f64)...
//! ```
//!
//! Values are component-major, then row-major over cells. Ensemble layout:
//!
//! ```text
//! "MWEN" | version u32 | dims u32 | count u64 | birth_time f64 | time f64
//!        | seed u64 | count x (id u64, alive u8, q f64 x dims, u f64 x dims)
//! ```

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian as LE, ReadBytesExt, WriteBytesExt};
use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::grid::make_grid;
use crate::wavefunction::Wavefunction;
use crate::worlds::WorldEnsemble;

pub const WAVEFUNCTION_MAGIC: &[u8; 4] = b"MWWF";
pub const ENSEMBLE_MAGIC: &[u8; 4] = b"MWEN";
pub const FORMAT_VERSION: u32 = 1;
/// Largest grid exported as CSV.
pub const CSV_MAX_CELLS: usize = 1 << 16;

fn read_header<R: Read>(r: &mut R, magic: &[u8; 4]) -> Result<()> {
    let mut found = [0u8; 4];
    r.read_exact(&mut found)?;
    if &found != magic {
        return Err(Error::Container(format!(
            "bad magic {:?}, expected {:?}",
            String::from_utf8_lossy(&found),
            String::from_utf8_lossy(magic)
        )));
    }
    let version = r.read_u32::<LE>()?;
    if version != FORMAT_VERSION {
        return Err(Error::Container(format!("unsupported version {version}")));
    }
    Ok(())
}

pub fn write_wavefunction<W: Write>(w: &mut W, psi: &Wavefunction) -> Result<()> {
    let grid = psi.grid();
    w.write_all(WAVEFUNCTION_MAGIC)?;
    w.write_u32::<LE>(FORMAT_VERSION)?;
    w.write_u32::<LE>(grid.dims() as u32)?;
    for (&n, &(lo, hi)) in grid.points().iter().zip(grid.extent()) {
        w.write_u64::<LE>(n as u64)?;
        w.write_f64::<LE>(lo)?;
        w.write_f64::<LE>(hi)?;
    }
    w.write_u32::<LE>(psi.components() as u32)?;
    w.write_f64::<LE>(psi.time())?;
    for z in psi.values() {
        w.write_f64::<LE>(z.re)?;
        w.write_f64::<LE>(z.im)?;
    }
    Ok(())
}

pub fn read_wavefunction<R: Read>(r: &mut R) -> Result<Wavefunction> {
    read_header(r, WAVEFUNCTION_MAGIC)?;
    let dims = r.read_u32::<LE>()? as usize;
    if dims == 0 || dims > 16 {
        return Err(Error::Container(format!("implausible dimension count {dims}")));
    }
    let mut extent = Vec::with_capacity(dims);
    let mut points = Vec::with_capacity(dims);
    for _ in 0..dims {
        points.push(r.read_u64::<LE>()? as usize);
        extent.push((r.read_f64::<LE>()?, r.read_f64::<LE>()?));
    }
    let grid = make_grid(&extent, &points)?;
    let components = r.read_u32::<LE>()? as usize;
    let time = r.read_f64::<LE>()?;
    let len = grid
        .cell_count()
        .checked_mul(components)
        .ok_or_else(|| Error::Container("payload size overflows".into()))?;
    let mut values = Vec::with_capacity(len);
    for _ in 0..len {
        let re = r.read_f64::<LE>()?;
        let im = r.read_f64::<LE>()?;
        values.push(Complex64::new(re, im));
    }
    let mut rest = [0u8; 1];
    if r.read(&mut rest)? != 0 {
        return Err(Error::Container("trailing bytes after payload".into()));
    }
    Wavefunction::new(grid, components, values, time)
}

pub fn save_wavefunction(path: &Path, psi: &Wavefunction) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_wavefunction(&mut w, psi)?;
    w.flush()?;
    Ok(())
}

pub fn load_wavefunction(path: &Path) -> Result<Wavefunction> {
    read_wavefunction(&mut BufReader::new(File::open(path)?))
}

pub fn write_ensemble<W: Write>(w: &mut W, e: &WorldEnsemble) -> Result<()> {
    w.write_all(ENSEMBLE_MAGIC)?;
    w.write_u32::<LE>(FORMAT_VERSION)?;
    w.write_u32::<LE>(e.dims() as u32)?;
    w.write_u64::<LE>(e.len() as u64)?;
    w.write_f64::<LE>(e.birth_time())?;
    w.write_f64::<LE>(e.time())?;
    w.write_u64::<LE>(e.seed())?;
    for i in 0..e.len() {
        w.write_u64::<LE>(e.ids()[i])?;
        w.write_u8(e.alive()[i] as u8)?;
        for &x in e.position(i).iter().chain(e.unwrapped(i)) {
            w.write_f64::<LE>(x)?;
        }
    }
    Ok(())
}

pub fn read_ensemble<R: Read>(r: &mut R) -> Result<WorldEnsemble> {
    read_header(r, ENSEMBLE_MAGIC)?;
    let dims = r.read_u32::<LE>()? as usize;
    let count = r.read_u64::<LE>()? as usize;
    let birth_time = r.read_f64::<LE>()?;
    let time = r.read_f64::<LE>()?;
    let seed = r.read_u64::<LE>()?;
    let mut ids = Vec::new();
    let mut alive = Vec::new();
    let mut positions = Vec::new();
    let mut unwrapped = Vec::new();
    for _ in 0..count {
        ids.push(r.read_u64::<LE>()?);
        alive.push(match r.read_u8()? {
            0 => false,
            1 => true,
            b => return Err(Error::Container(format!("bad alive flag {b}"))),
        });
        for _ in 0..dims {
            positions.push(r.read_f64::<LE>()?);
        }
        for _ in 0..dims {
            unwrapped.push(r.read_f64::<LE>()?);
        }
    }
    WorldEnsemble::from_raw(dims, ids, positions, unwrapped, alive, birth_time, time, seed)
}

pub fn save_ensemble(path: &Path, e: &WorldEnsemble) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_ensemble(&mut w, e)?;
    w.flush()?;
    Ok(())
}

pub fn load_ensemble(path: &Path) -> Result<WorldEnsemble> {
    read_ensemble(&mut BufReader::new(File::open(path)?))
}

/// CSV rows `x_1..x_D,re_0,im_0[,re_1,im_1]` per cell.
pub fn write_wavefunction_csv<W: Write>(w: W, psi: &Wavefunction) -> Result<()> {
    let grid = psi.grid();
    if grid.cell_count() > CSV_MAX_CELLS {
        return Err(Error::InvalidArgument(format!(
            "{} cells is too many for CSV export (limit {CSV_MAX_CELLS})",
            grid.cell_count()
        )));
    }
    let mut writer = csv::Writer::from_writer(w);
    let mut header: Vec<String> = (1..=grid.dims()).map(|d| format!("x_{d}")).collect();
    for c in 0..psi.components() {
        header.push(format!("re_{c}"));
        header.push(format!("im_{c}"));
    }
    writer.write_record(&header)?;
    for (flat, x) in grid.centers().enumerate() {
        let mut row: Vec<String> = x.iter().map(|v| v.to_string()).collect();
        for c in 0..psi.components() {
            let z = psi.component(c)[flat];
            row.push(z.re.to_string());
            row.push(z.im.to_string());
        }
        writer.write_record(&row)?;
    }
    writer.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::states::gaussian;
    use crate::worlds::sample_worlds;

    #[test]
    fn wavefunction_round_trip() {
        let g = make_grid(&[(-4.0, 4.0), (0.0, 2.0)], &[16, 8]).unwrap();
        let a = gaussian(&g, &[0.5, 1.0], &[1.0, 0.4], &[1.0, -2.0]).unwrap();
        let psi = Wavefunction::spinor(&a, &a.scaled(Complex64::new(0.0, 0.5))).unwrap().with_time(1.25);
        let mut buf = Vec::new();
        write_wavefunction(&mut buf, &psi).unwrap();
        assert_eq!(&buf[..4], b"MWWF");
        assert_eq!(buf.len(), 4 + 4 + 4 + 2 * 24 + 4 + 8 + 2 * 128 * 16);
        let back = read_wavefunction(&mut buf.as_slice()).unwrap();
        assert_eq!(back, psi);
    }

    #[test]
    fn corrupt_containers_are_rejected() {
        let g = make_grid(&[(0.0, 1.0)], &[8]).unwrap();
        let psi = Wavefunction::from_fn(&g, |x| Complex64::new(x[0], 0.0)).unwrap();
        let mut buf = Vec::new();
        write_wavefunction(&mut buf, &psi).unwrap();
        let mut bad = buf.clone();
        bad[0] = b'X';
        assert!(matches!(read_wavefunction(&mut bad.as_slice()), Err(Error::Container(_))));
        assert!(read_wavefunction(&mut &buf[..buf.len() - 3]).is_err());
        let mut long = buf.clone();
        long.push(0);
        assert!(matches!(read_wavefunction(&mut long.as_slice()), Err(Error::Container(_))));
    }

    #[test]
    fn ensemble_round_trip() {
        let g = make_grid(&[(-4.0, 4.0), (-4.0, 4.0)], &[16, 16]).unwrap();
        let psi = gaussian(&g, &[0.0, 0.0], &[1.0, 1.0], &[0.0, 0.0]).unwrap();
        let e = sample_worlds(&psi, 50, 4).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("worlds.bin");
        save_ensemble(&path, &e).unwrap();
        assert_eq!(load_ensemble(&path).unwrap(), e);
    }

    #[test]
    fn csv_export() {
        let g = make_grid(&[(0.0, 1.0)], &[8]).unwrap();
        let psi = Wavefunction::from_fn(&g, |x| Complex64::new(x[0], -1.0)).unwrap();
        let mut buf = Vec::new();
        write_wavefunction_csv(&mut buf, &psi).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().next().unwrap(), "x_1,re_0,im_0");
        assert_eq!(text.lines().nth(1).unwrap(), "0.0625,0.0625,-1");
    }
}
