//! CSV and JSON persistence. Floats are written with 17 significant
//! digits so that every file round-trips bit-exactly.

use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::appendix::{GriddedMeasure, TracePoint};
use crate::error::{Error, Result};
use crate::perturb::{PerturbationModel, PerturbedPointSet};
use crate::pointset::{Descriptor, PointSet};
use crate::recover::StructureFactorEstimate;
use crate::spectral::{AutocorrEstimate, SpectralEstimate, SpectralKind};

/// `x` with 17 significant digits.
pub fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}

fn parse_f64(field: &str) -> Result<f64> {
    field.trim().parse().map_err(|_| Error::invalid(format!("not a number: {field:?}")))
}

fn parse_usize(field: &str) -> Result<usize> {
    field.trim().parse().map_err(|_| Error::invalid(format!("not a count: {field:?}")))
}

/// Buffered file writer; parent directories are created.
pub fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent)?;
    }
    Ok(BufWriter::new(File::create(path)?))
}

fn numbered(prefix: &str, n: usize) -> impl Iterator<Item = String> + '_ {
    (1..=n).map(move |i| format!("{prefix}{i}"))
}

fn csv_writer<W: Write>(w: W) -> csv::Writer<W> {
    csv::WriterBuilder::new().from_writer(w)
}

fn csv_reader<R: Read>(r: R) -> csv::Reader<R> {
    csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(r)
}

/// Counts columns whose header starts with `prefix`.
fn prefixed_columns(headers: &csv::StringRecord, prefix: &str) -> usize {
    headers.iter().filter(|h| h.starts_with(prefix)).count()
}

pub fn write_json<T: Serialize, W: Write>(mut w: W, value: &T) -> Result<()> {
    serde_json::to_writer_pretty(&mut w, value)?;
    writeln!(w)?;
    Ok(())
}

pub fn read_json<T: for<'de> Deserialize<'de>, R: Read>(r: R) -> Result<T> {
    Ok(serde_json::from_reader(r)?)
}

// ---------------------------------------------------------------------------
// Point sets

/// Metadata stored next to a point-set CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PointSetSidecar {
    pub dim: usize,
    pub descriptor: Descriptor,
    pub separation_radius: f64,
    pub claimed_density: Option<f64>,
    pub generation_radius: f64,
    #[serde(default)]
    pub label_dim: usize,
}

/// `points.csv` -> `points.json`.
pub fn sidecar_path(csv_path: &Path) -> PathBuf {
    csv_path.with_extension("json")
}

/// Header `x1..xd`, then `m1..mk` when the points carry lattice labels.
pub fn write_points_csv<W: Write>(w: W, ps: &PointSet) -> Result<()> {
    let mut out = csv_writer(w);
    let k = if ps.label(0).is_some() { ps.label_dim() } else { 0 };
    out.write_record(numbered("x", ps.dim()).chain(numbered("m", k)))?;
    for i in 0..ps.len() {
        let mut row: Vec<String> = ps.point(i).iter().map(|x| fmt_f64(*x)).collect();
        if let Some(l) = ps.label(i) {
            row.extend(l.iter().map(i64::to_string));
        }
        out.write_record(&row)?;
    }
    out.flush()?;
    Ok(())
}

pub fn write_pointset(ps: &PointSet, csv_path: &Path) -> Result<()> {
    write_points_csv(create(csv_path)?, ps)?;
    let sidecar = PointSetSidecar {
        dim: ps.dim(),
        descriptor: ps.descriptor.clone(),
        separation_radius: ps.separation_radius,
        claimed_density: ps.claimed_density,
        generation_radius: ps.generation_radius,
        label_dim: if ps.label(0).is_some() { ps.label_dim() } else { 0 },
    };
    let mut w = create(&sidecar_path(csv_path))?;
    write_json(&mut w, &sidecar)?;
    w.flush()?;
    Ok(())
}

pub fn read_pointset(csv_path: &Path) -> Result<PointSet> {
    let meta: PointSetSidecar = read_json(File::open(sidecar_path(csv_path))?)?;
    let mut rdr = csv_reader(File::open(csv_path)?);
    let headers = rdr.headers()?.clone();
    let d = prefixed_columns(&headers, "x");
    let k = prefixed_columns(&headers, "m");
    if d != meta.dim || k != meta.label_dim {
        return Err(Error::invalid(format!(
            "CSV has {d} coordinate and {k} label columns, sidecar says {} and {}",
            meta.dim, meta.label_dim
        )));
    }
    let mut coords = Vec::new();
    let mut labels = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        for f in rec.iter().take(d) {
            coords.push(parse_f64(f)?);
        }
        for f in rec.iter().skip(d).take(k) {
            labels.push(f.parse::<i64>().map_err(|_| Error::invalid(format!("not a label: {f:?}")))?);
        }
    }
    if k > 0 {
        PointSet::from_labelled_points(
            d,
            coords,
            labels,
            k,
            meta.generation_radius,
            Some(meta.separation_radius),
            meta.claimed_density,
            meta.descriptor,
        )
    } else {
        PointSet::from_points(
            d,
            coords,
            meta.generation_radius,
            Some(meta.separation_radius),
            meta.claimed_density,
            meta.descriptor,
        )
    }
}

/// Header `xi1..xid`, rows aligned with the base CSV.
pub fn write_displacements_csv<W: Write>(w: W, pps: &PerturbedPointSet) -> Result<()> {
    let mut out = csv_writer(w);
    out.write_record(numbered("xi", pps.dim()))?;
    for row in pps.displacements().chunks_exact(pps.dim()) {
        out.write_record(row.iter().map(|x| fmt_f64(*x)))?;
    }
    out.flush()?;
    Ok(())
}

/// Base CSV with sidecar, displacement CSV, and the model as JSON next to
/// the displacement file.
pub fn write_perturbed(pps: &PerturbedPointSet, base_path: &Path, displacement_path: &Path) -> Result<()> {
    write_pointset(pps.base(), base_path)?;
    write_displacements_csv(create(displacement_path)?, pps)?;
    let mut w = create(&sidecar_path(displacement_path))?;
    write_json(&mut w, pps.model())?;
    w.flush()?;
    Ok(())
}

pub fn read_perturbed(base_path: &Path, displacement_path: &Path) -> Result<PerturbedPointSet> {
    let base = read_pointset(base_path)?;
    let model: PerturbationModel = read_json(File::open(sidecar_path(displacement_path))?)?;
    let mut rdr = csv_reader(File::open(displacement_path)?);
    let mut displacements = Vec::with_capacity(base.coords().len());
    for rec in rdr.records() {
        for f in rec?.iter() {
            displacements.push(parse_f64(f)?);
        }
    }
    PerturbedPointSet::new(base, displacements, model)
}

// ---------------------------------------------------------------------------
// Spectral outputs

/// Header `lambda_1..lambda_d,re,im,R,kind`.
pub fn write_spectrum_csv<W: Write>(w: W, dim: usize, estimates: &[SpectralEstimate]) -> Result<()> {
    let mut out = csv_writer(w);
    out.write_record(numbered("lambda_", dim).chain(["re", "im", "R", "kind"].map(String::from)))?;
    for e in estimates {
        if e.frequency.len() != dim {
            return Err(Error::DimensionMismatch { expected: dim, got: e.frequency.len() });
        }
        let mut row: Vec<String> = e.frequency.iter().map(|x| fmt_f64(*x)).collect();
        row.extend([fmt_f64(e.value.re), fmt_f64(e.value.im), fmt_f64(e.radius), e.kind.as_str().to_owned()]);
        out.write_record(&row)?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_spectrum_csv<R: Read>(r: R) -> Result<Vec<SpectralEstimate>> {
    let mut rdr = csv_reader(r);
    let d = prefixed_columns(rdr.headers()?, "lambda_");
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        if rec.len() != d + 4 {
            return Err(Error::invalid(format!("spectrum row has {} fields, expected {}", rec.len(), d + 4)));
        }
        let frequency = (0..d).map(|i| parse_f64(&rec[i])).collect::<Result<Vec<_>>>()?;
        let kind = match &rec[d + 3] {
            "fourier_sum" => SpectralKind::FourierSum,
            "periodogram" => SpectralKind::Periodogram,
            "recovered" => SpectralKind::Recovered,
            other => return Err(Error::invalid(format!("unknown spectral kind {other:?}"))),
        };
        out.push(SpectralEstimate {
            frequency,
            value: Complex64::new(parse_f64(&rec[d])?, parse_f64(&rec[d + 1])?),
            radius: parse_f64(&rec[d + 2])?,
            kind,
        });
    }
    Ok(out)
}

/// Header `k_1..k_d,re,im,pair_count`.
pub fn write_autocorr_csv<W: Write>(w: W, ac: &AutocorrEstimate) -> Result<()> {
    let mut out = csv_writer(w);
    out.write_record(numbered("k_", ac.dim).chain(["re", "im", "pair_count"].map(String::from)))?;
    for l in &ac.lags {
        let mut row: Vec<String> = l.k.iter().map(|x| fmt_f64(*x)).collect();
        row.extend([fmt_f64(l.coefficient.re), fmt_f64(l.coefficient.im), l.pair_count.to_string()]);
        out.write_record(&row)?;
    }
    out.flush()?;
    Ok(())
}

/// Header `lambda_1..lambda_d,S,stderr,n`.
pub fn write_structure_factor_csv<W: Write>(w: W, dim: usize, est: &StructureFactorEstimate) -> Result<()> {
    let mut out = csv_writer(w);
    out.write_record(numbered("lambda_", dim).chain(["S", "stderr", "n"].map(String::from)))?;
    for r in &est.rows {
        let mut row: Vec<String> = r.frequency.iter().map(|x| fmt_f64(*x)).collect();
        row.extend([fmt_f64(r.s), fmt_f64(r.std_error), r.n_realizations.to_string()]);
        out.write_record(&row)?;
    }
    out.flush()?;
    Ok(())
}

/// Header `n,value`.
pub fn write_trace_csv<W: Write>(w: W, trace: &[TracePoint]) -> Result<()> {
    let mut out = csv_writer(w);
    out.write_record(["n", "value"])?;
    for t in trace {
        out.write_record([t.n.to_string(), fmt_f64(t.value)])?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_trace_csv<R: Read>(r: R) -> Result<Vec<TracePoint>> {
    let mut rdr = csv_reader(r);
    rdr.records()
        .map(|rec| {
            let rec = rec?;
            if rec.len() != 2 {
                return Err(Error::invalid("trace rows have two fields"));
            }
            Ok(TracePoint { n: parse_usize(&rec[0])?, value: parse_f64(&rec[1])? })
        })
        .collect()
}

/// Header `cell_index_1..cell_index_d,density`.
pub fn write_grid_csv<W: Write>(w: W, g: &GriddedMeasure) -> Result<()> {
    let mut out = csv_writer(w);
    out.write_record(numbered("cell_index_", g.dim()).chain(std::iter::once("density".to_owned())))?;
    for (i, x) in g.densities.iter().enumerate() {
        let mut row: Vec<String> = g.cell_index(i).iter().map(usize::to_string).collect();
        row.push(fmt_f64(*x));
        out.write_record(&row)?;
    }
    out.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::perturb::{displace, Distribution};
    use crate::pointset::{generate_cut_and_project, generate_lattice, CutProjectScheme, Lattice};

    #[test]
    fn seventeen_digits_round_trip() {
        for x in [0.1, 1.0 / 3.0, -2.5e-300, 6.02214076e23, f64::MIN_POSITIVE] {
            assert_eq!(parse_f64(&fmt_f64(x)).unwrap().to_bits(), x.to_bits());
        }
    }

    #[test]
    fn pointset_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("fib.csv");
        let ps = generate_cut_and_project(&CutProjectScheme::fibonacci(), 30.0).unwrap();
        write_pointset(&ps, &path).unwrap();
        let back = read_pointset(&path).unwrap();
        assert_eq!(back.coords(), ps.coords());
        assert_eq!(back.label(3), ps.label(3));
        assert_eq!(back.claimed_density, ps.claimed_density);
        assert_eq!(back.descriptor, ps.descriptor);
    }

    #[test]
    fn perturbed_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let ps = generate_lattice(&Lattice::integer(2), 8.0).unwrap();
        let pps = displace(&ps, &PerturbationModel::iid(Distribution::gaussian(2, 0.1), 5)).unwrap();
        let (b, x) = (dir.path().join("base.csv"), dir.path().join("xi.csv"));
        write_perturbed(&pps, &b, &x).unwrap();
        let back = read_perturbed(&b, &x).unwrap();
        assert_eq!(back.displacements(), pps.displacements());
        assert_eq!(back.model(), pps.model());
    }

    #[test]
    fn spectrum_round_trip() {
        let e = vec![SpectralEstimate {
            frequency: vec![1.0, 0.25],
            value: Complex64::new(0.123456789, -1e-17),
            radius: 150.0,
            kind: SpectralKind::FourierSum,
        }];
        let mut buf = Vec::new();
        write_spectrum_csv(&mut buf, 2, &e).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("lambda_1,lambda_2,re,im,R,kind\n"));
        assert_eq!(read_spectrum_csv(&buf[..]).unwrap(), e);
    }

    #[test]
    fn empty_spectrum_has_header_only() {
        let mut buf = Vec::new();
        write_spectrum_csv(&mut buf, 1, &[]).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "lambda_1,re,im,R,kind\n");
    }

    #[test]
    fn trace_and_grid_headers() {
        let mut buf = Vec::new();
        write_trace_csv(&mut buf, &[TracePoint { n: 1000, value: 0.5 }]).unwrap();
        assert_eq!(read_trace_csv(&buf[..]).unwrap(), vec![TracePoint { n: 1000, value: 0.5 }]);
        let g = GriddedMeasure::new(vec![0.0, 0.0], vec![1.0, 1.0], vec![2, 1], vec![1.0, 2.0]).unwrap();
        let mut buf = Vec::new();
        write_grid_csv(&mut buf, &g).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("cell_index_1,cell_index_2,density\n0,0,"));
        assert!(text.contains("\n1,0,2.0000000000000000e0\n"));
    }
}
