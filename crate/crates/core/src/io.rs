//! Serialization of the domain types.
//!
//! JSON documents use 1-based state labels (both the system state and the
//! state half of a mark); map labels `ell` stay 0-based because they are
//! base-n encodings, not states. Internally everything is 0-based; the
//! conversion happens here and nowhere else.
//!
//! Infinite window edges serialize as `null`. Complex matrices serialize
//! as row-major interleaved `[re, im, re, im, ...]` entry lists.
//!
//! Matrices also move through headerless CSV (one row per line) for easy
//! interop; parse failures report the offending line.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dilation::{
    Coupling, Dilation, DilationError, EnvironmentLaw, Mark, MarkedConfiguration,
};
use crate::linalg::{CMat, RMat};
use crate::markov::{
    Atom, Decomposition, DeterministicMap, MarkovError, RateMatrix, StochasticMatrix,
};
use crate::quantum::{QuantumError, Superoperator};
use crate::simulate::{Jump, Trajectory};

#[derive(Debug, Error)]
pub enum IoError {
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("line {line}: {detail}")]
    Parse { line: usize, detail: String },
    #[error("document: {detail}")]
    BadDocument { detail: String },
    #[error(transparent)]
    Markov(#[from] MarkovError),
    #[error(transparent)]
    Dilation(#[from] DilationError),
    #[error(transparent)]
    Quantum(#[from] QuantumError),
}

fn bad(detail: impl Into<String>) -> IoError {
    IoError::BadDocument { detail: detail.into() }
}

// ---------------------------------------------------------------------
// Real matrices
// ---------------------------------------------------------------------

#[derive(Serialize, Deserialize)]
struct MatrixDoc {
    n: usize,
    rows: Vec<Vec<f64>>,
}

pub fn matrix_to_json(m: &RMat) -> String {
    let doc = MatrixDoc {
        n: m.nrows(),
        rows: m.rows().into_iter().map(|r| r.to_vec()).collect(),
    };
    serde_json::to_string_pretty(&doc).expect("plain struct serializes")
}

pub fn matrix_from_json(s: &str) -> Result<RMat, IoError> {
    let doc: MatrixDoc = serde_json::from_str(s)?;
    if doc.rows.len() != doc.n {
        return Err(bad(format!("expected {} rows, found {}", doc.n, doc.rows.len())));
    }
    let mut m = RMat::zeros((doc.n, doc.n));
    for (i, row) in doc.rows.iter().enumerate() {
        if row.len() != doc.n {
            return Err(bad(format!("row {} has {} entries, expected {}", i + 1, row.len(), doc.n)));
        }
        for (j, &x) in row.iter().enumerate() {
            m[[i, j]] = x;
        }
    }
    Ok(m)
}

pub fn rate_matrix_from_json(s: &str) -> Result<RateMatrix, IoError> {
    Ok(RateMatrix::new(matrix_from_json(s)?)?)
}

pub fn stochastic_matrix_from_json(s: &str) -> Result<StochasticMatrix, IoError> {
    Ok(StochasticMatrix::new(matrix_from_json(s)?)?)
}

pub fn matrix_to_csv(m: &RMat) -> Result<String, IoError> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(Vec::new());
    for row in m.rows() {
        w.write_record(row.iter().map(|x| x.to_string()))?;
    }
    let bytes = w.into_inner().map_err(|e| bad(e.to_string()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf8"))
}

pub fn matrix_from_csv(s: &str) -> Result<RMat, IoError> {
    let mut reader =
        csv::ReaderBuilder::new().has_headers(false).flexible(true).from_reader(s.as_bytes());
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (k, record) in reader.records().enumerate() {
        let line = k + 1;
        let record = record?;
        let mut row = Vec::with_capacity(record.len());
        for field in record.iter() {
            let x: f64 = field.trim().parse().map_err(|_| IoError::Parse {
                line,
                detail: format!("not a number: {field:?}"),
            })?;
            row.push(x);
        }
        rows.push(row);
    }
    let n = rows.len();
    if n == 0 {
        return Err(IoError::Parse { line: 1, detail: "empty matrix".into() });
    }
    let mut m = RMat::zeros((n, n));
    for (i, row) in rows.iter().enumerate() {
        if row.len() != n {
            return Err(IoError::Parse {
                line: i + 1,
                detail: format!("{} entries in a {n}-row matrix", row.len()),
            });
        }
        for (j, &x) in row.iter().enumerate() {
            m[[i, j]] = x;
        }
    }
    Ok(m)
}

pub fn rate_matrix_from_csv(s: &str) -> Result<RateMatrix, IoError> {
    Ok(RateMatrix::new(matrix_from_csv(s)?)?)
}

pub fn stochastic_matrix_from_csv(s: &str) -> Result<StochasticMatrix, IoError> {
    Ok(StochasticMatrix::new(matrix_from_csv(s)?)?)
}

// ---------------------------------------------------------------------
// Decompositions
// ---------------------------------------------------------------------

#[derive(Serialize, Deserialize)]
struct AtomDoc {
    index: u64,
    /// Image of the map as 1-based state labels.
    image: Vec<usize>,
    weight: f64,
}

#[derive(Serialize, Deserialize)]
struct DecompositionDoc {
    n: usize,
    atoms: Vec<AtomDoc>,
}

pub fn decomposition_to_json(d: &Decomposition) -> String {
    let doc = DecompositionDoc {
        n: d.n(),
        atoms: d
            .atoms()
            .iter()
            .map(|a| AtomDoc {
                index: a.map.index(),
                image: a.map.image().iter().map(|&b| b + 1).collect(),
                weight: a.weight,
            })
            .collect(),
    };
    serde_json::to_string_pretty(&doc).expect("plain struct serializes")
}

pub fn decomposition_from_json(s: &str) -> Result<Decomposition, IoError> {
    let doc: DecompositionDoc = serde_json::from_str(s)?;
    let mut atoms = Vec::with_capacity(doc.atoms.len());
    for a in &doc.atoms {
        let image: Vec<usize> = a
            .image
            .iter()
            .map(|&b| b.checked_sub(1).ok_or_else(|| bad("state labels are 1-based")))
            .collect::<Result<_, _>>()?;
        let map = DeterministicMap::new(image)?;
        if map.index() != a.index {
            return Err(bad(format!(
                "atom index {} does not match its image (encodes {})",
                a.index,
                map.index()
            )));
        }
        atoms.push(Atom { map, weight: a.weight });
    }
    Ok(Decomposition::new(doc.n, atoms)?)
}

// ---------------------------------------------------------------------
// Dilations
// ---------------------------------------------------------------------

#[derive(Serialize, Deserialize)]
struct WeightDoc {
    /// 1-based state half of the mark.
    j: usize,
    ell: u64,
    weight: f64,
}

#[derive(Serialize, Deserialize)]
struct PairDoc {
    /// 1-based system state and mark-state labels on both sides.
    i: usize,
    j: usize,
    ell: u64,
    to_i: usize,
    to_j: usize,
    to_ell: u64,
    prescribed: bool,
}

#[derive(Serialize, Deserialize)]
struct CouplingDoc {
    prescribed_only: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    table: Option<Vec<PairDoc>>,
}

#[derive(Serialize, Deserialize)]
struct DilationDoc {
    n: usize,
    lambda: f64,
    q: Vec<WeightDoc>,
    coupling: CouplingDoc,
}

/// Serialize a dilation. With `include_table` the full coupling table is
/// written out; otherwise only the fact that the coupling is the
/// canonical one for n states (rebuildable from n alone).
pub fn dilation_to_json(d: &Dilation, include_table: bool) -> Result<String, IoError> {
    let table = if include_table {
        let pairs = d
            .coupling()
            .iter_pairs()
            .ok_or_else(|| bad("cannot write the table of a prescribed-only coupling"))?;
        Some(
            pairs
                .map(|((i, m), (ti, tm), prov)| PairDoc {
                    i: i + 1,
                    j: m.j + 1,
                    ell: m.ell,
                    to_i: ti + 1,
                    to_j: tm.j + 1,
                    to_ell: tm.ell,
                    prescribed: prov == crate::dilation::Provenance::Prescribed,
                })
                .collect(),
        )
    } else {
        None
    };
    let doc = DilationDoc {
        n: d.n(),
        lambda: d.law().lambda(),
        q: d.law()
            .support()
            .iter()
            .map(|&(mark, w)| WeightDoc { j: mark.j + 1, ell: mark.ell, weight: w })
            .collect(),
        coupling: CouplingDoc { prescribed_only: !include_table, table },
    };
    Ok(serde_json::to_string_pretty(&doc).expect("plain struct serializes"))
}

pub fn dilation_from_json(s: &str) -> Result<Dilation, IoError> {
    let doc: DilationDoc = serde_json::from_str(s)?;
    let n = doc.n;
    if n == 0 {
        return Err(bad("n must be at least 1"));
    }
    let weights = doc
        .q
        .iter()
        .map(|w| {
            let j = w.j.checked_sub(1).ok_or_else(|| bad("mark labels are 1-based"))?;
            Ok((Mark::new(j, w.ell), w.weight))
        })
        .collect::<Result<Vec<_>, IoError>>()?;
    let law = EnvironmentLaw::new(n, doc.lambda, weights)?;

    let coupling = match (doc.coupling.prescribed_only, doc.coupling.table) {
        (true, _) => Coupling::universal(n),
        (false, Some(pairs)) => {
            let space = crate::dilation::MarkSpace::new(n);
            let gsize = space.size();
            let total = n * gsize;
            if pairs.len() != total {
                return Err(bad(format!("table has {} pairs, expected {}", pairs.len(), total)));
            }
            let mut forward = vec![usize::MAX; total];
            let mut prescribed = vec![false; total];
            for p in &pairs {
                let flat = |state1: usize, j1: usize, ell: u64| -> Result<usize, IoError> {
                    let state = state1.checked_sub(1).ok_or_else(|| bad("states are 1-based"))?;
                    let j = j1.checked_sub(1).ok_or_else(|| bad("mark labels are 1-based"))?;
                    let mark = Mark::new(j, ell);
                    if state >= n || !space.contains(mark) {
                        return Err(bad(format!("pair ({state1},{j1},{ell}) out of range")));
                    }
                    Ok(state * gsize + space.index(mark))
                };
                let from = flat(p.i, p.j, p.ell)?;
                let to = flat(p.to_i, p.to_j, p.to_ell)?;
                if forward[from] != usize::MAX {
                    return Err(bad(format!("duplicate domain point ({},{},{})", p.i, p.j, p.ell)));
                }
                forward[from] = to;
                prescribed[from] = p.prescribed;
            }
            Coupling::from_forward_table(n, forward, prescribed)?
        }
        (false, None) => return Err(bad("coupling table missing")),
    };
    Ok(Dilation::new(coupling, law)?)
}

// ---------------------------------------------------------------------
// Marked configurations and trajectories
// ---------------------------------------------------------------------

#[derive(Serialize, Deserialize)]
struct PointDoc {
    t: f64,
    /// 1-based state half of the mark.
    j: usize,
    ell: u64,
}

#[derive(Serialize, Deserialize)]
struct WindowDoc {
    /// `null` means unbounded below.
    lo: Option<f64>,
    /// `null` means unbounded above.
    hi: Option<f64>,
}

#[derive(Serialize, Deserialize)]
struct ConfigurationDoc {
    points: Vec<PointDoc>,
    window: WindowDoc,
}

pub fn configuration_to_json(c: &MarkedConfiguration) -> String {
    let (lo, hi) = c.window();
    let doc = ConfigurationDoc {
        points: c
            .points()
            .iter()
            .map(|&(t, mark)| PointDoc { t, j: mark.j + 1, ell: mark.ell })
            .collect(),
        window: WindowDoc {
            lo: lo.is_finite().then_some(lo),
            hi: hi.is_finite().then_some(hi),
        },
    };
    serde_json::to_string_pretty(&doc).expect("plain struct serializes")
}

pub fn configuration_from_json(s: &str) -> Result<MarkedConfiguration, IoError> {
    let doc: ConfigurationDoc = serde_json::from_str(s)?;
    let points = doc
        .points
        .iter()
        .map(|p| {
            let j = p.j.checked_sub(1).ok_or_else(|| bad("mark labels are 1-based"))?;
            Ok((p.t, Mark::new(j, p.ell)))
        })
        .collect::<Result<Vec<_>, IoError>>()?;
    let lo = doc.window.lo.unwrap_or(f64::NEG_INFINITY);
    let hi = doc.window.hi.unwrap_or(f64::INFINITY);
    Ok(MarkedConfiguration::new(points, lo, hi)?)
}

#[derive(Serialize, Deserialize)]
struct JumpDoc {
    t: f64,
    j: usize,
    ell: u64,
    /// 1-based state entered at this jump.
    state: usize,
}

#[derive(Serialize, Deserialize)]
struct TrajectoryDoc {
    /// 1-based initial state.
    initial: usize,
    horizon: f64,
    jumps: Vec<JumpDoc>,
}

pub fn trajectory_to_json(t: &Trajectory) -> String {
    let doc = TrajectoryDoc {
        initial: t.initial + 1,
        horizon: t.horizon,
        jumps: t
            .jumps
            .iter()
            .map(|j| JumpDoc { t: j.time, j: j.mark.j + 1, ell: j.mark.ell, state: j.state + 1 })
            .collect(),
    };
    serde_json::to_string_pretty(&doc).expect("plain struct serializes")
}

pub fn trajectory_from_json(s: &str) -> Result<Trajectory, IoError> {
    let doc: TrajectoryDoc = serde_json::from_str(s)?;
    let initial =
        doc.initial.checked_sub(1).ok_or_else(|| bad("states are 1-based"))?;
    let jumps = doc
        .jumps
        .iter()
        .map(|j| {
            let mark_j = j.j.checked_sub(1).ok_or_else(|| bad("mark labels are 1-based"))?;
            let state = j.state.checked_sub(1).ok_or_else(|| bad("states are 1-based"))?;
            Ok(Jump { time: j.t, mark: Mark::new(mark_j, j.ell), state })
        })
        .collect::<Result<Vec<_>, IoError>>()?;
    Ok(Trajectory { initial, jumps, horizon: doc.horizon })
}

// ---------------------------------------------------------------------
// Complex operators and superoperators
// ---------------------------------------------------------------------

#[derive(Serialize, Deserialize)]
struct OperatorDoc {
    dim: usize,
    /// Row-major interleaved [re, im, re, im, ...].
    entries: Vec<f64>,
}

fn interleave(m: &CMat) -> Vec<f64> {
    let mut out = Vec::with_capacity(2 * m.len());
    for z in m.iter() {
        out.push(z.re);
        out.push(z.im);
    }
    out
}

fn deinterleave(entries: &[f64], rows: usize) -> Result<CMat, IoError> {
    if entries.len() != 2 * rows * rows {
        return Err(bad(format!(
            "expected {} interleaved entries for a {rows}x{rows} matrix, found {}",
            2 * rows * rows,
            entries.len()
        )));
    }
    let mut m = CMat::zeros((rows, rows));
    for i in 0..rows {
        for j in 0..rows {
            let k = 2 * (i * rows + j);
            m[[i, j]] = Complex64::new(entries[k], entries[k + 1]);
        }
    }
    Ok(m)
}

pub fn operator_to_json(a: &CMat) -> String {
    let doc = OperatorDoc { dim: a.nrows(), entries: interleave(a) };
    serde_json::to_string_pretty(&doc).expect("plain struct serializes")
}

pub fn operator_from_json(s: &str) -> Result<CMat, IoError> {
    let doc: OperatorDoc = serde_json::from_str(s)?;
    deinterleave(&doc.entries, doc.dim)
}

#[derive(Serialize, Deserialize)]
struct SuperoperatorDoc {
    /// Dimension d of the underlying operators; the matrix is d^2 x d^2.
    dim: usize,
    entries: Vec<f64>,
}

pub fn superoperator_to_json(l: &Superoperator) -> String {
    let doc = SuperoperatorDoc { dim: l.dim(), entries: interleave(l.matrix()) };
    serde_json::to_string_pretty(&doc).expect("plain struct serializes")
}

pub fn superoperator_from_json(s: &str) -> Result<Superoperator, IoError> {
    let doc: SuperoperatorDoc = serde_json::from_str(s)?;
    let mat = deinterleave(&doc.entries, doc.dim * doc.dim)?;
    Ok(Superoperator::from_matrix(doc.dim, mat)?)
}
