//! File formats: ensembles and channels as JSON with nested `[re, im]`
//! matrices, result tables as CSV or JSON, and `a:b:n` grids.

use serde::{Deserialize, Serialize};

use crate::channel::Channel;
use crate::ensemble::{Ensemble, EnsembleItem};
use crate::error::{QrdError, Result};
use crate::kidecomp::KIDecomposition;
use crate::linalg::{c, CMatrix, CVector};
use crate::rateregion::RegionPoint;
use crate::rdsolver::RDPoint;

/// Row-major nested `[re, im]` pairs.
pub type JsonMatrix = Vec<Vec<[f64; 2]>>;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ItemFile {
    pub p: f64,
    pub rho: JsonMatrix,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub j: Option<Vec<[f64; 2]>>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EnsembleFile {
    #[serde(rename = "dimA")]
    pub dim_a: usize,
    pub items: Vec<ItemFile>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ChannelFile {
    pub choi: JsonMatrix,
    #[serde(rename = "dimIn")]
    pub dim_in: usize,
    #[serde(rename = "dimOut")]
    pub dim_out: usize,
}

pub fn matrix_to_json(m: &CMatrix) -> JsonMatrix {
    (0..m.nrows())
        .map(|r| (0..m.ncols()).map(|k| [m[(r, k)].re, m[(r, k)].im]).collect())
        .collect()
}

/// `what` names the field in error messages.
pub fn matrix_from_json(rows: &JsonMatrix, what: &str) -> Result<CMatrix> {
    let n = rows.len();
    let cols = rows.first().map(|r| r.len()).unwrap_or(0);
    if let Some((i, r)) = rows.iter().enumerate().find(|(_, r)| r.len() != cols) {
        return Err(QrdError::Parse(format!("{what}: row {i} has {} entries, expected {cols}", r.len())));
    }
    if rows.iter().flatten().flatten().any(|x| !x.is_finite()) {
        return Err(QrdError::Parse(format!("{what}: non-finite entry")));
    }
    Ok(CMatrix::from_fn(n, cols, |r, k| c(rows[r][k][0], rows[r][k][1])))
}

pub fn ensemble_to_file(e: &Ensemble) -> EnsembleFile {
    EnsembleFile {
        dim_a: e.dim_a(),
        items: e
            .items()
            .iter()
            .map(|it| ItemFile {
                p: it.p,
                rho: matrix_to_json(&it.rho),
                j: it.j.as_ref().map(|v| v.iter().map(|z| [z.re, z.im]).collect()),
            })
            .collect(),
    }
}

pub fn ensemble_from_file(f: &EnsembleFile) -> Result<Ensemble> {
    let items = f
        .items
        .iter()
        .enumerate()
        .map(|(x, it)| {
            let rho = matrix_from_json(&it.rho, &format!("item {x}: rho"))?;
            let j = it.j.as_ref().map(|v| CVector::from_iterator(v.len(), v.iter().map(|z| c(z[0], z[1]))));
            Ok(EnsembleItem { p: it.p, rho, j })
        })
        .collect::<Result<Vec<_>>>()?;
    Ensemble::new(f.dim_a, items)
}

pub fn parse_ensemble(text: &str) -> Result<Ensemble> {
    let f: EnsembleFile = serde_json::from_str(text).map_err(|e| QrdError::Parse(format!("ensemble JSON: {e}")))?;
    ensemble_from_file(&f)
}

pub fn ensemble_to_json(e: &Ensemble) -> String {
    serde_json::to_string_pretty(&ensemble_to_file(e)).expect("plain data serializes")
}

pub fn channel_to_json(ch: &Channel) -> String {
    let f = ChannelFile {
        choi: matrix_to_json(ch.choi()),
        dim_in: ch.dim_in(),
        dim_out: ch.dim_out(),
    };
    serde_json::to_string_pretty(&f).expect("plain data serializes")
}

/// Parses and validates a channel (CPTP within the library tolerance).
pub fn parse_channel(text: &str) -> Result<Channel> {
    let f: ChannelFile = serde_json::from_str(text).map_err(|e| QrdError::Parse(format!("channel JSON: {e}")))?;
    Channel::new(matrix_from_json(&f.choi, "choi")?, f.dim_in, f.dim_out)
}

/// `a:b:n` → `n` evenly spaced values from `a` to `b`.
pub fn parse_grid(text: &str) -> Result<Vec<f64>> {
    let bad = |msg: &str| QrdError::InvalidArgument(format!("grid '{text}': {msg}"));
    let parts: Vec<&str> = text.split(':').collect();
    if parts.len() != 3 {
        return Err(bad("expected a:b:n"));
    }
    let a: f64 = parts[0].trim().parse().map_err(|_| bad("a is not a number"))?;
    let b: f64 = parts[1].trim().parse().map_err(|_| bad("b is not a number"))?;
    let n: usize = parts[2].trim().parse().map_err(|_| bad("n is not a positive integer"))?;
    if !(a.is_finite() && b.is_finite()) || a < 0.0 || a > b {
        return Err(bad("need 0 ≤ a ≤ b"));
    }
    if n == 0 {
        return Err(bad("need n ≥ 1"));
    }
    if n == 1 {
        return Ok(vec![a]);
    }
    Ok((0..n)
        .map(|i| if i + 1 == n { b } else { a + (b - a) * i as f64 / (n - 1) as f64 })
        .collect())
}

/// Nine significant digits, `%g` style.
pub fn fmt9(x: f64) -> String {
    if x == 0.0 {
        return "0".into();
    }
    if !x.is_finite() {
        return format!("{x}");
    }
    let exp = x.abs().log10().floor() as i32;
    if (-5..9).contains(&exp) {
        let decimals = (8 - exp).max(0) as usize;
        let s = format!("{x:.decimals$}");
        if s.contains('.') {
            s.trim_end_matches('0').trim_end_matches('.').to_string()
        } else {
            s
        }
    } else {
        let s = format!("{x:.8e}");
        let (mant, e) = s.split_once('e').expect("scientific format");
        let mant = mant.trim_end_matches('0').trim_end_matches('.');
        format!("{mant}e{e}")
    }
}

/// One row of a rate table. `upper`, `lower` and `restart_spread` are
/// present for the unassisted and purification bounds only.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateRow {
    #[serde(rename = "D")]
    pub d: f64,
    pub rate_bits: f64,
    pub converged: bool,
    pub iters: usize,
    pub feasibility_residual: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub upper: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lower: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub restart_spread: Option<f64>,
}

impl RateRow {
    pub fn from_point(p: &RDPoint, bounds: bool) -> Self {
        Self {
            d: p.d,
            rate_bits: p.rate,
            converged: p.converged,
            iters: p.iters,
            feasibility_residual: p.feasibility_residual,
            upper: bounds.then_some(p.rate),
            lower: if bounds { p.lower } else { None },
            restart_spread: if bounds { p.restart_spread } else { None },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegionRow {
    #[serde(rename = "D")]
    pub d: f64,
    #[serde(rename = "R_min")]
    pub r_min: f64,
    pub sum_min: f64,
    pub lambda_kind: String,
}

impl RegionRow {
    pub fn from_point(p: &RegionPoint) -> Self {
        Self {
            d: p.d,
            r_min: p.r_min,
            sum_min: p.sum_min,
            lambda_kind: p.lambda_kind.clone(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Format {
    Csv,
    Json,
}

impl std::str::FromStr for Format {
    type Err = QrdError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "csv" => Ok(Format::Csv),
            "json" => Ok(Format::Json),
            _ => Err(QrdError::InvalidArgument(format!("format '{s}': expected csv or json"))),
        }
    }
}

fn rate_cells(r: &RateRow, bounds: bool) -> Vec<String> {
    let mut v = vec![
        fmt9(r.d),
        fmt9(r.rate_bits),
        r.converged.to_string(),
        r.iters.to_string(),
        fmt9(r.feasibility_residual),
    ];
    if bounds {
        let opt = |x: Option<f64>| x.map(fmt9).unwrap_or_default();
        v.extend([opt(r.upper), opt(r.lower), opt(r.restart_spread)]);
    }
    v
}

fn write_csv(seed: u64, header: &[&str], rows: impl Iterator<Item = Vec<String>>) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header).expect("in-memory write");
    for r in rows {
        w.write_record(&r).expect("in-memory write");
    }
    let body = String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8 cells");
    format!("# seed={seed}\n{body}")
}

pub fn rates_to_csv(rows: &[RateRow], seed: u64) -> String {
    let bounds = rows.iter().any(|r| r.upper.is_some());
    let mut header = vec!["D", "rate_bits", "converged", "iters", "feasibility_residual"];
    if bounds {
        header.extend(["upper", "lower", "restart_spread"]);
    }
    write_csv(seed, &header, rows.iter().map(|r| rate_cells(r, bounds)))
}

pub fn regions_to_csv(rows: &[RegionRow], seed: u64) -> String {
    write_csv(
        seed,
        &["D", "R_min", "sum_min", "lambda_kind"],
        rows.iter().map(|r| vec![fmt9(r.d), fmt9(r.r_min), fmt9(r.sum_min), r.lambda_kind.clone()]),
    )
}

#[derive(Serialize)]
struct JsonTable<'a, T: Serialize> {
    seed: u64,
    rows: &'a [T],
}

/// `{"seed": s, "rows": [...]}` with numbers rounded to nine significant
/// digits.
pub fn rows_to_json<T: Serialize>(rows: &[T], seed: u64) -> String {
    let mut v = serde_json::to_value(JsonTable { seed, rows }).expect("plain data serializes");
    round_numbers(&mut v);
    serde_json::to_string_pretty(&v).expect("plain data serializes")
}

fn round_numbers(v: &mut serde_json::Value) {
    match v {
        serde_json::Value::Number(n) if n.is_f64() => {
            let x: f64 = fmt9(n.as_f64().expect("f64 number")).parse().expect("formatted float");
            if let Some(num) = serde_json::Number::from_f64(x) {
                *n = num;
            }
        }
        serde_json::Value::Array(a) => a.iter_mut().for_each(round_numbers),
        serde_json::Value::Object(o) => o.values_mut().for_each(round_numbers),
        _ => {}
    }
}

/// Seed from the `# seed=` header line, if present.
pub fn csv_seed(text: &str) -> Option<u64> {
    text.lines().next()?.strip_prefix("# seed=")?.trim().parse().ok()
}

fn read_csv<T: for<'de> Deserialize<'de>>(text: &str) -> Result<Vec<T>> {
    csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .from_reader(text.as_bytes())
        .deserialize()
        .enumerate()
        .map(|(i, r)| r.map_err(|e| QrdError::Parse(format!("CSV row {}: {e}", i + 1))))
        .collect()
}

pub fn rates_from_csv(text: &str) -> Result<Vec<RateRow>> {
    read_csv(text)
}

pub fn regions_from_csv(text: &str) -> Result<Vec<RegionRow>> {
    read_csv(text)
}

#[derive(Debug, Clone, Serialize)]
pub struct KiBlockFile {
    #[serde(rename = "dimQ")]
    pub dim_q: usize,
    #[serde(rename = "dimN")]
    pub dim_n: usize,
    pub probs: Vec<f64>,
    pub omega: JsonMatrix,
    pub basis: JsonMatrix,
}

#[derive(Debug, Clone, Serialize)]
pub struct KiFile {
    #[serde(rename = "dimA")]
    pub dim_a: usize,
    pub blocks: Vec<KiBlockFile>,
    pub residual: f64,
    pub blind_rate: f64,
}

pub fn ki_to_json(d: &KIDecomposition, blind_rate: f64) -> String {
    let f = KiFile {
        dim_a: d.dim_a,
        blocks: d
            .blocks
            .iter()
            .map(|b| KiBlockFile {
                dim_q: b.dim_q,
                dim_n: b.dim_n,
                probs: b.probs.clone(),
                omega: matrix_to_json(&b.omega),
                basis: matrix_to_json(&b.basis),
            })
            .collect(),
        residual: d.residual,
        blind_rate,
    };
    let mut v = serde_json::to_value(f).expect("plain data serializes");
    round_numbers(&mut v);
    serde_json::to_string_pretty(&v).expect("plain data serializes")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;

    #[test]
    fn ensemble_round_trip() {
        for name in fixtures::all_names() {
            let e = fixtures::by_name(&name).unwrap();
            let back = parse_ensemble(&ensemble_to_json(&e)).unwrap();
            assert_eq!(back.len(), e.len());
            assert_eq!(back.dim_j(), e.dim_j());
            assert!((back.average_aj() - e.average_aj()).norm() < 1e-15, "{name}");
        }
    }

    #[test]
    fn item_errors_cite_index() {
        let text = r#"{"dimA": 2, "items": [
            {"p": 0.5, "rho": [[[1,0],[0,0]],[[0,0],[0,0]]]},
            {"p": 0.5, "rho": [[[1,0],[0,0]]]}]}"#;
        let err = parse_ensemble(text).unwrap_err().to_string();
        assert!(err.contains("item 1"), "{err}");
    }

    #[test]
    fn channel_round_trip_and_validation() {
        let ch = Channel::depolarizing(2, 0.25).unwrap();
        let back = parse_channel(&channel_to_json(&ch)).unwrap();
        assert!((back.choi() - ch.choi()).norm() < 1e-15);
        let bad = r#"{"choi": [[[1,0],[0,0]],[[0,0],[1,0]]], "dimIn": 1, "dimOut": 2}"#;
        assert!(parse_channel(bad).is_err());
    }

    #[test]
    fn grids() {
        let g = parse_grid("0:0.6:4").unwrap();
        for (x, y) in g.iter().zip([0.0, 0.2, 0.4, 0.6]) {
            assert!((x - y).abs() < 1e-15);
        }
        assert_eq!(*g.last().unwrap(), 0.6);
        assert_eq!(parse_grid("0.1:0.1:1").unwrap(), vec![0.1]);
        for bad in ["1:0:3", "0:1:0", "-1:1:3", "0:1", "a:1:2"] {
            assert!(parse_grid(bad).is_err(), "{bad}");
        }
    }

    #[test]
    fn nine_digits() {
        assert_eq!(fmt9(0.5), "0.5");
        assert_eq!(fmt9(0.600876), "0.600876");
        assert_eq!(fmt9(1.0 / 3.0), "0.333333333");
        assert_eq!(fmt9(1e-9), "1e-9");
        assert_eq!(fmt9(123456789.0), "123456789");
        assert_eq!(fmt9(-2.5e-7), "-2.5e-7");
    }

    #[test]
    fn csv_round_trip() {
        let rows = vec![
            RateRow {
                d: 0.0,
                rate_bits: 0.5,
                converged: true,
                iters: 10,
                feasibility_residual: 1e-12,
                upper: Some(0.6),
                lower: Some(0.4),
                restart_spread: Some(0.0),
            },
            RateRow {
                d: 0.05,
                rate_bits: 1.0 / 3.0,
                converged: false,
                iters: 3000,
                feasibility_residual: 0.0,
                upper: Some(0.7),
                lower: None,
                restart_spread: Some(1e-3),
            },
        ];
        let text = rates_to_csv(&rows, 7);
        assert_eq!(csv_seed(&text), Some(7));
        let back = rates_from_csv(&text).unwrap();
        assert_eq!(back.len(), 2);
        assert!((back[1].rate_bits - 1.0 / 3.0).abs() < 1e-9);
        assert_eq!(back[1].lower, None);
        let reg = vec![RegionRow { d: 0.0, r_min: 0.5, sum_min: 1.0, lambda_kind: "keep:0,1".into() }];
        assert_eq!(regions_from_csv(&regions_to_csv(&reg, 1)).unwrap(), reg);
    }
}
