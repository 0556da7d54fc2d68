//! CSV readers and writers for the pipeline inputs and trajectories.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use chrono::NaiveDate;

use crate::aci::{AciConfig, ErrBit};
use crate::conformal::PredictionInterval;
use crate::election::CountyRecord;
use crate::error::{Error, Result};
use crate::metrics::{local_coverage, local_coverage_center, TrajectoryReport};
use crate::volatility::PriceSeries;

pub const PRICES_HEADER: [&str; 2] = ["date", "open"];
pub const TRAJECTORY_HEADER: [&str; 7] = [
    "t",
    "label",
    "alpha_t",
    "err",
    "lower",
    "upper",
    "local_cov",
];

/// Formats `x` with 12 significant digits, using the shortest text that
/// reads back to the rounded value. Infinities are `inf` and `-inf`.
pub fn format_number(x: f64) -> String {
    if !x.is_finite() {
        return x.to_string();
    }
    let rounded: f64 = format!("{x:.11e}").parse().expect("formatted float parses");
    let a = rounded.abs();
    if rounded == 0.0 || (1e-4..1e15).contains(&a) {
        rounded.to_string()
    } else {
        format!("{rounded:e}")
    }
}

fn csv_error(e: csv::Error) -> Error {
    let line = e.position().map(|p| p.line()).unwrap_or(0);
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        csv::ErrorKind::UnequalLengths {
            expected_len, len, ..
        } => Error::parse(line, format!("expected {expected_len} fields, found {len}")),
        other => Error::parse(line, format!("{other:?}")),
    }
}

fn reader<R: Read>(input: R) -> csv::Reader<R> {
    csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(input)
}

fn check_header<R: Read>(rdr: &mut csv::Reader<R>, expected: &[&str]) -> Result<()> {
    let header = rdr.headers().map_err(csv_error)?;
    if header.iter().ne(expected.iter().copied()) {
        return Err(Error::parse(
            1,
            format!(
                "expected header `{}`, found `{}`",
                expected.join(","),
                header.iter().collect::<Vec<_>>().join(",")
            ),
        ));
    }
    Ok(())
}

fn line_of(record: &csv::StringRecord) -> u64 {
    record.position().map(|p| p.line()).unwrap_or(0)
}

fn number(field: &str, name: &str, line: u64) -> Result<f64> {
    field
        .parse::<f64>()
        .map_err(|_| Error::parse(line, format!("{name}: `{field}` is not a number")))
}

fn open(path: &Path) -> Result<BufReader<File>> {
    Ok(BufReader::new(File::open(path)?))
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path)?))
}

/// Reads a `date,open` file. Dates are ISO-8601 calendar dates and must
/// increase strictly; prices must be positive.
pub fn read_prices_from<R: Read>(input: R) -> Result<PriceSeries> {
    let mut rdr = reader(input);
    check_header(&mut rdr, &PRICES_HEADER)?;
    let mut labels = Vec::new();
    let mut prices = Vec::new();
    let mut last: Option<NaiveDate> = None;
    for record in rdr.records() {
        let record = record.map_err(csv_error)?;
        let line = line_of(&record);
        let date = NaiveDate::parse_from_str(&record[0], "%Y-%m-%d")
            .map_err(|e| Error::parse(line, format!("date `{}`: {e}", &record[0])))?;
        let open = number(&record[1], "open", line)?;
        if !(open > 0.0 && open.is_finite()) {
            return Err(Error::Validation(format!(
                "line {line}: open price must be positive, got {open}"
            )));
        }
        if last.is_some_and(|d| date <= d) {
            return Err(Error::Validation(format!(
                "line {line}: date {date} does not follow the previous row"
            )));
        }
        last = Some(date);
        labels.push(date.to_string());
        prices.push(open);
    }
    if prices.is_empty() {
        return Err(Error::NoData("price file has no rows".into()));
    }
    Ok(PriceSeries { labels, prices })
}

pub fn read_prices(path: &Path) -> Result<PriceSeries> {
    read_prices_from(open(path)?)
}

/// Writes a `date,open` file. Labels are written as they are.
pub fn write_prices_to<W: Write>(output: W, series: &PriceSeries) -> Result<()> {
    let mut w = csv::Writer::from_writer(output);
    w.write_record(PRICES_HEADER).map_err(csv_error)?;
    for (label, price) in series.labels.iter().zip(&series.prices) {
        w.write_record([label.as_str(), &format_number(*price)])
            .map_err(csv_error)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_prices(path: &Path, series: &PriceSeries) -> Result<()> {
    write_prices_to(create(path)?, series)
}

fn county_header(d: usize) -> Vec<String> {
    let mut h = vec!["id".to_string(), "population".to_string()];
    h.extend((1..=d).map(|j| format!("x{j}")));
    h.push("y_prev".into());
    h.push("y".into());
    h
}

/// Reads an `id,population,x1,...,xd,y_prev,y` file.
pub fn read_counties_from<R: Read>(input: R) -> Result<Vec<CountyRecord>> {
    let mut rdr = reader(input);
    let width = rdr.headers().map_err(csv_error)?.len();
    if width < 4 {
        return Err(Error::parse(
            1,
            "county header needs at least id,population,y_prev,y",
        ));
    }
    let d = width - 4;
    let expected = county_header(d);
    check_header(
        &mut rdr,
        &expected.iter().map(String::as_str).collect::<Vec<_>>(),
    )?;
    let mut out = Vec::new();
    for record in rdr.records() {
        let record = record.map_err(csv_error)?;
        let line = line_of(&record);
        let mut values = Vec::with_capacity(width - 1);
        for (name, field) in expected.iter().zip(record.iter()).skip(1) {
            values.push(number(field, name, line)?);
        }
        let county = CountyRecord {
            id: record[0].to_string(),
            population: values[0],
            covariates: values[1..=d].to_vec(),
            y_prev: values[d + 1],
            y: values[d + 2],
        };
        county.validate().map_err(|e| {
            Error::Validation(format!(
                "line {line}: {}",
                e.to_string().trim_start_matches("validation error: ")
            ))
        })?;
        out.push(county);
    }
    Ok(out)
}

pub fn read_counties(path: &Path) -> Result<Vec<CountyRecord>> {
    read_counties_from(open(path)?)
}

pub fn write_counties_to<W: Write>(output: W, counties: &[CountyRecord]) -> Result<()> {
    let d = counties.first().map_or(0, |c| c.covariates.len());
    let mut w = csv::Writer::from_writer(output);
    w.write_record(county_header(d)).map_err(csv_error)?;
    for c in counties {
        if c.covariates.len() != d {
            return Err(Error::Validation(format!(
                "county {} has {} covariates, expected {d}",
                c.id,
                c.covariates.len()
            )));
        }
        let mut row = vec![c.id.clone(), format_number(c.population)];
        row.extend(c.covariates.iter().map(|x| format_number(*x)));
        row.push(format_number(c.y_prev));
        row.push(format_number(c.y));
        w.write_record(&row).map_err(csv_error)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_counties(path: &Path, counties: &[CountyRecord]) -> Result<()> {
    write_counties_to(create(path)?, counties)
}

/// Writes one row per step. `local_cov` holds the coverage of the window
/// centred on the step and is left empty where that window is incomplete
/// or when the trajectory is shorter than `window`.
pub fn write_trajectory_to<W: Write>(
    output: W,
    report: &TrajectoryReport<f64>,
    window: usize,
) -> Result<()> {
    report.validate()?;
    let n = report.len();
    let mut local = vec![None; n];
    if window > 0 && window <= n {
        for (i, c) in local_coverage::<f64>(&report.errs, window)?
            .into_iter()
            .enumerate()
        {
            local[local_coverage_center(i, window)] = Some(c);
        }
    }
    let mut w = csv::Writer::from_writer(output);
    w.write_record(TRAJECTORY_HEADER).map_err(csv_error)?;
    for t in 0..n {
        let iv = report.intervals[t];
        w.write_record([
            (t + 1).to_string(),
            report.step_labels[t].clone(),
            format_number(report.alphas[t]),
            (report.errs[t].0 as u8).to_string(),
            format_number(iv.lower),
            format_number(iv.upper),
            local[t].map(format_number).unwrap_or_default(),
        ])
        .map_err(csv_error)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_trajectory(path: &Path, report: &TrajectoryReport<f64>, window: usize) -> Result<()> {
    write_trajectory_to(create(path)?, report, window)
}

/// Reads a trajectory file back. The file does not carry the ACI
/// configuration, so the caller supplies it.
pub fn read_trajectory_from<R: Read>(
    input: R,
    config: AciConfig<f64>,
) -> Result<TrajectoryReport<f64>> {
    let mut rdr = reader(input);
    check_header(&mut rdr, &TRAJECTORY_HEADER)?;
    let mut report = TrajectoryReport::new(config);
    for record in rdr.records() {
        let record = record.map_err(csv_error)?;
        let line = line_of(&record);
        let t: usize = record[0]
            .parse()
            .map_err(|_| Error::parse(line, format!("t: `{}` is not a step number", &record[0])))?;
        if t != report.len() + 1 {
            return Err(Error::parse(
                line,
                format!("expected step {}, found {t}", report.len() + 1),
            ));
        }
        let alpha = number(&record[2], "alpha_t", line)?;
        let err = match &record[3] {
            "0" => ErrBit::COVERED,
            "1" => ErrBit::MISSED,
            other => return Err(Error::parse(line, format!("err: `{other}` is not 0 or 1"))),
        };
        let lower = number(&record[4], "lower", line)?;
        let upper = number(&record[5], "upper", line)?;
        if !record[6].is_empty() {
            number(&record[6], "local_cov", line)?;
        }
        report.push(
            record[1].to_string(),
            alpha,
            PredictionInterval { lower, upper },
            err,
        );
    }
    Ok(report)
}

pub fn read_trajectory(path: &Path, config: AciConfig<f64>) -> Result<TrajectoryReport<f64>> {
    read_trajectory_from(open(path)?, config)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::aci::init;
    use crate::election::generate_synthetic_counties;
    use proptest::prelude::*;

    fn sample_report(n: usize) -> TrajectoryReport<f64> {
        let cfg = AciConfig::simple(0.1, 0.005).unwrap();
        let mut r = TrajectoryReport::new(cfg);
        let mut s = init(cfg).unwrap();
        for t in 0..n {
            let err = ErrBit(t % 7 == 3);
            let iv = match t % 10 {
                0 => PredictionInterval::empty(),
                1 => PredictionInterval::whole_line(),
                _ => PredictionInterval::new(t as f64 * 0.25 - 3.0, t as f64 * 0.5 + 1.125),
            };
            r.push(format!("2020-01-{t:03}"), s.current_level, iv, err);
            s = s.update(err);
        }
        r
    }

    fn round_values(r: &mut TrajectoryReport<f64>) {
        for a in r.alphas.iter_mut() {
            *a = format_number(*a).parse().unwrap();
        }
    }

    #[test]
    fn number_format() {
        assert_eq!(format_number(0.1), "0.1");
        assert_eq!(format_number(1.0 / 3.0), "0.333333333333");
        assert_eq!(format_number(f64::INFINITY), "inf");
        assert_eq!(format_number(f64::NEG_INFINITY), "-inf");
        assert_eq!(format_number(2.5e-7), "2.5e-7");
        assert_eq!(format_number(0.0), "0");
    }

    #[test]
    fn trajectory_round_trip() {
        let mut r = sample_report(100);
        round_values(&mut r);
        let mut buf = Vec::new();
        write_trajectory_to(&mut buf, &r, 20).unwrap();
        let back = read_trajectory_from(buf.as_slice(), r.config_echo).unwrap();
        assert_eq!(back, r);
        assert!(back.intervals[0].is_empty());
        let text = String::from_utf8(buf).unwrap();
        let rows: Vec<&str> = text.lines().collect();
        assert_eq!(rows[0], "t,label,alpha_t,err,lower,upper,local_cov");
        assert!(rows[1].ends_with(",inf,-inf,"));
        // the first window covers 0-based steps 0..20 and is centred on step 9
        assert!(rows[9].ends_with(","));
        assert!(!rows[10].ends_with(","));
    }

    #[test]
    fn trajectory_shorter_than_window_has_no_local_coverage() {
        let r = sample_report(5);
        let mut buf = Vec::new();
        write_trajectory_to(&mut buf, &r, 500).unwrap();
        assert!(String::from_utf8(buf)
            .unwrap()
            .lines()
            .skip(1)
            .all(|l| l.ends_with(',')));
    }

    #[test]
    fn trajectory_parse_errors_name_the_line() {
        let cfg = AciConfig::simple(0.1, 0.005).unwrap();
        let bad = "t,label,alpha_t,err,lower,upper,local_cov\n1,a,0.1,0,0,1,\n2,b,0.1,2,0,1,\n";
        match read_trajectory_from(bad.as_bytes(), cfg) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("{other:?}"),
        }
        let gap = "t,label,alpha_t,err,lower,upper,local_cov\n1,a,0.1,0,0,1,\n3,b,0.1,0,0,1,\n";
        assert!(matches!(
            read_trajectory_from(gap.as_bytes(), cfg),
            Err(Error::Parse { line: 3, .. })
        ));
        assert!(matches!(
            read_trajectory_from("t,label\n".as_bytes(), cfg),
            Err(Error::Parse { line: 1, .. })
        ));
    }

    #[test]
    fn prices() {
        let ok = "date,open\n2020-01-02,100.5\n2020-01-03,101\n";
        let s = read_prices_from(ok.as_bytes()).unwrap();
        assert_eq!(s.prices, vec![100.5, 101.0]);
        assert_eq!(s.labels, vec!["2020-01-02", "2020-01-03"]);
        let mut buf = Vec::new();
        write_prices_to(&mut buf, &s).unwrap();
        assert_eq!(read_prices_from(buf.as_slice()).unwrap(), s);

        let close = "date,close\n2020-01-02,100\n";
        assert!(matches!(
            read_prices_from(close.as_bytes()),
            Err(Error::Parse { line: 1, .. })
        ));
        let back = "date,open\n2020-01-03,100\n2020-01-02,100\n";
        assert!(matches!(
            read_prices_from(back.as_bytes()),
            Err(Error::Validation(_))
        ));
        let dup = "date,open\n2020-01-03,100\n2020-01-03,100\n";
        assert!(matches!(
            read_prices_from(dup.as_bytes()),
            Err(Error::Validation(_))
        ));
        let neg = "date,open\n2020-01-03,0\n";
        assert!(matches!(
            read_prices_from(neg.as_bytes()),
            Err(Error::Validation(_))
        ));
        let junk = "date,open\n2020-01-03,100\n2020-01-04,abc\n";
        assert!(matches!(
            read_prices_from(junk.as_bytes()),
            Err(Error::Parse { line: 3, .. })
        ));
        let bad_date = "date,open\n01/03/2020,100\n";
        assert!(matches!(
            read_prices_from(bad_date.as_bytes()),
            Err(Error::Parse { line: 2, .. })
        ));
        assert!(matches!(
            read_prices_from("date,open\n".as_bytes()),
            Err(Error::NoData(_))
        ));
    }

    #[test]
    fn counties() {
        let ok = "id,population,x1,x2,y_prev,y\na,1000,0.5,-1,400,420\nb,20,1,2,8,0\n";
        let c = read_counties_from(ok.as_bytes()).unwrap();
        assert_eq!(c.len(), 2);
        assert_eq!(c[0].covariates, vec![0.5, -1.0]);
        assert_eq!(c[1].y, 0.0);

        let zero_pop = "id,population,x1,y_prev,y\na,0,1,4,4\n";
        assert!(matches!(
            read_counties_from(zero_pop.as_bytes()),
            Err(Error::Validation(_))
        ));
        let zero_prev = "id,population,x1,y_prev,y\na,10,1,0,4\n";
        assert!(matches!(
            read_counties_from(zero_prev.as_bytes()),
            Err(Error::Validation(_))
        ));
        let ragged = "id,population,x1,y_prev,y\na,10,1,4,4\nb,10,1,4\n";
        assert!(matches!(
            read_counties_from(ragged.as_bytes()),
            Err(Error::Parse { line: 3, .. })
        ));
        let header = "id,pop,x1,y_prev,y\na,10,1,4,4\n";
        assert!(matches!(
            read_counties_from(header.as_bytes()),
            Err(Error::Parse { line: 1, .. })
        ));
        let order = "id,population,x2,x1,y_prev,y\na,10,1,1,4,4\n";
        assert!(read_counties_from(order.as_bytes()).is_err());
    }

    #[test]
    fn county_files_round_trip() {
        let counties = generate_synthetic_counties(50, 3, 9);
        let mut buf = Vec::new();
        write_counties_to(&mut buf, &counties).unwrap();
        let back = read_counties_from(buf.as_slice()).unwrap();
        assert_eq!(back.len(), 50);
        for (a, b) in counties.iter().zip(&back) {
            assert_eq!(a.id, b.id);
            assert!((a.y - b.y).abs() <= 1e-11 * a.y.abs());
            for (x, y) in a.covariates.iter().zip(&b.covariates) {
                assert!((x - y).abs() <= 1e-11 * x.abs().max(1e-300));
            }
        }
        let mut again = Vec::new();
        write_counties_to(&mut again, &back).unwrap();
        assert_eq!(buf, again);
    }

    proptest! {
        #[test]
        fn formatting_is_idempotent_and_close(x in proptest::num::f64::NORMAL | proptest::num::f64::SUBNORMAL | proptest::num::f64::ZERO) {
            let once: f64 = format_number(x).parse().unwrap();
            let twice: f64 = format_number(once).parse().unwrap();
            prop_assert_eq!(once, twice);
            prop_assert!((once - x).abs() <= 5e-12 * x.abs());
        }
    }
}
