use std::fs::File;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use ndarray::Array2;

use super::schema::{is_target_header, Feature};
use super::table::{Sample, SampleTable};
use crate::error::{Error, Result};

/// Environment variable naming the default dataset CSV.
pub const DATA_ENV: &str = "RUL_DATA";

pub fn default_data_path() -> Option<PathBuf> {
    std::env::var_os(DATA_ENV).map(PathBuf::from)
}

/// Loads the battery-cycle CSV.
///
/// Every numeric column except RUL becomes a feature, in file order. Columns
/// with no parseable cell at all (identifiers, free text) are ignored. Rows
/// with a missing or non-numeric cell in a retained column are dropped and
/// counted in [`SampleTable::dropped_rows`].
pub fn load_dataset(path: impl AsRef<Path>) -> Result<SampleTable> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_dataset(file)
}

pub fn read_dataset<R: Read>(reader: R) -> Result<SampleTable> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let headers: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
    if headers.iter().all(|h| h.is_empty()) {
        return Err(Error::EmptyDataset);
    }

    let target = headers
        .iter()
        .position(|h| is_target_header(h))
        .ok_or_else(|| Error::MissingColumn("RUL".into()))?;
    for f in Feature::REQUIRED {
        if !headers.iter().any(|h| Feature::from_header(h) == Some(f)) {
            return Err(Error::MissingColumn(f.name().into()));
        }
    }

    let records: Vec<Vec<Option<f64>>> = rdr
        .records()
        .map(|rec| {
            rec.map(|r| {
                (0..headers.len())
                    .map(|j| r.get(j).and_then(parse_cell))
                    .collect()
            })
        })
        .collect::<std::result::Result<_, _>>()?;

    let columns: Vec<usize> = (0..headers.len())
        .filter(|&j| j != target)
        .filter(|&j| {
            Feature::from_header(&headers[j]).is_some() || records.iter().any(|r| r[j].is_some())
        })
        .collect();

    let mut rows = Vec::new();
    let mut rul = Vec::new();
    let mut dropped = 0;
    for r in &records {
        let cells: Option<Vec<f64>> = columns.iter().map(|&j| r[j]).collect();
        match (cells, r[target]) {
            (Some(cells), Some(y)) if y >= 0.0 => {
                rows.extend(cells);
                rul.push(y);
            }
            _ => dropped += 1,
        }
    }
    if rul.is_empty() {
        return Err(Error::EmptyDataset);
    }

    let feature_names = columns
        .iter()
        .map(|&j| match Feature::from_header(&headers[j]) {
            Some(f) => f.name().to_string(),
            None => headers[j].clone(),
        })
        .collect();
    let features = Array2::from_shape_vec((rul.len(), columns.len()), rows)
        .expect("row width matches column count");
    Ok(SampleTable {
        feature_names,
        features,
        rul,
        labels: None,
        dropped_rows: dropped,
    })
}

/// Writes samples as CSV with canonical column names and a trailing `rul`
/// column. Total time is written only when every sample has it.
pub fn write_dataset<W: Write>(samples: &[Sample], writer: W) -> Result<()> {
    let with_total = !samples.is_empty() && samples.iter().all(|s| s.total_time_s.is_some());
    let columns: Vec<Feature> = Feature::ALL
        .into_iter()
        .filter(|&f| f != Feature::TotalTime || with_total)
        .collect();
    let mut w = csv::Writer::from_writer(writer);
    let mut header: Vec<&str> = columns.iter().map(|f| f.name()).collect();
    header.push("rul");
    w.write_record(&header)?;
    for s in samples {
        let mut row: Vec<String> = columns
            .iter()
            .map(|&f| s.get(f).unwrap_or(f64::NAN).to_string())
            .collect();
        row.push(s.rul.to_string());
        w.write_record(&row)?;
    }
    w.flush().map_err(|e| Error::Csv(e.into()))?;
    Ok(())
}

fn parse_cell(s: &str) -> Option<f64> {
    s.parse::<f64>().ok().filter(|v| v.is_finite())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_input_is_empty_dataset() {
        assert!(matches!(read_dataset(&b""[..]), Err(Error::EmptyDataset)));
        assert!(matches!(read_dataset(HEADER.as_bytes()), Err(Error::EmptyDataset)));
    }

    #[test]
    fn written_csv_reads_back() {
        let samples = crate::data::synth_samples(2, 20, 4);
        let mut buf = Vec::new();
        write_dataset(&samples, &mut buf).unwrap();
        let t = read_dataset(buf.as_slice()).unwrap();
        assert_eq!(t, SampleTable::from_samples(&samples));
    }

    const HEADER: &str = "Cycle_Index,Discharge Time (s),Decrement 3.6-3.4V (s),Max. Voltage Dischar. (V),Min. Voltage Charg. (V),Time at 4.15V (s),Time constant current (s),Charging time (s),Total time (s),RUL";

    #[test]
    fn reads_kaggle_layout_in_file_order() {
        let csv = format!(
            "{HEADER}\n1,2595.3,1151.48,3.67,3.211,5460.0,6755.01,10777.82,2595.3,1112\n\
             2,7408.64,1172.51,4.246,3.22,5508.99,6762.02,10500.35,7408.64,1111\n"
        );
        let t = read_dataset(csv.as_bytes()).unwrap();
        assert_eq!(t.n_rows(), 2);
        assert_eq!(
            t.feature_names,
            vec![
                "cycle_index",
                "discharge_time_s",
                "decrement_3p6_3p4v_s",
                "max_voltage_discharge_v",
                "min_voltage_charge_v",
                "time_at_4p15v_s",
                "time_constant_current_s",
                "charging_time_s",
                "total_time_s"
            ]
        );
        assert_eq!(t.rul, vec![1112.0, 1111.0]);
        assert_eq!(t.features[[1, 1]], 7408.64);
    }

    #[test]
    fn drops_rows_with_bad_cells() {
        let csv = format!(
            "{HEADER}\n1,2,3,4,5,6,7,8,9,10\n2,,3,4,5,6,7,8,9,10\n3,2,abc,4,5,6,7,8,9,10\n4,2,3,4,5,6,7,8,9\n"
        );
        let t = read_dataset(csv.as_bytes()).unwrap();
        assert_eq!(t.n_rows(), 1);
        assert_eq!(t.dropped_rows, 3);
    }

    #[test]
    fn extra_text_columns_are_ignored_and_numeric_ones_kept() {
        let csv = "battery,cycle index,discharge time,time at 4.15v,time constant current,\
                   decrement 3.6-3.4v,max voltage discharge,min voltage charge,charging time,temp,rul\n\
                   b1,1,2,3,4,5,6,7,8,25.0,100\n";
        let t = read_dataset(csv.as_bytes()).unwrap();
        assert_eq!(t.n_features(), 9);
        assert_eq!(t.feature_names.last().unwrap(), "temp");
    }

    #[test]
    fn missing_rul_is_a_schema_error() {
        let csv = HEADER.replace(",RUL", "");
        match read_dataset(format!("{csv}\n1,2,3,4,5,6,7,8,9\n").as_bytes()) {
            Err(Error::MissingColumn(c)) => assert_eq!(c, "RUL"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn header_only_is_empty() {
        assert!(matches!(
            read_dataset(format!("{HEADER}\n").as_bytes()),
            Err(Error::EmptyDataset)
        ));
    }
}
