use std::io::{Read, Write};

use crate::error::{Error, Result};

/// Frozen regression sample: `inputs` is row-major `n × input_dim`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub input_dim: usize,
    pub inputs: Vec<f64>,
    pub targets: Vec<f64>,
}

impl Dataset {
    pub fn new(input_dim: usize, inputs: Vec<f64>, targets: Vec<f64>) -> Result<Self> {
        if input_dim == 0 || inputs.len() != input_dim * targets.len() || targets.is_empty() {
            return Err(Error::Dataset(format!(
                "{} inputs do not form {} rows of dimension {}",
                inputs.len(),
                targets.len(),
                input_dim
            )));
        }
        if !inputs.iter().chain(&targets).all(|x| x.is_finite()) {
            return Err(Error::Dataset("non-finite entry".into()));
        }
        Ok(Self { input_dim, inputs, targets })
    }

    pub fn len(&self) -> usize {
        self.targets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.targets.is_empty()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.inputs[i * self.input_dim..(i + 1) * self.input_dim]
    }

    /// Writes `x_0,…,x_{d-1},y` with a header row. Values use the shortest
    /// representation that parses back to the same bits.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        let mut header: Vec<String> = (0..self.input_dim).map(|k| format!("x_{k}")).collect();
        header.push("y".into());
        wr.write_record(&header).map_err(io_err)?;
        for i in 0..self.len() {
            let mut rec: Vec<String> = self.row(i).iter().map(|x| format!("{x:?}")).collect();
            rec.push(format!("{:?}", self.targets[i]));
            wr.write_record(&rec).map_err(io_err)?;
        }
        wr.flush().map_err(|e| Error::Dataset(e.to_string()))?;
        Ok(())
    }

    pub fn read_csv<R: Read>(r: R) -> Result<Self> {
        let mut rd = csv::Reader::from_reader(r);
        let header = rd.headers().map_err(io_err)?.clone();
        let d = header.len().checked_sub(1).filter(|&d| d > 0).ok_or_else(|| {
            Error::Dataset("need at least one input column and a target column".into())
        })?;
        for (k, name) in header.iter().take(d).enumerate() {
            if name != format!("x_{k}") {
                return Err(Error::Dataset(format!("column {k} is '{name}', expected 'x_{k}'")));
            }
        }
        if &header[d] != "y" {
            return Err(Error::Dataset(format!("last column is '{}', expected 'y'", &header[d])));
        }
        let mut inputs = Vec::new();
        let mut targets = Vec::new();
        for rec in rd.records() {
            let rec = rec.map_err(io_err)?;
            for (k, field) in rec.iter().enumerate() {
                let x: f64 = field
                    .trim()
                    .parse()
                    .map_err(|_| Error::Dataset(format!("cannot parse '{field}'")))?;
                if k < d {
                    inputs.push(x);
                } else {
                    targets.push(x);
                }
            }
        }
        Self::new(d, inputs, targets)
    }
}

fn io_err(e: csv::Error) -> Error {
    Error::Dataset(e.to_string())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_round_trip_is_bit_exact() {
        let ds = Dataset::new(2, vec![0.1, -1e-300, 3.0, std::f64::consts::PI], vec![1.0 / 3.0, -2.5]).unwrap();
        let mut buf = Vec::new();
        ds.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("x_0,x_1,y\n"));
        let back = Dataset::read_csv(buf.as_slice()).unwrap();
        assert_eq!(back, ds);
    }

    #[test]
    fn rejects_bad_header() {
        let text = "a,y\n1,2\n";
        assert!(Dataset::read_csv(text.as_bytes()).is_err());
        let text = "x_0\n1\n";
        assert!(Dataset::read_csv(text.as_bytes()).is_err());
    }
}
