use super::PaygraphError;

/// Converts a CSV export with columns `txid,inputs,outputs` into the line
/// format accepted by [`super::PaymentGraph::parse`]. Inputs are
/// space-separated `txid:index`, outputs space-separated `value:owner`.
pub fn csv_to_lines(csv_text: &str) -> Result<String, PaygraphError> {
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(csv_text.as_bytes());
    let headers = reader.headers().map_err(|e| PaygraphError::Csv(e.to_string()))?.clone();
    let col = |name: &str| {
        headers
            .iter()
            .position(|h| h.eq_ignore_ascii_case(name))
            .ok_or_else(|| PaygraphError::Csv(format!("missing column {name}")))
    };
    let (ti, ii, oi) = (col("txid")?, col("inputs")?, col("outputs")?);
    let mut out = String::new();
    for row in reader.records() {
        let row = row.map_err(|e| PaygraphError::Csv(e.to_string()))?;
        let field = |i: usize| row.get(i).unwrap_or("").to_owned();
        let ins: Vec<String> = field(ii).split_whitespace().map(str::to_owned).collect();
        let outs: Vec<String> = field(oi).split_whitespace().map(str::to_owned).collect();
        out.push_str(&format!("{} | in={} | out={}\n", field(ti), ins.join(","), outs.join(",")));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::paygraph::PaymentGraph;

    #[test]
    fn converts_export() {
        let csv = "txid,inputs,outputs\n\
                   a,,50:alice\n\
                   b,a:0,20:bob 30:carol\n";
        let lines = csv_to_lines(csv).unwrap();
        assert_eq!(lines, "a | in= | out=50:alice\nb | in=a:0 | out=20:bob,30:carol\n");
        assert_eq!(PaymentGraph::parse(&lines).unwrap().len(), 2);
        assert!(csv_to_lines("id,x\n1,2\n").is_err());
    }
}
