use geossl_core::report::{
    emit_plot, format_percent, plot_series, reference_records, render_table, Layout, MetricsRecord, MetricsStore,
    Protocol, Provenance, Query, SCHEMA_VERSION,
};
use geossl_core::AggregateResult;

fn measured(id: &str, pretrain: &str, downstream: &str, shots: Option<usize>, acc: f64) -> MetricsRecord {
    MetricsRecord {
        schema_version: SCHEMA_VERSION,
        experiment_id: id.into(),
        pretrain_dataset: pretrain.into(),
        downstream_dataset: downstream.into(),
        protocol: if shots.is_some() { Protocol::LinearEval } else { Protocol::Finetune },
        shots,
        aggregate: AggregateResult {
            mean_accuracy: acc,
            std_accuracy: 0.01,
            std_defined: true,
            n_runs: 5,
            run_ids: vec![format!("{id}-0")],
        },
        timestamp: 1_700_000_000,
        provenance: Provenance::Measured,
        citation: None,
    }
}

fn row<'a>(table: &'a geossl_core::report::ReportTable, label: &str) -> &'a geossl_core::report::TableRow {
    table.reference.iter().find(|r| r.label == label).unwrap()
}

#[test]
fn store_round_trips_and_rejects_duplicates() {
    let dir = tempfile::tempdir().unwrap();
    let store = MetricsStore::open(dir.path().join("nested/metrics.jsonl"));
    assert!(store.load().unwrap().is_empty());
    let a = measured("a", "PatternNet", "UCM", None, 0.97);
    let b = measured("b", "PatternNet", "UCM", Some(5), 0.8);
    store.persist(&a).unwrap();
    store.persist(&b).unwrap();
    assert_eq!(store.load().unwrap(), vec![a.clone(), b.clone()]);
    assert!(matches!(store.persist(&a), Err(geossl_core::Error::Duplicate(_))));
    assert_eq!(store.load().unwrap().len(), 2);
    let q = Query { protocol: Some(Protocol::LinearEval), ..Query::default() };
    assert_eq!(store.query(&q).unwrap(), vec![b]);
}

#[test]
fn records_are_validated() {
    let mut r = measured("x", "P", "U", None, 0.5);
    r.shots = Some(5);
    assert!(r.validate().is_err());
    let mut r = measured("x", "P", "U", None, 1.5);
    assert!(r.validate().is_err());
    r.aggregate.mean_accuracy = 0.5;
    r.provenance = Provenance::Published;
    assert!(r.validate().is_err());
    assert!(reference_records().iter().all(|r| r.validate().is_ok()));
}

#[test]
fn published_rows_render_exactly() {
    let refs = reference_records();
    assert_eq!(refs.len(), 69);
    let v = render_table(&refs, Layout::TableV);
    let cols: Vec<&str> = v.columns.iter().map(|c| c.downstream.as_str()).collect();
    assert_eq!(cols, ["AID", "EuroSAT", "UCM"]);
    assert_eq!(row(&v, "PatternNet").cells, ["97.83", "99.26", "99.90"]);
    assert_eq!(row(&v, "Resisc45").cells, ["97.62", "97.75", "98.24"]);
    assert_eq!(row(&v, "MLRSNet").cells, ["97.78", "98.45", "98.85"]);

    let vi = render_table(&refs, Layout::TableVI);
    let ucm: Vec<usize> = (0..vi.columns.len()).filter(|&i| vi.columns[i].downstream == "UCM").collect();
    assert_eq!(ucm.iter().map(|&i| vi.columns[i].shots.unwrap()).collect::<Vec<_>>(), [5, 10, 20, 50]);
    let pn = row(&vi, "PatternNet");
    assert_eq!(ucm.iter().map(|&i| pn.cells[i].as_str()).collect::<Vec<_>>(), ["81.65", "85.87", "91.70", "94.66"]);
    let im = row(&vi, "ImageNet");
    let aid: Vec<usize> = (0..vi.columns.len()).filter(|&i| vi.columns[i].downstream == "AID").collect();
    assert_eq!(aid.iter().map(|&i| im.cells[i].as_str()).collect::<Vec<_>>(), ["45.45", "52.36", "63.14", "70.17"]);

    let text = vi.to_text();
    assert_eq!(text, render_table(&refs, Layout::TableVI).to_text());
    assert!(text.contains("PatternNet*"));
}

#[test]
fn measured_and_reference_rows_stay_apart() {
    let mut records = reference_records();
    records.push(measured("m1", "PatternNet", "UCM", None, 0.5));
    records.push(measured("m2", "PatternNet", "UCM", None, 0.6));
    let t = render_table(&records, Layout::TableV);
    let m = t.measured.iter().find(|r| r.label == "PatternNet").unwrap();
    assert_eq!(m.cells, ["—", "—", "60.00"]);
    assert_eq!(m.sources[2].as_deref(), Some("m2"));
    let r = t.reference.iter().find(|r| r.label == "PatternNet").unwrap();
    assert_eq!(r.cells[2], "99.90");
    assert_eq!(r.provenance, Provenance::Published);

    let empty = render_table(&[], Layout::TableII);
    assert_eq!(empty.measured.len(), 4);
    assert!(empty.reference.is_empty());
    assert!(empty.measured.iter().all(|r| r.cells.iter().all(|c| c == "—")));
    assert_eq!(format_percent(0.97834), "97.83");
}

#[test]
fn plot_covers_every_series() {
    let refs = reference_records();
    let series = plot_series(&refs).unwrap();
    for d in ["AID", "EuroSAT", "UCM"] {
        let lines: Vec<_> = series.iter().filter(|s| s.downstream == d).collect();
        assert_eq!(lines.len(), 4, "{d}");
        assert!(lines.iter().all(|s| s.points.len() == 4));
    }
    let dir = tempfile::tempdir().unwrap();
    let (svg, tsv) = emit_plot(&refs, &dir.path().join("plots/shots")).unwrap();
    let svg = std::fs::read_to_string(svg).unwrap();
    assert!(svg.starts_with("<svg") || svg.starts_with("<?xml"));
    let tsv = std::fs::read_to_string(tsv).unwrap();
    let lines: Vec<&str> = tsv.lines().skip(1).collect();
    assert_eq!(lines.len(), 48);
    for line in lines {
        let f: Vec<&str> = line.split('\t').collect();
        let shots: usize = f[3].parse().unwrap();
        let rec = refs
            .iter()
            .find(|r| r.pretrain_dataset == f[1] && r.downstream_dataset == f[0] && r.shots == Some(shots))
            .unwrap();
        assert_eq!(f[4].parse::<f64>().unwrap().to_bits(), rec.aggregate.mean_accuracy.to_bits());
    }

    let one = vec![measured("solo", "PatternNet", "UCM", Some(5), 0.4)];
    let series = plot_series(&one).unwrap();
    assert_eq!(series.len(), 1);
    assert_eq!(series[0].points, vec![(5, 0.4)]);
    assert!(plot_series(&[measured("ft", "P", "U", None, 0.4)]).is_err());
}

#[test]
fn layouts_parse() {
    for (s, l) in [("tableII", Layout::TableII), ("tableV", Layout::TableV), ("tableVI", Layout::TableVI)] {
        assert_eq!(Layout::parse(s).unwrap(), l);
    }
    assert!(Layout::parse("tableIX").is_err());
}
