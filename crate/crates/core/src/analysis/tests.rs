use super::*;
use proptest::prelude::*;
use StrategyLabel::*;

fn trace(request: &[f64]) -> AttentionTrace {
    AttentionTrace {
        sentence: request.iter().map(|_| [0.75, 0.25]).collect(),
        request: request.to_vec(),
        success_probability: 0.5,
    }
}

fn t(s: &str) -> Triple {
    s.parse().unwrap()
}

fn occ(triple: &str, success: bool, att: f64) -> TripletOccurrence {
    TripletOccurrence {
        request_id: "r".into(),
        triple: t(triple),
        center: 0,
        start: 0,
        end: 1,
        cumulative_attention: 1.0,
        strategy_attention: att,
        success,
    }
}

#[test]
fn interior_argmax() {
    let o = extract_triplet("a", true, &trace(&[0.1, 0.8, 0.1]), &[Concreteness, Politeness, Politeness]).unwrap();
    assert_eq!(o.triple, t("Co Po Po"));
    assert_eq!((o.center, o.start, o.end), (1, 0, 3));
    assert!((o.cumulative_attention - 1.0).abs() < 1e-12);
    assert_eq!(o.strategy_attention, 0.25);
}

#[test]
fn last_sentence_gets_eos() {
    let o = extract_triplet("a", false, &trace(&[0.3, 0.7]), &[Reciprocity, Politeness]).unwrap();
    assert_eq!(o.triple, t("Re Po EOS"));
    assert_eq!(o.sentence_range(), 0..2);
}

#[test]
fn single_sentence_is_bracketed() {
    let o = extract_triplet("a", false, &trace(&[1.0]), &[Impact]).unwrap();
    assert_eq!(o.triple, t("SOS Im EOS"));
    assert_eq!(o.cumulative_attention, 1.0);
}

#[test]
fn ties_pick_the_earliest_sentence() {
    let o = extract_triplet("a", false, &trace(&[0.4, 0.4, 0.2]), &[Impact, Credibility, Reciprocity]).unwrap();
    assert_eq!(o.center, 0);
    assert_eq!(o.triple, t("SOS Im Cr"));
}

#[test]
fn length_mismatch_is_an_input_error() {
    let r = extract_triplet("a", false, &trace(&[0.5, 0.5]), &[Impact]);
    assert!(matches!(r, Err(Error::Input(_))));
}

#[test]
fn success_rate_is_a_plain_average() {
    let recs = aggregate_occurrences(&[occ("Po Po EOS", true, 0.1), occ("Po Po EOS", false, 0.3)], 0.0).unwrap();
    assert_eq!(recs.len(), 1);
    assert_eq!(recs[0].success_rate, 0.5);
    assert!((recs[0].attention - 0.2).abs() < 1e-12);
    assert_eq!(recs[0].rank, 1);
}

#[test]
fn rare_and_other_triples_are_dropped() {
    let mut occs: Vec<TripletOccurrence> = (0..999).map(|i| occ("Co Co Co", i % 3 == 0, 0.1)).collect();
    occs.push(occ("Re Im EOS", true, 0.1));
    let recs = aggregate_occurrences(&occs, DEFAULT_MIN_FREQ).unwrap();
    assert_eq!(recs.len(), 1);
    assert_eq!(recs[0].triple, t("Co Co Co"));

    let occs: Vec<TripletOccurrence> = (0..10).map(|_| occ("Co Ot EOS", true, 0.1)).collect();
    assert!(aggregate_occurrences(&occs, DEFAULT_MIN_FREQ).unwrap().is_empty());
}

#[test]
fn ties_break_on_attention_then_name() {
    let occs = vec![
        occ("Re Po EOS", true, 0.2),
        occ("Co Po EOS", true, 0.2),
        occ("Po Po EOS", true, 0.1),
        occ("Co Co Co", false, 0.0),
    ];
    let recs = aggregate_occurrences(&occs, 0.0).unwrap();
    let order: Vec<String> = recs.iter().map(|r| r.triple.shorthand()).collect();
    assert_eq!(order, vec!["Po Po EOS", "Co Po EOS", "Re Po EOS", "Co Co Co"]);
    assert_eq!(recs.iter().map(|r| r.rank).collect::<Vec<_>>(), vec![1, 2, 3, 4]);
}

#[test]
fn short_requests_concentrate_all_attention() {
    let occs: Vec<TripletOccurrence> = [vec![1.0], vec![0.4, 0.6], vec![0.2, 0.5, 0.3]]
        .iter()
        .enumerate()
        .map(|(i, att)| {
            let labels = vec![Concreteness; att.len()];
            extract_triplet(&format!("r{i}"), true, &trace(att), &labels).unwrap()
        })
        .collect();
    let (mu, sigma) = concentration_stats(&occs).unwrap();
    assert!((mu - 1.0).abs() < 1e-12 && sigma < 1e-12);
    assert!(matches!(concentration_stats(&[]), Err(Error::Input(_))));
}

#[test]
fn triple_parsing() {
    assert_eq!(t("(Po, Po, EOS)"), t("Po,Po,EOS"));
    assert_eq!(t("SOS Co Re").expansion(), "SOS, Concreteness, Reciprocity");
    assert!("Po EOS".parse::<Triple>().is_err());
    assert!("Po EOS Po".parse::<Triple>().is_err());
    assert!("Xx Po EOS".parse::<Triple>().is_err());
    let json = serde_json::to_string(&t("Co Co Im")).unwrap();
    assert_eq!(json, "\"Co Co Im\"");
}

#[test]
fn reference_ranking_shape() {
    let r = reference_ranking();
    assert_eq!(r.len(), 31);
    assert_eq!(r[0].triple, t("Po Po EOS"));
    assert_eq!((r[0].attention, r[0].success_rate), (0.0, 0.82));
    assert_eq!(r[30].triple, t("Co Co Im"));
    assert_eq!(r[30].success_rate, 0.27);
    assert!(r.windows(2).all(|w| w[0].success_rate >= w[1].success_rate));
    assert!(r.iter().enumerate().all(|(i, x)| x.rank == i + 1));
}

#[test]
fn reference_correlation_is_strongly_negative() {
    let c = attention_success_correlation(&reference_ranking()).unwrap();
    assert!(c.r <= -0.85 && c.p < 1e-4, "{c:?}");
}

#[test]
fn report_files_follow_rank_order() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("ranks.csv");
    let mut recs = reference_ranking();
    recs.reverse();
    let plot = rank_report(&recs, &csv, Some("test")).unwrap();
    let text = std::fs::read_to_string(&csv).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "# test");
    assert_eq!(lines[1], "rank,shorthand,expansion,attention,success_rate,count");
    assert_eq!(lines[2], "1,Po Po EOS,\"Politeness, Politeness, EOS\",0.0000,0.8200,0");
    assert!(lines[32].starts_with("31,Co Co Im,"));
    let tsv = std::fs::read_to_string(plot).unwrap();
    assert_eq!(tsv.lines().nth(2).unwrap(), "1\tPo Po EOS\t0.0000\t0.8200");

    let single = vec![TripletRecord {
        rank: 1,
        triple: t("Co Co Co"),
        count: 3,
        success_rate: 0.2,
        attention: 0.1,
    }];
    rank_report(&single, &csv, None).unwrap();
    assert!(matches!(rank_report(&[], &csv, None), Err(Error::EmptyInput(_))));
    let bad = dir.path().join("missing").join("x.csv");
    assert!(matches!(rank_report(&single, &bad, None), Err(Error::Io { .. })));
}

#[test]
fn malformed_ranking_rows_are_reported_with_line_numbers() {
    let err = parse_ranking_csv("rank,shorthand,attention,success\n1,Po Po EOS,0.1\n").unwrap_err();
    assert!(matches!(err, Error::Parse { line: 2, .. }));
}

fn label() -> impl Strategy<Value = StrategyLabel> {
    (0usize..6).prop_map(|i| StrategyLabel::ALL[i])
}

proptest! {
    #[test]
    fn extraction_is_total(
        rows in prop::collection::vec((label(), 0.01f64..1.0, 0.0f64..1.0), 1..12)
    ) {
        let total: f64 = rows.iter().map(|r| r.1).sum();
        let tr = AttentionTrace {
            sentence: rows.iter().map(|r| [1.0 - r.2, r.2]).collect(),
            request: rows.iter().map(|r| r.1 / total).collect(),
            success_probability: 0.5,
        };
        let labels: Vec<StrategyLabel> = rows.iter().map(|r| r.0).collect();
        let o = extract_triplet("p", true, &tr, &labels).unwrap();
        prop_assert!((0.0..=1.0).contains(&o.cumulative_attention));
        prop_assert!((0.0..=1.0).contains(&o.strategy_attention));
        prop_assert!(o.start <= o.center && o.center < o.end && o.end <= labels.len());
        prop_assert_eq!(o.triple.0[1], Slot::Label(labels[o.center]));
        prop_assert!(!o.triple.labels().is_empty());
    }

    #[test]
    fn counts_never_exceed_requests(
        picks in prop::collection::vec((0usize..4, any::<bool>()), 1..200),
        min_freq in 0.0f64..0.1,
    ) {
        let names = ["Po Po EOS", "Co Co Co", "SOS Im Re", "Co Ot Co"];
        let occs: Vec<TripletOccurrence> = picks.iter().map(|(i, s)| occ(names[*i], *s, 0.1)).collect();
        let recs = aggregate_occurrences(&occs, min_freq).unwrap();
        let counted: usize = recs.iter().map(|r| r.count).sum();
        prop_assert!(counted <= occs.len());
        let without_other = picks.iter().filter(|(i, _)| *i != 3).count();
        let all = aggregate_occurrences(&occs, 0.0).unwrap();
        prop_assert_eq!(all.iter().map(|r| r.count).sum::<usize>(), without_other);
        for r in &recs {
            prop_assert!((0.0..=1.0).contains(&r.success_rate));
        }
    }
}
