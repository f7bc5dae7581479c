use idrkit::audio::{align_span_to_time, cut_audio, Audio, TimeSpan, WordTimestamp};
use idrkit::corpus::{load_lexicon, parse_subtitles, write_srt, ConnectiveEntry, LanguageCode, Lexicon, RelationLabel, SubtitleFormat, SubtitleSegment};
use idrkit::miner::{dedup, detect_explicitation, CandidatePair, ImplicitInstance, Position};
use idrkit::segmenter::{build_context, fallback_spans, strip_markers};
use idrkit::text::normalize_space;
use proptest::prelude::*;

fn segments() -> impl Strategy<Value = Vec<SubtitleSegment>> {
    proptest::collection::vec(("[a-zA-Zéü]{1,8}( [a-zA-Z,.!?]{1,8}){0,6}", 1u64..5000, 0u64..3000), 1..12).prop_map(|rows| {
        let mut t = 0;
        rows.into_iter()
            .enumerate()
            .map(|(i, (text, len, gap))| {
                let start = t + gap;
                t = start + len;
                SubtitleSegment {
                    talk_id: "p".into(),
                    index: i,
                    start_ms: start,
                    end_ms: t,
                    text,
                }
            })
            .collect()
    })
}

proptest! {
    #[test]
    fn srt_roundtrip(segs in segments()) {
        let once = parse_subtitles("p", write_srt(&segs).as_bytes(), SubtitleFormat::Srt).unwrap();
        prop_assert_eq!(&once, &segs);
        let twice = parse_subtitles("p", write_srt(&once).as_bytes(), SubtitleFormat::Srt).unwrap();
        prop_assert_eq!(twice, once);
    }

    #[test]
    fn lexicon_never_keeps_ambiguous(rows in proptest::collection::vec(("[a-z]{1,6}( [a-z]{1,5})?", 0usize..4, any::<bool>()), 0..20)) {
        let tsv: String = rows
            .iter()
            .map(|(s, l, a)| format!("{s}\t{}\t{a}\n", RelationLabel::ALL[*l]))
            .collect();
        let lex = load_lexicon(tsv.as_bytes(), &LanguageCode::new("en")).unwrap();
        prop_assert!(lex.iter().all(|e| !e.ambiguous));
        prop_assert_eq!(lex.len(), rows.iter().filter(|r| !r.2).count());
    }

    #[test]
    fn lexicon_order_is_irrelevant(seed in any::<u64>(), tgt in "(so|ainsi|ainsi que|donc|alors) [a-z ]{0,20}\\.") {
        use rand::{seq::SliceRandom, SeedableRng};
        let fr = LanguageCode::new("fr");
        let entries: Vec<ConnectiveEntry> = [
            ("ainsi", RelationLabel::CauseEffect),
            ("ainsi que", RelationLabel::Elaboration),
            ("donc", RelationLabel::CauseEffect),
            ("alors", RelationLabel::Temporal),
        ]
        .iter()
        .map(|(s, l)| ConnectiveEntry { surface: s.to_string(), language: fr.clone(), sense: *l, ambiguous: false })
        .collect();
        let mut shuffled = entries.clone();
        shuffled.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
        let src = Lexicon::new(LanguageCode::new("en"), vec![]);
        let seg = |t: &str| SubtitleSegment { talk_id: "p".into(), index: 0, start_ms: 0, end_ms: 1000, text: t.into() };
        let pair = CandidatePair { source_segment: seg("we left."), target_segment: seg(&tgt), target_language: fr.clone(), duration_ratio: 1.0 };
        let a = detect_explicitation(&pair, &src, &Lexicon::new(fr.clone(), entries));
        let b = detect_explicitation(&pair, &src, &Lexicon::new(fr, shuffled));
        prop_assert_eq!(a, b);
    }

    #[test]
    fn dedup_is_idempotent(rows in proptest::collection::vec((0usize..4, 0usize..4, 0usize..3), 0..30)) {
        let langs = ["de", "es", "fr"];
        let xs: Vec<ImplicitInstance> = rows
            .iter()
            .map(|&(seg, l, w)| {
                let label = RelationLabel::ALL[l];
                let en = LanguageCode::new("en");
                ImplicitInstance {
                    instance_id: ImplicitInstance::make_id("t", &en, seg, label),
                    talk_id: "t".into(),
                    source_language: en,
                    explicit_connective: "x".into(),
                    witness_language: LanguageCode::new(langs[w]),
                    other_witnesses: vec![],
                    label,
                    source_segment_index: seg,
                    context_segment_indices: [None, Some(seg), None],
                    source_text: "s".into(),
                    target_text: "t".into(),
                    position: Position { start: 0, end: 1, sentence: 0, clause: 0, boundary: idrkit::miner::Boundary::SegmentInitial },
                    filter_trail: vec![],
                }
            })
            .collect();
        let once = dedup(xs);
        prop_assert_eq!(dedup(once.clone()), once);
    }

    #[test]
    fn markers_strip_to_window_text(segs in segments(), k in 0usize..12) {
        let k = k % segs.len();
        let ctx = build_context(&segs, k, &LanguageCode::new("en"));
        prop_assert_eq!(normalize_space(&strip_markers(&ctx.marked_text)), normalize_space(&ctx.text()));
        prop_assert_eq!(fallback_spans(&ctx), fallback_spans(&ctx.clone()));
    }

    #[test]
    fn slice_idempotence(n in 1600usize..8000, a in 0.0f64..0.3, len in 0.01f64..0.2) {
        let audio = Audio { samples: (0..n).map(|i| (i as f32 * 0.37).sin()).collect(), sample_rate: 16_000 };
        let span = TimeSpan::new(a, a + len).unwrap();
        prop_assume!((a + len) * 16_000.0 < n as f64);
        let once = cut_audio(&audio, span, "t").unwrap();
        let again = cut_audio(&once.as_audio(), TimeSpan::new(0.0, len).unwrap(), "t").unwrap();
        prop_assert_eq!(again.samples, once.samples);
    }

    #[test]
    fn alignment_ignores_punctuation(k in 1usize..4, punct in "[,.!?;:]{0,3}") {
        let words: Vec<WordTimestamp> = ["we", "went", "to", "the", "sea", "today"]
            .iter()
            .enumerate()
            .map(|(i, w)| WordTimestamp { word: format!("{w}{punct}"), start: i as f64, end: i as f64 + 0.5 })
            .collect();
        let plain = align_span_to_time("went to the sea", &words[..]).unwrap();
        let marked = align_span_to_time(&format!("Went{punct} to the{punct} sea"), &words[..]).unwrap();
        prop_assert_eq!(plain, marked);
        prop_assert_eq!(plain.start, 1.0);
        let _ = k;
    }
}
