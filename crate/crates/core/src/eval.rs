//! Corpus perplexity, n-gram novelty and question-rate statistics.

use std::collections::HashSet;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::DialogueExample;
use crate::error::{Error, Result};
use crate::model::decoder::teacher_forced_nll;
use crate::model::{Dropout, PreparedExample, SketchModel};
use crate::numeric::Graph;

/// Summed sketch NLL and target count (sketch tokens plus EOS) of one
/// example, without dropout.
pub fn example_nll(model: &SketchModel, ex: &PreparedExample) -> Result<(f64, usize)> {
    let mut g = Graph::new(&model.store);
    let mut dropout = Dropout::inference();
    let ctx = model.encode_context(&mut g, &ex.history, &ex.traits, &ex.bank, &mut dropout)?;
    let seq = teacher_forced_nll(&mut g, model, &ex.targets, ctx.init, &ctx.enc, &mut dropout)?;
    Ok((g.scalar(seq.total), ex.targets.len()))
}

/// `exp(total NLL / total target tokens)` over prepared examples.
pub fn corpus_perplexity_prepared(model: &SketchModel, examples: &[PreparedExample]) -> Result<f64> {
    if examples.is_empty() {
        return Err(Error::EmptyDataset("no examples to evaluate".into()));
    }
    let parts: Vec<Result<(f64, usize)>> = examples.par_iter().map(|ex| example_nll(model, ex)).collect();
    let (mut nll, mut count) = (0.0, 0usize);
    for p in parts {
        let (n, c) = p?;
        nll += n;
        count += c;
    }
    Ok((nll / count as f64).exp())
}

/// Sketch perplexity of `examples` with histories cut to `max_turns`.
pub fn corpus_perplexity(model: &SketchModel, examples: &[DialogueExample], max_turns: Option<usize>) -> Result<f64> {
    let prepared: Vec<PreparedExample> = examples.iter().map(|ex| model.prepare(ex, max_turns)).collect();
    corpus_perplexity_prepared(model, &prepared)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoveltyReport {
    /// Percentages of generated n-gram occurrences unseen in training,
    /// for n = 1, 2, 3.
    pub novel_unigram: f64,
    pub novel_bigram: f64,
    pub novel_trigram: f64,
    /// Percentage of generated responses that are not a training response.
    pub novel_response: f64,
    /// Generated n-gram occurrences for n = 1, 2, 3.
    pub ngram_counts: [usize; 3],
    pub generated: usize,
    pub training: usize,
}

fn percent(part: usize, whole: usize) -> f64 {
    if whole == 0 {
        0.0
    } else {
        100.0 * part as f64 / whole as f64
    }
}

/// Every n-gram position of every generated response is judged against the
/// set of n-grams occurring anywhere in `training`.
pub fn novelty_stats(generated: &[Vec<String>], training: &[Vec<String>]) -> Result<NoveltyReport> {
    if generated.is_empty() {
        return Err(Error::EmptyDataset("no generated responses".into()));
    }
    let mut pct = [0.0; 3];
    let mut counts = [0usize; 3];
    for n in 1..=3 {
        let seen: HashSet<&[String]> = training.iter().flat_map(|r| r.windows(n)).collect();
        let (mut novel, mut total) = (0usize, 0usize);
        for r in generated {
            for w in r.windows(n) {
                total += 1;
                novel += usize::from(!seen.contains(w));
            }
        }
        pct[n - 1] = percent(novel, total);
        counts[n - 1] = total;
    }
    let responses: HashSet<&Vec<String>> = training.iter().collect();
    let novel = generated.iter().filter(|r| !responses.contains(r)).count();
    Ok(NoveltyReport {
        novel_unigram: pct[0],
        novel_bigram: pct[1],
        novel_trigram: pct[2],
        novel_response: percent(novel, generated.len()),
        ngram_counts: counts,
        generated: generated.len(),
        training: training.len(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CompositionReport {
    pub questions: usize,
    pub statement_and_question: usize,
    pub total: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Composition {
    Statement,
    Question,
    StatementAndQuestion,
}

/// Sentences end at `.`, `!` or `?`; trailing tokens form a final
/// sentence. A response is a question when it contains `?`, and also a
/// statement when some sentence does not end in `?`.
pub fn classify(tokens: &[String]) -> Composition {
    let mut has_question = false;
    let mut has_statement = false;
    let mut open = false;
    for t in tokens {
        match t.as_str() {
            "?" => {
                has_question = true;
                open = false;
            }
            "." | "!" => {
                has_statement = true;
                open = false;
            }
            _ => open = true,
        }
    }
    has_statement |= open;
    match (has_question, has_statement) {
        (true, true) => Composition::StatementAndQuestion,
        (true, false) => Composition::Question,
        _ => Composition::Statement,
    }
}

pub fn question_rate(responses: &[Vec<String>]) -> CompositionReport {
    let mut r = CompositionReport { questions: 0, statement_and_question: 0, total: responses.len() };
    for resp in responses {
        match classify(resp) {
            Composition::Question => r.questions += 1,
            Composition::StatementAndQuestion => {
                r.questions += 1;
                r.statement_and_question += 1;
            }
            Composition::Statement => {}
        }
    }
    r
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub perplexity: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub novelty: Option<NoveltyReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub composition: Option<CompositionReport>,
}

impl EvalReport {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Two-column plain-text table with the values right-aligned.
    pub fn to_table(&self) -> String {
        let mut rows: Vec<(String, String)> = Vec::new();
        if let Some(p) = self.perplexity {
            rows.push(("sketch perplexity".into(), format!("{p:.2}")));
        }
        if let Some(n) = &self.novelty {
            rows.push(("novel unigrams %".into(), format!("{:.2}", n.novel_unigram)));
            rows.push(("novel bigrams %".into(), format!("{:.2}", n.novel_bigram)));
            rows.push(("novel trigrams %".into(), format!("{:.2}", n.novel_trigram)));
            rows.push(("novel responses %".into(), format!("{:.2}", n.novel_response)));
            rows.push(("generated responses".into(), n.generated.to_string()));
        }
        if let Some(c) = &self.composition {
            rows.push(("questions".into(), c.questions.to_string()));
            rows.push(("statement + question".into(), c.statement_and_question.to_string()));
            rows.push(("responses".into(), c.total.to_string()));
        }
        format_table(&rows)
    }
}

pub fn format_table(rows: &[(String, String)]) -> String {
    let kw = rows.iter().map(|r| r.0.len()).max().unwrap_or(0);
    let vw = rows.iter().map(|r| r.1.len()).max().unwrap_or(0);
    rows.iter().map(|(k, v)| format!("{k:<kw$}  {v:>vw$}\n")).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::tokenize;
    use crate::model::test_support::*;
    use crate::model::Variant;
    use crate::numeric::Precision;
    use approx::assert_relative_eq;

    fn toks(s: &str) -> Vec<String> {
        tokenize(s)
    }

    #[test]
    fn uniform_model_has_vocab_perplexity() {
        let mut model = tiny_model(Variant::SfA, 6, Precision::F64, 0);
        let ids: Vec<_> = model.store.iter().map(|(id, _)| id).collect();
        for id in ids {
            model.store.param_mut(id).data.fill(0.0);
        }
        let ppl = corpus_perplexity(&model, &[papaya_example()], None).unwrap();
        assert_relative_eq!(ppl, model.vocab.len() as f64, max_relative = 1e-12);
        assert!(corpus_perplexity(&model, &[], None).is_err());
    }

    #[test]
    fn perplexity_is_token_weighted() {
        let model = tiny_model(Variant::SfA, 6, Precision::F64, 2);
        let stop = crate::corpus::StopWordSet::default();
        let exs: Vec<DialogueExample> = [
            ("i love papaya", "hi"),
            ("i am a bee farmer . do you like food ?", "what's up ?"),
            ("george", "my name is ?"),
            ("do you like bees", "hi hi hi"),
            ("hi .", "hi"),
        ]
        .iter()
        .map(|(r, h)| DialogueExample::new(&["i am a bee farmer", "my name is george"], &[*h], r, &stop))
        .collect();
        let (mut nll, mut n) = (0.0, 0);
        for ex in &exs {
            let (a, b) = example_nll(&model, &model.prepare(ex, None)).unwrap();
            nll += a;
            n += b;
        }
        let ppl = corpus_perplexity(&model, &exs, None).unwrap();
        assert_relative_eq!(ppl, (nll / n as f64).exp(), max_relative = 1e-12);
    }

    #[test]
    fn novelty_edge_cases() {
        let train = vec![toks("i love papaya ."), toks("i am a bee farmer .")];
        let same = novelty_stats(&train, &train).unwrap();
        assert_eq!(
            [same.novel_unigram, same.novel_bigram, same.novel_trigram, same.novel_response],
            [0.0; 4]
        );
        let other = novelty_stats(&[toks("zebra quartz yodel")], &train).unwrap();
        assert_eq!(
            [other.novel_unigram, other.novel_bigram, other.novel_trigram, other.novel_response],
            [100.0; 4]
        );
        let mixed = novelty_stats(&[toks("i love bee"), toks("i love papaya .")], &train).unwrap();
        assert_relative_eq!(mixed.novel_unigram, 0.0);
        assert_relative_eq!(mixed.novel_bigram, 100.0 / 5.0);
        assert_relative_eq!(mixed.novel_trigram, 100.0 / 3.0);
        assert_relative_eq!(mixed.novel_response, 50.0);
        assert_eq!(mixed.ngram_counts, [7, 5, 3]);
        assert!(novelty_stats(&[], &train).is_err());
    }

    #[test]
    fn question_rules() {
        assert_eq!(classify(&toks("how are you ?")), Composition::Question);
        assert_eq!(classify(&toks("i am a bee farmer .")), Composition::Statement);
        assert_eq!(classify(&toks("george . what is your favorite name ?")), Composition::StatementAndQuestion);
        assert_eq!(classify(&toks("what ? really ? ok")), Composition::StatementAndQuestion);
        assert_eq!(classify(&[]), Composition::Statement);
        let r = question_rate(&[toks("how are you ?"), toks("hi ."), toks("hi ! you ?")]);
        assert_eq!(r, CompositionReport { questions: 2, statement_and_question: 1, total: 3 });
    }

    #[test]
    fn table_is_aligned() {
        let report = EvalReport {
            perplexity: Some(24.17),
            composition: Some(CompositionReport { questions: 49, statement_and_question: 25, total: 100 }),
            novelty: None,
        };
        let table = report.to_table();
        let widths: HashSet<usize> = table.lines().map(str::len).collect();
        assert_eq!(widths.len(), 1, "{table}");
        assert!(table.contains("24.17"));
        let back: EvalReport = serde_json::from_str(&report.to_json().unwrap()).unwrap();
        assert_eq!(back, report);
    }
}
