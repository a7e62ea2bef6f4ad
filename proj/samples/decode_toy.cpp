// Greedy vs. exact-extract on a hand-made table LM over the toy vocabulary.
// Greedy answers "1971", which is not a token span of the passage; the span
// decoders have to settle for "(1971".

#include <iostream>

#include "spandecode/spandecode.hpp"

using namespace spandecode;

int main() {
  Vocabulary vocab = Vocabulary::load(SPANDECODE_DATA_DIR "/toy_vocab.json");
  const std::string passage = "the IRA was founded in (1971)";
  const std::string question = "When was it founded?";

  const PromptTemplate& tpl = find_template(list_templates(), kDefaultTemplateId);
  TokenFraming framing = resolve_framing(render_target_prefix_and_terminator(tpl), vocab);

  SpanQuery q{encode(passage, vocab), encode(render_encoder_input(tpl, passage, question), vocab),
              framing.forced_prefix};

  TableLM lm(vocab, framing.terminator_ids);
  auto peaked = [&](TokenId id, double mass) {
    std::vector<double> p(vocab.size(), (1.0 - mass) / static_cast<double>(vocab.size() - 1));
    p[id] = mass;
    return p;
  };
  const TokenId open = framing.forced_prefix.ids[0];
  const TokenId close = framing.terminator_ids[0];
  const TokenId year = vocab.id_of("\xE2\x96\x81" "1971");
  const TokenId paren = vocab.id_of("\xE2\x96\x81" "(19");
  const TokenId tail = vocab.id_of("71");
  lm.set_distribution({open}, peaked(year, 0.5));
  lm.set_distribution({open, year}, peaked(close, 0.9));
  lm.set_distribution({open, paren}, peaked(tail, 0.8));
  lm.set_distribution({open, paren, tail}, peaked(close, 0.3));

  DecodeConfig cfg;
  cfg.terminator_ids = framing.terminator_ids;
  for (Algorithm a : {Algorithm::greedy, Algorithm::exact_extract, Algorithm::naive}) {
    DecodeResult r = run_decoder(a, q, lm, vocab, cfg);
    std::cout << to_json(r).dump() << "\n";
  }
}
