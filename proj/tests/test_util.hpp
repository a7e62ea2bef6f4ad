#pragma once

// Shared fixtures: vocabularies, table LMs with controlled argmax paths,
// random table LMs for fuzzing, and a brute-force span scorer that reads the
// table directly instead of going through the teacher-forced interface.

#include <cctype>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "spandecode/spandecode.hpp"

namespace spandecode::testing {

inline std::filesystem::path repo_data(const std::string& name) {
  return std::filesystem::path(SPANDECODE_DATA_DIR) / name;
}

inline std::filesystem::path test_data(const std::string& name) {
  return std::filesystem::path(SPANDECODE_TEST_DATA_DIR) / name;
}

inline std::string read_file(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline const Vocabulary& toy_vocab() {
  static const Vocabulary v = Vocabulary::load(repo_data("toy_vocab.json"));
  return v;
}

inline std::vector<std::string> piece_strings(const TokenSeq& seq, const Vocabulary& v) {
  std::vector<std::string> out;
  for (TokenId id : seq.ids) out.push_back(v.piece(id));
  return out;
}

// Closed vocabulary: "</s>", "<extra_id_0>", "<extra_id_1>", then word pieces
// "▁w3", "▁w4", ... up to `size` entries. No byte fallback.
inline Vocabulary small_vocab(std::size_t size) {
  std::vector<std::string> pieces = {"</s>", "<extra_id_0>", "<extra_id_1>"};
  for (std::size_t i = pieces.size(); i < size; ++i) {
    pieces.push_back(std::string(kBoundaryMarker) + "w" + std::to_string(i));
  }
  return Vocabulary(pieces, "</s>", {"<extra_id_0>", "<extra_id_1>"}, false);
}

inline constexpr TokenId kEos = 0;
inline constexpr TokenId kOpen = 1;
inline constexpr TokenId kClose = 2;

// Probability vector with `mass` on each listed id and the rest spread evenly
// over the other ids.
inline std::vector<double> dist_with(std::size_t vocab_size,
                                     const std::vector<std::pair<TokenId, double>>& fixed) {
  std::vector<double> p(vocab_size, 0.0);
  double used = 0.0;
  std::vector<bool> set(vocab_size, false);
  for (auto [id, m] : fixed) {
    p[id] = m;
    set[id] = true;
    used += m;
  }
  std::size_t rest = vocab_size - fixed.size();
  if (rest > 0) {
    double share = (1.0 - used) / static_cast<double>(rest);
    for (std::size_t i = 0; i < vocab_size; ++i) {
      if (!set[i]) p[i] = share;
    }
  }
  return p;
}

// Random distribution; `peaked` concentrates mass on a few tokens so that
// argmax decisions are not all near-ties.
template <class Rng>
std::vector<double> random_dist(std::size_t vocab_size, Rng& rng, bool peaked) {
  std::exponential_distribution<double> expo(1.0);
  std::vector<double> w(vocab_size);
  double sum = 0.0;
  for (auto& x : w) {
    x = expo(rng);
    if (peaked) x = x * x * x * x;
    sum += x;
  }
  for (auto& x : w) x /= sum;
  return w;
}

// Table LM defining a random distribution for every context the decoders can
// reach on `passage` (prefix + any passage substring), plus a random default.
template <class Rng>
TableLM random_table_lm(const Vocabulary& vocab, const std::vector<TokenId>& terminators,
                        const TokenSeq& passage, const TokenSeq& prefix, Rng& rng) {
  TableLM lm(vocab, terminators);
  std::bernoulli_distribution coin(0.5);
  lm.set_default(random_dist(vocab.size(), rng, coin(rng)));
  const std::size_t n = passage.size();
  for (std::size_t i = 0; i < n; ++i) {
    std::vector<TokenId> ctx = prefix.ids;
    for (std::size_t k = 0; k <= n - i; ++k) {
      lm.set_distribution(ctx, random_dist(vocab.size(), rng, coin(rng)));
      if (k < n - i) ctx.push_back(passage.ids[i + k]);
    }
  }
  return lm;
}

// Makes greedy decoding under `prefix` emit exactly `path` followed by
// `terminator`.
inline void force_greedy_path(TableLM& lm, std::size_t vocab_size, std::vector<TokenId> prefix,
                              const std::vector<TokenId>& path, TokenId terminator) {
  for (TokenId t : path) {
    lm.set_distribution(prefix, dist_with(vocab_size, {{t, 0.6}}));
    prefix.push_back(t);
  }
  lm.set_distribution(prefix, dist_with(vocab_size, {{terminator, 0.7}}));
}

// log P(span) computed straight from the table, bypassing teacher_forced_pass.
inline double brute_force_span_logprob(const TableLM& lm, const TokenSeq& prompt,
                                       const TokenSeq& prefix, const TokenSeq& passage,
                                       std::size_t start, std::size_t length) {
  std::vector<TokenId> ctx = prefix.ids;
  double total = 0.0;
  for (std::size_t k = 0; k < length; ++k) {
    TokenId next = passage.ids[start + k];
    total += lm.lookup(prompt, ctx)[next];
    ctx.push_back(next);
  }
  return total + log_mass(lm.lookup(prompt, ctx), lm.terminators());
}

// Scorer wrapper that records every teacher-forced request it forwards.
class RecordingScorer : public Scorer {
 public:
  explicit RecordingScorer(Scorer& inner) : inner_(inner) {}
  std::uint64_t vocab_id() const override { return inner_.vocab_id(); }
  std::size_t vocab_size() const override { return inner_.vocab_size(); }
  std::vector<ScoreRequest> requests;

 protected:
  StepScores score_forced(const ScoreRequest& req) override {
    requests.push_back(req);
    return inner_.teacher_forced_pass(req);
  }
  LogDistribution score_next(const TokenSeq& s, const TokenSeq& p) override {
    return inner_.next_token_distribution(s, p);
  }

 private:
  Scorer& inner_;
};

// Scorer that fails every call with a transport error.
class FailingScorer : public Scorer {
 public:
  explicit FailingScorer(const Vocabulary& v) : id_(v.fingerprint()), size_(v.size()) {}
  std::uint64_t vocab_id() const override { return id_; }
  std::size_t vocab_size() const override { return size_; }

 protected:
  StepScores score_forced(const ScoreRequest&) override {
    throw TransportError("connection refused");
  }
  LogDistribution score_next(const TokenSeq&, const TokenSeq&) override {
    throw TransportError("connection refused");
  }

 private:
  std::uint64_t id_;
  std::size_t size_;
};

// Counts non-overlapping occurrences of `surface` in `text` that start and end
// on word boundaries, scanning left to right over raw bytes.
inline std::size_t count_word_aligned(std::string_view text, std::string_view surface) {
  auto word = [](char c) {
    auto u = static_cast<unsigned char>(c);
    return !std::isspace(u) && !std::ispunct(u);
  };
  std::size_t n = 0;
  std::size_t pos = 0;
  while ((pos = text.find(surface, pos)) != std::string_view::npos) {
    std::size_t end = pos + surface.size();
    bool left = pos == 0 || !word(text[pos - 1]);
    bool right = end == text.size() || !word(text[end]);
    if (left && right) {
      ++n;
      pos = end;
    } else {
      ++pos;
    }
  }
  return n;
}

// Returns an empty string when `ex` satisfies every example invariant for
// `passage`, otherwise the first violation.
inline std::string rss_violation(const std::string& passage, const RssExample& ex,
                                 const RssConfig& cfg) {
  const std::string open(kAnswerOpen);
  auto at = ex.masked_passage.find(open);
  if (at == std::string::npos || ex.masked_passage.find(open, at + 1) != std::string::npos) {
    return "mask count";
  }
  if (ex.target != open + ex.span_surface + std::string(kAnswerClose)) return "target";
  std::string restored = ex.masked_passage.substr(0, at) + ex.span_surface +
                         ex.masked_passage.substr(at + open.size());
  if (restored != passage) return "unmasking does not restore the passage";
  if (ex.occurrence_count < 2) return "occurrence_count < 2";
  if (count_word_aligned(passage, ex.span_surface) != ex.occurrence_count) return "count";
  if (count_word_aligned(ex.masked_passage, ex.span_surface) < 1) return "no recurrence left";
  auto words = rss_detail::split_words(ex.span_surface);
  if (words.empty()) return "empty span";
  auto text = [&](const rss_detail::Word& w) {
    return std::string_view(ex.span_surface).substr(w.begin, w.end - w.begin);
  };
  if (rss_detail::is_stopword(text(words.front()), cfg) ||
      rss_detail::is_stopword(text(words.back()), cfg)) {
    return "stopword boundary";
  }
  if (words.size() < cfg.min_span_words || words.size() > cfg.max_span_words) {
    return "span length";
  }
  return "";
}

// Word-soup passages; roughly a third contain a planted repeated phrase.
template <class Rng>
std::vector<std::string> synthetic_passages(std::size_t count, Rng& rng) {
  const std::vector<std::string> content = {
      "Turing", "Alan",  "machine", "Paris", "river", "IRA", "1971", "Lovelace", "engine",
      "city",   "bridge", "north",  "south", "museum", "war", "treaty", "Ada", "river-bank"};
  const std::vector<std::string> stop = {"the", "a", "of", "and", "was", "in", "is", "The"};
  const std::vector<std::string> punct = {"", "", "", ",", ".", ";"};
  std::uniform_int_distribution<std::size_t> len(3, 30);
  std::uniform_int_distribution<int> coin(0, 2);
  std::vector<std::string> out;
  for (std::size_t p = 0; p < count; ++p) {
    std::vector<std::string> words;
    std::size_t n = len(rng);
    for (std::size_t k = 0; k < n; ++k) {
      const auto& pool = coin(rng) == 0 ? stop : content;
      words.push_back(pool[std::uniform_int_distribution<std::size_t>(0, pool.size() - 1)(rng)] +
                      punct[std::uniform_int_distribution<std::size_t>(0, punct.size() - 1)(rng)]);
    }
    if (coin(rng) == 0 && n >= 6) {
      std::size_t a = std::uniform_int_distribution<std::size_t>(0, n / 2 - 2)(rng);
      std::size_t b = std::uniform_int_distribution<std::size_t>(n / 2, n - 2)(rng);
      words[b] = words[a];
      words[b + 1] = words[a + 1];
    }
    std::string s;
    for (const auto& w : words) s += (s.empty() ? "" : " ") + w;
    out.push_back(s);
  }
  return out;
}

}  // namespace spandecode::testing
