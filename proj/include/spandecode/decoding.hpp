#pragma once

// Span decoders over the Scorer interface.
//
// exact_extract finds argmax_{i,j} L(i,j) + e(i,j) over all passage spans
// T[i:i+j] using one teacher-forced pass per suffix T[i:n]: every span is a
// prefix of some suffix, so a single pass over the suffix yields the
// per-step gold log-probabilities ell(i,k) and stop log-probabilities e(i,k)
// for all of its prefixes. Cumulative scores follow
//   L(i,0) = 0,  L(i,j) = L(i,j-1) + ell(i,j-1).
// naive_exact scores every span with its own pass and serves as the oracle.
// greedy_decode is plain argmax generation.

#include <algorithm>
#include <cstdint>
#include <future>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "spandecode/error.hpp"
#include "spandecode/metrics.hpp"
#include "spandecode/scorer.hpp"
#include "spandecode/tokenizer.hpp"

namespace spandecode {

enum class Algorithm { greedy, exact_extract, naive };

inline std::string_view to_string(Algorithm a) {
  switch (a) {
    case Algorithm::greedy: return "greedy";
    case Algorithm::exact_extract: return "exact_extract";
    case Algorithm::naive: return "naive";
  }
  return "unknown";
}

inline Algorithm parse_algorithm(std::string_view s) {
  if (s == "greedy") return Algorithm::greedy;
  if (s == "exact" || s == "exact_extract") return Algorithm::exact_extract;
  if (s == "naive") return Algorithm::naive;
  throw InvalidArgument("unknown algorithm '" + std::string(s) + "'");
}

struct DecodeConfig {
  std::optional<std::size_t> max_span_len;
  std::size_t max_greedy_steps = 64;
  bool allow_empty_span = false;
  // Tokens that end greedy generation; their summed probability is the stop
  // score. Must match the scorer's terminator set.
  std::vector<TokenId> terminator_ids;
  // Concurrent suffix passes in build_span_table.
  std::size_t jobs = 1;

  void validate() const {
    if (max_greedy_steps < 1) throw InvalidArgument("max_greedy_steps must be >= 1");
    if (max_span_len && *max_span_len < 1) {
      throw InvalidArgument("max_span_len must be >= 1");
    }
  }
};

// A passage together with the conditioning it is decoded under.
struct SpanQuery {
  TokenSeq passage;
  TokenSeq prompt;  // rendered encoder input
  TokenSeq prefix;  // forced decoder prefix, e.g. the opening sentinel
};

struct SpanScoreTable {
  std::size_t n = 0;
  std::vector<std::vector<double>> ell;         // ell[i][k], k < n - i
  std::vector<std::vector<double>> eterm;       // eterm[i][k], k <= n - i
  std::vector<std::vector<double>> cumulative;  // L[i][j], j <= n - i

  double span_logprob(std::size_t start, std::size_t length) const {
    return cumulative.at(start).at(length) + eterm.at(start).at(length);
  }
};

struct DecodeResult {
  Algorithm algorithm = Algorithm::exact_extract;
  // Token span in the passage; unset when a greedy output is not a span.
  std::optional<std::size_t> start;
  std::optional<std::size_t> length;
  double span_logprob = 0.0;
  std::string text;
  std::uint64_t passes_used = 0;
  bool extractive = false;
  bool truncated = false;  // greedy hit max_greedy_steps
  std::vector<TokenId> output_ids;
};

namespace detail {

inline ScoreRequest suffix_request(const SpanQuery& q, std::size_t start,
                                   std::size_t length) {
  return {q.prompt, q.prefix, q.passage.slice(start, length)};
}

inline void check_query(const SpanQuery& q) {
  if (q.passage.empty()) throw InvalidArgument("empty passage");
  if (q.passage.vocab_id != q.prompt.vocab_id ||
      q.passage.vocab_id != q.prefix.vocab_id) {
    throw VocabularyMismatch("passage, prompt and prefix use different vocabularies");
  }
}

inline std::size_t span_cap(const DecodeConfig& cfg, std::size_t available) {
  return cfg.max_span_len ? std::min(*cfg.max_span_len, available) : available;
}

// Running argmax with the fixed tie-break: higher score, then smaller start,
// then smaller length. Candidates must be offered in (start, length) order.
struct BestSpan {
  bool found = false;
  std::size_t start = 0;
  std::size_t length = 0;
  double score = kNegInf;

  void offer(std::size_t i, std::size_t j, double s) {
    if (!found || s > score) {
      found = true;
      start = i;
      length = j;
      score = s;
    }
  }
};

inline DecodeResult span_result(Algorithm algo, const BestSpan& best,
                                const SpanQuery& q, const Vocabulary& vocab,
                                std::uint64_t passes) {
  DecodeResult r;
  r.algorithm = algo;
  r.start = best.start;
  r.length = best.length;
  r.span_logprob = best.score;
  auto span = q.passage.slice(best.start, best.length);
  r.output_ids = span.ids;
  r.text = decode(span, vocab);
  r.passes_used = passes;
  r.extractive = true;
  return r;
}

}  // namespace detail

// Fills the DP table with exactly n scorer passes (one per suffix). Rows are
// independent, so with jobs > 1 they are scored concurrently; the result does
// not depend on completion order.
inline SpanScoreTable build_span_table(const SpanQuery& q, Scorer& scorer,
                                       std::size_t jobs = 1) {
  detail::check_query(q);
  const std::size_t n = q.passage.size();
  SpanScoreTable t;
  t.n = n;
  t.ell.resize(n);
  t.eterm.resize(n);
  t.cumulative.resize(n);

  auto fill_row = [&](std::size_t i) {
    StepScores s = scorer.teacher_forced_pass(detail::suffix_request(q, i, n - i));
    std::vector<double> cum(n - i + 1);
    cum[0] = 0.0;
    for (std::size_t j = 1; j <= n - i; ++j) cum[j] = cum[j - 1] + s.gold_logprob[j - 1];
    t.ell[i] = std::move(s.gold_logprob);
    t.eterm[i] = std::move(s.term_logprob);
    t.cumulative[i] = std::move(cum);
  };

  jobs = std::max<std::size_t>(1, std::min(jobs, n));
  if (jobs == 1) {
    for (std::size_t i = 0; i < n; ++i) fill_row(i);
    return t;
  }
  std::vector<std::future<void>> workers;
  workers.reserve(jobs);
  for (std::size_t w = 0; w < jobs; ++w) {
    workers.push_back(std::async(std::launch::async, [&, w] {
      for (std::size_t i = w; i < n; i += jobs) fill_row(i);
    }));
  }
  for (auto& f : workers) f.get();
  return t;
}

// Argmax over a filled table, honouring the span cap and empty-span option.
inline std::optional<std::pair<std::size_t, std::size_t>> best_span(
    const SpanScoreTable& t, const DecodeConfig& cfg) {
  detail::BestSpan best;
  for (std::size_t i = 0; i < t.n; ++i) {
    const std::size_t cap = detail::span_cap(cfg, t.n - i);
    for (std::size_t j = cfg.allow_empty_span ? 0 : 1; j <= cap; ++j) {
      best.offer(i, j, t.span_logprob(i, j));
    }
  }
  if (!best.found) return std::nullopt;
  return std::pair{best.start, best.length};
}

inline DecodeResult exact_extract(const SpanQuery& q, Scorer& scorer,
                                  const Vocabulary& vocab,
                                  const DecodeConfig& cfg = {}) {
  cfg.validate();
  SpanScoreTable t = build_span_table(q, scorer, cfg.jobs);
  auto span = best_span(t, cfg);
  detail::BestSpan best;
  best.found = true;
  best.start = span->first;
  best.length = span->second;
  best.score = t.span_logprob(span->first, span->second);
  return detail::span_result(Algorithm::exact_extract, best, q, vocab, t.n);
}

// Scores every candidate span with its own pass: n(n+1)/2 passes uncapped.
inline DecodeResult naive_exact(const SpanQuery& q, Scorer& scorer,
                                const Vocabulary& vocab,
                                const DecodeConfig& cfg = {}) {
  cfg.validate();
  detail::check_query(q);
  const std::size_t n = q.passage.size();
  detail::BestSpan best;
  std::uint64_t passes = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t cap = detail::span_cap(cfg, n - i);
    for (std::size_t j = cfg.allow_empty_span ? 0 : 1; j <= cap; ++j) {
      StepScores s = scorer.teacher_forced_pass(detail::suffix_request(q, i, j));
      ++passes;
      double total = 0.0;
      for (double x : s.gold_logprob) total += x;
      best.offer(i, j, total + s.term_logprob[j]);
    }
  }
  return detail::span_result(Algorithm::naive, best, q, vocab, passes);
}

// Argmax generation until a terminator or the step limit. The reported
// span_logprob is the sum of the chosen tokens' log-probabilities plus the
// stop log-probability (omitted when truncated).
inline DecodeResult greedy_decode(const SpanQuery& q, Scorer& scorer,
                                  const Vocabulary& vocab,
                                  const DecodeConfig& cfg) {
  cfg.validate();
  if (cfg.terminator_ids.empty()) {
    throw InvalidArgument("greedy decoding needs a terminator set");
  }
  DecodeResult r;
  r.algorithm = Algorithm::greedy;
  TokenSeq prefix = q.prefix;
  bool stopped = false;
  for (std::size_t step = 0; step < cfg.max_greedy_steps; ++step) {
    LogDistribution dist = scorer.next_token_distribution(q.prompt, prefix);
    ++r.passes_used;
    auto best = static_cast<TokenId>(
        std::max_element(dist.begin(), dist.end()) - dist.begin());
    if (std::find(cfg.terminator_ids.begin(), cfg.terminator_ids.end(), best) !=
        cfg.terminator_ids.end()) {
      r.span_logprob += log_mass(dist, cfg.terminator_ids);
      stopped = true;
      break;
    }
    r.span_logprob += dist[best];
    r.output_ids.push_back(best);
    prefix.ids.push_back(best);
  }
  r.truncated = !stopped;

  std::vector<TokenId> content;
  for (TokenId id : r.output_ids) {
    if (!vocab.is_special(id)) content.push_back(id);
  }
  r.text = std::string(trim(decode(content, vocab)));
  if (has_alnum(r.text)) {
    if (auto span = find_span(content, q.passage.ids)) {
      r.start = span->first;
      r.length = span->second;
      r.extractive = true;
    }
  }
  return r;
}

inline DecodeResult run_decoder(Algorithm algo, const SpanQuery& q, Scorer& scorer,
                                const Vocabulary& vocab, const DecodeConfig& cfg) {
  switch (algo) {
    case Algorithm::greedy: return greedy_decode(q, scorer, vocab, cfg);
    case Algorithm::exact_extract: return exact_extract(q, scorer, vocab, cfg);
    case Algorithm::naive: return naive_exact(q, scorer, vocab, cfg);
  }
  throw InvalidArgument("unknown algorithm");
}

inline nlohmann::json to_json(const DecodeResult& r) {
  auto num = [](double x) -> nlohmann::json {
    if (std::isfinite(x)) return x;
    return nullptr;
  };
  nlohmann::json j = {
      {"algorithm", to_string(r.algorithm)},
      {"start", r.start ? nlohmann::json(*r.start) : nlohmann::json(nullptr)},
      {"length", r.length ? nlohmann::json(*r.length) : nlohmann::json(nullptr)},
      {"span_logprob", num(r.span_logprob)},
      {"text", r.text},
      {"passes_used", r.passes_used},
      {"extractive", r.extractive},
      {"truncated", r.truncated},
      {"output_ids", r.output_ids},
  };
  return j;
}

}  // namespace spandecode
