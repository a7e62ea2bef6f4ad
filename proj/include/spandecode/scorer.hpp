#pragma once

// Teacher-forced scoring interface over a conditional language model
// P(. | prompt). One call to teacher_forced_pass scores a whole forced target:
// for every step k it reports the log-probability of the gold continuation and
// the log-probability of stopping (the log-sum over the terminator set).

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "spandecode/error.hpp"
#include "spandecode/tokenizer.hpp"

namespace spandecode {

using LogDistribution = std::vector<double>;

inline constexpr double kNegInf = -std::numeric_limits<double>::infinity();

inline double log_sum_exp(std::span<const double> xs) {
  double m = kNegInf;
  for (double x : xs) m = std::max(m, x);
  if (m == kNegInf) return kNegInf;
  double acc = 0.0;
  for (double x : xs) acc += std::exp(x - m);
  return m + std::log(acc);
}

// Log of the total probability the distribution assigns to `ids`.
inline double log_mass(const LogDistribution& dist, std::span<const TokenId> ids) {
  std::vector<double> parts;
  parts.reserve(ids.size());
  for (TokenId id : ids) {
    if (id >= dist.size()) {
      throw VocabularyMismatch("terminator id " + std::to_string(id) +
                               " outside distribution");
    }
    parts.push_back(dist[id]);
  }
  return std::min(0.0, log_sum_exp(parts));
}

struct ScoreRequest {
  TokenSeq source;         // rendered prompt (encoder input)
  TokenSeq forced_prefix;  // e.g. the opening sentinel
  TokenSeq forced_target;  // decoder input after the prefix
};

struct StepScores {
  // gold_logprob[k] = log P(target[k] | prefix + target[0:k]), size m.
  std::vector<double> gold_logprob;
  // term_logprob[k] = log P(terminator | prefix + target[0:k]), size m + 1.
  std::vector<double> term_logprob;
};

inline void validate_step_scores(const StepScores& s, std::size_t m) {
  if (s.gold_logprob.size() != m || s.term_logprob.size() != m + 1) {
    throw TransportError("step scores have wrong length: expected " +
                         std::to_string(m) + "/" + std::to_string(m + 1) +
                         ", got " + std::to_string(s.gold_logprob.size()) + "/" +
                         std::to_string(s.term_logprob.size()));
  }
  auto bad = [](double x) { return std::isnan(x) || x > 0.0; };
  if (std::any_of(s.gold_logprob.begin(), s.gold_logprob.end(), bad) ||
      std::any_of(s.term_logprob.begin(), s.term_logprob.end(), bad)) {
    throw TransportError("step scores contain a positive or NaN log-probability");
  }
}

// Abstract scorer. Implementations must tolerate concurrent calls; the pass
// counter is atomic and every interface call counts as exactly one pass.
class Scorer {
 public:
  Scorer() = default;
  Scorer(const Scorer& other) : passes_(other.pass_count()) {}
  Scorer& operator=(const Scorer& other) {
    passes_.store(other.pass_count(), std::memory_order_relaxed);
    return *this;
  }
  virtual ~Scorer() = default;

  StepScores teacher_forced_pass(const ScoreRequest& req) {
    check(req.source);
    check(req.forced_prefix);
    check(req.forced_target);
    passes_.fetch_add(1, std::memory_order_relaxed);
    StepScores out = score_forced(req);
    validate_step_scores(out, req.forced_target.size());
    return out;
  }

  LogDistribution next_token_distribution(const TokenSeq& source,
                                          const TokenSeq& prefix) {
    check(source);
    check(prefix);
    passes_.fetch_add(1, std::memory_order_relaxed);
    LogDistribution out = score_next(source, prefix);
    if (out.size() != vocab_size()) {
      throw TransportError("distribution has " + std::to_string(out.size()) +
                           " entries, vocabulary has " +
                           std::to_string(vocab_size()));
    }
    return out;
  }

  std::uint64_t pass_count() const {
    return passes_.load(std::memory_order_relaxed);
  }
  void reset_pass_count() { passes_.store(0, std::memory_order_relaxed); }

  virtual std::uint64_t vocab_id() const = 0;
  virtual std::size_t vocab_size() const = 0;

 protected:
  virtual StepScores score_forced(const ScoreRequest& req) = 0;
  virtual LogDistribution score_next(const TokenSeq& source,
                                     const TokenSeq& prefix) = 0;

 private:
  void check(const TokenSeq& seq) const {
    if (seq.vocab_id != vocab_id()) {
      throw VocabularyMismatch("request vocabulary does not match the scorer's");
    }
  }

  std::atomic<std::uint64_t> passes_{0};
};

}  // namespace spandecode
