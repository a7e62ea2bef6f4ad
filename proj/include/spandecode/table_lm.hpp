#pragma once

// Deterministic table-driven language model. Every context (source prompt,
// decoder prefix) maps to an explicit next-token distribution; contexts not
// listed fall back to a single default distribution. Used as an exact oracle
// substrate for the decoders and as the backend of the `serve` subcommand.
//
// File format: a JSON object whose keys are "SRC#p1,p2,..." context keys and
// whose values are {"token_id": prob, ...} maps, plus a "default" entry.
// SRC is either "*" (any source) or the 16-digit lowercase hex of
// TableLM::source_key(source). Unlisted token ids have probability zero.

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "spandecode/scorer.hpp"

namespace spandecode {

class TableLM : public Scorer {
 public:
  static constexpr double kNormTolerance = 1e-12;

  // `terminators` is the token set whose summed probability is reported as
  // term_logprob.
  TableLM(const Vocabulary& vocab, std::vector<TokenId> terminators)
      : vocab_size_(vocab.size()),
        vocab_id_(vocab.fingerprint()),
        terminators_(std::move(terminators)),
        default_(vocab.size(), -std::log(static_cast<double>(vocab.size()))) {
    if (terminators_.empty()) {
      throw InvalidArgument("TableLM needs at least one terminator token");
    }
    for (TokenId t : terminators_) {
      if (t >= vocab_size_) {
        throw VocabularyMismatch("terminator id outside vocabulary");
      }
    }
  }

  // Hash used as the SRC part of context keys.
  static std::uint64_t source_key(const TokenSeq& source) {
    return detail::fnv1a_u32(source.ids);
  }

  // Defines the distribution for (source, prefix). `source` = nullopt makes
  // the entry match any source. Probabilities are linear and must sum to 1.
  void set_distribution(std::optional<std::uint64_t> source,
                        std::vector<TokenId> prefix,
                        const std::vector<double>& probs) {
    contexts_[Key{source.has_value(), source.value_or(0), std::move(prefix)}] =
        to_log(probs);
  }

  void set_distribution(std::vector<TokenId> prefix,
                        const std::vector<double>& probs) {
    set_distribution(std::nullopt, std::move(prefix), probs);
  }

  void set_default(const std::vector<double>& probs) { default_ = to_log(probs); }

  const LogDistribution& lookup(const TokenSeq& source,
                                std::span<const TokenId> prefix) const {
    std::vector<TokenId> p(prefix.begin(), prefix.end());
    Key key{true, source_key(source), p};
    if (auto it = contexts_.find(key); it != contexts_.end()) return it->second;
    key.has_source = false;
    key.source = 0;
    if (auto it = contexts_.find(key); it != contexts_.end()) return it->second;
    return default_;
  }

  const std::vector<TokenId>& terminators() const { return terminators_; }
  std::size_t context_count() const { return contexts_.size(); }

  std::uint64_t vocab_id() const override { return vocab_id_; }
  std::size_t vocab_size() const override { return vocab_size_; }

  static TableLM from_json(const nlohmann::json& j, const Vocabulary& vocab,
                           std::vector<TokenId> terminators) {
    TableLM lm(vocab, std::move(terminators));
    if (!j.is_object()) throw DataError("table LM file must be a JSON object");
    for (const auto& [key, value] : j.items()) {
      auto probs = parse_probs(value, vocab.size(), key);
      if (key == "default") {
        lm.set_default(probs);
        continue;
      }
      auto hash = key.find('#');
      if (hash == std::string::npos) {
        throw DataError("table LM key '" + key + "' lacks '#'");
      }
      std::string src = key.substr(0, hash);
      std::optional<std::uint64_t> source;
      if (src != "*") {
        if (src.size() != 16) throw DataError("bad source hash in key '" + key + "'");
        try {
          source = std::stoull(src, nullptr, 16);
        } catch (const std::exception&) {
          throw DataError("bad source hash in key '" + key + "'");
        }
      }
      std::vector<TokenId> prefix;
      std::stringstream ss(key.substr(hash + 1));
      std::string item;
      while (std::getline(ss, item, ',')) {
        if (item.empty()) continue;
        try {
          unsigned long v = std::stoul(item);
          if (v >= vocab.size()) throw DataError("");
          prefix.push_back(static_cast<TokenId>(v));
        } catch (const std::exception&) {
          throw DataError("bad token id '" + item + "' in key '" + key + "'");
        }
      }
      try {
        lm.set_distribution(source, std::move(prefix), probs);
      } catch (const InvalidArgument& e) {
        throw DataError("table LM entry '" + key + "': " + e.what());
      }
    }
    return lm;
  }

  static TableLM load(const std::filesystem::path& path, const Vocabulary& vocab,
                      std::vector<TokenId> terminators) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open table LM file " + path.string());
    nlohmann::json j;
    try {
      in >> j;
    } catch (const nlohmann::json::exception& e) {
      throw DataError("table LM file " + path.string() + ": " + e.what());
    }
    return from_json(j, vocab, std::move(terminators));
  }

  nlohmann::json to_json() const {
    nlohmann::json j = nlohmann::json::object();
    j["default"] = probs_json(default_);
    for (const auto& [key, dist] : contexts_) {
      std::string k;
      if (key.has_source) {
        char buf[17];
        std::snprintf(buf, sizeof buf, "%016llx",
                      static_cast<unsigned long long>(key.source));
        k = buf;
      } else {
        k = "*";
      }
      k += '#';
      for (std::size_t i = 0; i < key.prefix.size(); ++i) {
        if (i) k += ',';
        k += std::to_string(key.prefix[i]);
      }
      j[k] = probs_json(dist);
    }
    return j;
  }

 protected:
  StepScores score_forced(const ScoreRequest& req) override {
    const std::size_t m = req.forced_target.size();
    StepScores out;
    out.gold_logprob.reserve(m);
    out.term_logprob.reserve(m + 1);
    std::vector<TokenId> ctx = req.forced_prefix.ids;
    ctx.reserve(ctx.size() + m);
    for (std::size_t k = 0; k <= m; ++k) {
      const LogDistribution& dist = lookup(req.source, ctx);
      out.term_logprob.push_back(log_mass(dist, terminators_));
      if (k < m) {
        TokenId next = req.forced_target.ids[k];
        out.gold_logprob.push_back(dist[next]);
        ctx.push_back(next);
      }
    }
    return out;
  }

  LogDistribution score_next(const TokenSeq& source, const TokenSeq& prefix) override {
    return lookup(source, prefix.ids);
  }

 private:
  struct Key {
    bool has_source = false;
    std::uint64_t source = 0;
    std::vector<TokenId> prefix;
    auto operator<=>(const Key&) const = default;
  };

  LogDistribution to_log(const std::vector<double>& probs) const {
    if (probs.size() != vocab_size_) {
      throw InvalidArgument("distribution has " + std::to_string(probs.size()) +
                            " entries, vocabulary has " +
                            std::to_string(vocab_size_));
    }
    double sum = 0.0;
    for (double p : probs) {
      if (!(p >= 0.0) || p > 1.0) {
        throw InvalidArgument("probability outside [0, 1]");
      }
      sum += p;
    }
    if (std::abs(sum - 1.0) > kNormTolerance) {
      throw InvalidArgument("distribution sums to " + std::to_string(sum));
    }
    LogDistribution out(probs.size());
    for (std::size_t i = 0; i < probs.size(); ++i) {
      out[i] = probs[i] > 0.0 ? std::log(probs[i]) : kNegInf;
    }
    return out;
  }

  static std::vector<double> parse_probs(const nlohmann::json& value,
                                         std::size_t vocab_size,
                                         const std::string& key) {
    if (!value.is_object()) {
      throw DataError("table LM entry '" + key + "' must be an object");
    }
    std::vector<double> probs(vocab_size, 0.0);
    for (const auto& [tok, p] : value.items()) {
      unsigned long id = 0;
      try {
        id = std::stoul(tok);
      } catch (const std::exception&) {
        throw DataError("bad token id '" + tok + "' in entry '" + key + "'");
      }
      if (id >= vocab_size || !p.is_number()) {
        throw DataError("bad entry for token '" + tok + "' in '" + key + "'");
      }
      probs[id] = p.get<double>();
    }
    return probs;
  }

  static nlohmann::json probs_json(const LogDistribution& dist) {
    nlohmann::json j = nlohmann::json::object();
    for (std::size_t i = 0; i < dist.size(); ++i) {
      if (dist[i] != kNegInf) j[std::to_string(i)] = std::exp(dist[i]);
    }
    return j;
  }

  std::size_t vocab_size_;
  std::uint64_t vocab_id_;
  std::vector<TokenId> terminators_;
  LogDistribution default_;
  std::map<Key, LogDistribution> contexts_;
};

}  // namespace spandecode
