#pragma once

// Recurring-span-selection (RSS) example generation: find word spans that
// occur at least twice in a passage, mask one occurrence with <extra_id_0>
// and emit <extra_id_0>span<extra_id_1> as the target.
//
// Words are maximal runs of characters that are neither ASCII whitespace nor
// ASCII punctuation. A span is a run of consecutive words taken with the
// original bytes in between; two occurrences match only if their surfaces are
// byte-identical. Valid spans start and end on a non-stopword (stopword lookup
// is case-insensitive). Only maximal spans are reported: a span is dropped
// when a longer valid span with the same occurrence count covers every one of
// its occurrences.

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <future>
#include <map>
#include <optional>
#include <random>
#include <ranges>
#include <string>
#include <string_view>
#include <unordered_set>
#include <vector>

#include <json.hpp>

#include "spandecode/detail/hash.hpp"
#include "spandecode/error.hpp"
#include "spandecode/metrics.hpp"
#include "spandecode/prompting.hpp"

namespace spandecode {

// NLTK English stopword list.
inline const std::unordered_set<std::string>& default_stopwords() {
  static const std::unordered_set<std::string> words = {
      "i", "me", "my", "myself", "we", "our", "ours", "ourselves", "you",
      "you're", "you've", "you'll", "you'd", "your", "yours", "yourself",
      "yourselves", "he", "him", "his", "himself", "she", "she's", "her",
      "hers", "herself", "it", "it's", "its", "itself", "they", "them",
      "their", "theirs", "themselves", "what", "which", "who", "whom", "this",
      "that", "that'll", "these", "those", "am", "is", "are", "was", "were",
      "be", "been", "being", "have", "has", "had", "having", "do", "does",
      "did", "doing", "a", "an", "the", "and", "but", "if", "or", "because",
      "as", "until", "while", "of", "at", "by", "for", "with", "about",
      "against", "between", "into", "through", "during", "before", "after",
      "above", "below", "to", "from", "up", "down", "in", "out", "on", "off",
      "over", "under", "again", "further", "then", "once", "here", "there",
      "when", "where", "why", "how", "all", "any", "both", "each", "few",
      "more", "most", "other", "some", "such", "no", "nor", "not", "only",
      "own", "same", "so", "than", "too", "very", "s", "t", "can", "will",
      "just", "don", "don't", "should", "should've", "now", "d", "ll", "m",
      "o", "re", "ve", "y", "ain", "aren", "aren't", "couldn", "couldn't",
      "didn", "didn't", "doesn", "doesn't", "hadn", "hadn't", "hasn",
      "hasn't", "haven", "haven't", "isn", "isn't", "ma", "mightn",
      "mightn't", "mustn", "mustn't", "needn", "needn't", "shan", "shan't",
      "shouldn", "shouldn't", "wasn", "wasn't", "weren", "weren't", "won",
      "won't", "wouldn", "wouldn't"};
  return words;
}

// One word per line; blank lines and lines starting with '#' are skipped.
inline std::unordered_set<std::string> load_stopwords(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open stopword file " + path.string());
  std::unordered_set<std::string> out;
  std::string line;
  while (std::getline(in, line)) {
    auto w = trim(line);
    if (w.empty() || w.front() == '#') continue;
    std::string lower;
    for (char c : w) lower += detail::ascii_lower(c);
    out.insert(std::move(lower));
  }
  return out;
}

struct RssConfig {
  std::unordered_set<std::string> stopwords = default_stopwords();
  std::size_t min_span_words = 1;
  std::size_t max_span_words = 10;
  std::uint64_t seed = 0;

  void validate() const {
    if (min_span_words < 1 || min_span_words > max_span_words) {
      throw InvalidArgument("span bounds must satisfy 1 <= min <= max");
    }
  }
};

struct RecurringSpan {
  std::string surface;
  std::size_t words = 0;
  // Byte offsets of the non-overlapping occurrences, ascending.
  std::vector<std::size_t> positions;
};

struct RssExample {
  std::string masked_passage;
  std::string target;
  std::string span_surface;
  std::size_t occurrence_count = 0;
};

namespace rss_detail {

struct Word {
  std::size_t begin;
  std::size_t end;
};

inline bool is_word_char(unsigned char c) {
  return !detail::is_space(c) && !detail::is_ascii_punct(c);
}

inline std::vector<Word> split_words(std::string_view text) {
  std::vector<Word> words;
  std::size_t i = 0;
  while (i < text.size()) {
    while (i < text.size() && !is_word_char(static_cast<unsigned char>(text[i]))) ++i;
    std::size_t b = i;
    while (i < text.size() && is_word_char(static_cast<unsigned char>(text[i]))) ++i;
    if (i > b) words.push_back({b, i});
  }
  return words;
}

inline bool is_stopword(std::string_view w, const RssConfig& cfg) {
  std::string lower;
  lower.reserve(w.size());
  for (char c : w) lower += detail::ascii_lower(c);
  return cfg.stopwords.contains(lower);
}

}  // namespace rss_detail

inline std::vector<RecurringSpan> find_recurring_spans(std::string_view passage,
                                                       const RssConfig& cfg) {
  cfg.validate();
  using rss_detail::Word;
  const std::vector<Word> words = rss_detail::split_words(passage);
  const std::size_t w = words.size();
  auto word_text = [&](std::size_t k) {
    return passage.substr(words[k].begin, words[k].end - words[k].begin);
  };
  std::vector<bool> stop(w);
  for (std::size_t k = 0; k < w; ++k) stop[k] = rss_detail::is_stopword(word_text(k), cfg);

  struct Candidate {
    std::string surface;
    std::size_t len;
    std::vector<std::size_t> all;       // word indices of every occurrence
    std::vector<std::size_t> selected;  // non-overlapping subset
  };
  std::vector<Candidate> cands;

  const std::size_t max_len = std::min(cfg.max_span_words, w);
  for (std::size_t len = cfg.min_span_words; len <= max_len; ++len) {
    std::map<std::string_view, std::vector<std::size_t>> groups;
    for (std::size_t s = 0; s + len <= w; ++s) {
      if (stop[s] || stop[s + len - 1]) continue;
      std::size_t b = words[s].begin;
      std::size_t e = words[s + len - 1].end;
      groups[passage.substr(b, e - b)].push_back(s);
    }
    for (auto& [surface, starts] : groups) {
      if (starts.size() < 2) continue;
      std::vector<std::size_t> sel;
      std::size_t next_free = 0;
      for (std::size_t s : starts) {
        if (s >= next_free) {
          sel.push_back(s);
          next_free = s + len;
        }
      }
      if (sel.size() < 2) continue;
      cands.push_back({std::string(surface), len, std::move(starts), std::move(sel)});
    }
  }

  auto covered_by = [](const Candidate& g, const Candidate& h) {
    if (h.len <= g.len || h.selected.size() != g.selected.size()) return false;
    return std::all_of(g.selected.begin(), g.selected.end(), [&](std::size_t p) {
      return std::any_of(h.all.begin(), h.all.end(), [&](std::size_t q) {
        return q <= p && p + g.len <= q + h.len;
      });
    });
  };

  std::vector<RecurringSpan> out;
  for (const auto& g : cands) {
    bool dominated = std::any_of(cands.begin(), cands.end(),
                                 [&](const Candidate& h) { return covered_by(g, h); });
    if (dominated) continue;
    RecurringSpan r{g.surface, g.len, {}};
    for (std::size_t s : g.selected) r.positions.push_back(words[s].begin);
    out.push_back(std::move(r));
  }
  std::sort(out.begin(), out.end(), [](const RecurringSpan& a, const RecurringSpan& b) {
    if (a.positions.front() != b.positions.front()) {
      return a.positions.front() < b.positions.front();
    }
    return a.words < b.words;
  });
  return out;
}

// Deterministic for a fixed (passage, seed): the generator is seeded from both.
inline std::optional<RssExample> make_example(std::string_view passage,
                                              const RssConfig& cfg) {
  if (passage.find("<extra_id_") != std::string_view::npos) return std::nullopt;
  auto spans = find_recurring_spans(passage, cfg);
  if (spans.empty()) return std::nullopt;

  const std::uint64_t h = detail::fnv1a(passage);
  std::seed_seq seq{static_cast<std::uint32_t>(cfg.seed),
                    static_cast<std::uint32_t>(cfg.seed >> 32),
                    static_cast<std::uint32_t>(h), static_cast<std::uint32_t>(h >> 32)};
  std::mt19937_64 rng(seq);
  const auto& span = spans[std::uniform_int_distribution<std::size_t>(
      0, spans.size() - 1)(rng)];
  const std::size_t pos = span.positions[std::uniform_int_distribution<std::size_t>(
      0, span.positions.size() - 1)(rng)];

  RssExample ex;
  ex.masked_passage.reserve(passage.size());
  ex.masked_passage.append(passage.substr(0, pos));
  ex.masked_passage.append(kAnswerOpen);
  ex.masked_passage.append(passage.substr(pos + span.surface.size()));
  ex.target = render_target(span.surface);
  ex.span_surface = span.surface;
  ex.occurrence_count = span.positions.size();
  return ex;
}

// Streams at most one example per passage to `sink`, in input order, and
// stops after `limit` examples. Passages are processed in parallel batches
// when jobs > 1; output order does not depend on scheduling. Returns the
// number of examples emitted.
template <std::ranges::input_range Passages>
std::size_t generate_corpus(Passages&& passages, const RssConfig& cfg,
                            std::size_t limit,
                            const std::function<void(const RssExample&)>& sink,
                            std::size_t jobs = 1) {
  if (limit < 1) throw InvalidArgument("limit must be >= 1");
  cfg.validate();
  jobs = std::max<std::size_t>(1, jobs);
  const std::size_t batch_size = jobs * 64;
  std::vector<std::string> batch;
  std::size_t emitted = 0;

  auto flush = [&] {
    std::vector<std::optional<RssExample>> results(batch.size());
    if (jobs == 1) {
      for (std::size_t k = 0; k < batch.size(); ++k) results[k] = make_example(batch[k], cfg);
    } else {
      std::vector<std::future<void>> workers;
      for (std::size_t w = 0; w < jobs; ++w) {
        workers.push_back(std::async(std::launch::async, [&, w] {
          for (std::size_t k = w; k < batch.size(); k += jobs) {
            results[k] = make_example(batch[k], cfg);
          }
        }));
      }
      for (auto& f : workers) f.get();
    }
    for (auto& r : results) {
      if (r && emitted < limit) {
        sink(*r);
        ++emitted;
      }
    }
    batch.clear();
  };

  for (auto&& p : passages) {
    batch.emplace_back(p);
    if (batch.size() == batch_size) {
      flush();
      if (emitted >= limit) return emitted;
    }
  }
  if (!batch.empty()) flush();
  return emitted;
}

template <std::ranges::input_range Passages>
std::vector<RssExample> generate_corpus(Passages&& passages, const RssConfig& cfg,
                                        std::size_t limit, std::size_t jobs = 1) {
  std::vector<RssExample> out;
  generate_corpus(std::forward<Passages>(passages), cfg, limit,
                  [&](const RssExample& e) { out.push_back(e); }, jobs);
  return out;
}

// One passage per line; lines of a .jsonl file are {"text": ...} objects.
inline std::vector<std::string> read_passages(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open passage file " + path.string());
  const bool json_lines = path.extension() == ".jsonl" || path.extension() == ".json";
  std::vector<std::string> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (trim(line).empty()) continue;
    if (!json_lines) {
      out.push_back(line);
      continue;
    }
    try {
      out.push_back(nlohmann::json::parse(line).at("text").get<std::string>());
    } catch (const nlohmann::json::exception& e) {
      throw DataError(path.string() + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  return out;
}

inline nlohmann::json to_json(const RssExample& e) {
  return {{"masked_passage", e.masked_passage},
          {"target", e.target},
          {"span_surface", e.span_surface},
          {"occurrence_count", e.occurrence_count}};
}

}  // namespace spandecode
