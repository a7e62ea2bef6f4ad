#pragma once

// Answer-quality measurements: SQuAD-style token F1 and exact match,
// extractiveness (did the output copy a passage substring), exactness (did
// greedy produce the exact-extract output) and the S_in / S_out partition by
// whether any tokenized gold answer is a contiguous run of passage tokens.

#include <algorithm>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <json.hpp>

#include "spandecode/error.hpp"
#include "spandecode/tokenizer.hpp"

namespace spandecode {

namespace detail {

// Python str.split() whitespace, ASCII subset.
inline bool is_space(unsigned char c) {
  return c == ' ' || (c >= '\t' && c <= '\r') || (c >= 0x1c && c <= 0x1f);
}

// Python string.punctuation.
inline bool is_ascii_punct(unsigned char c) {
  return (c >= 33 && c <= 47) || (c >= 58 && c <= 64) || (c >= 91 && c <= 96) ||
         (c >= 123 && c <= 126);
}

// Regex \w: ASCII alphanumerics, underscore, and any non-ASCII byte (stands
// in for Unicode letters).
inline bool is_word_byte(unsigned char c) {
  return c >= 0x80 || c == '_' || (c >= '0' && c <= '9') ||
         (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z');
}

inline char ascii_lower(char c) {
  return (c >= 'A' && c <= 'Z') ? static_cast<char>(c - 'A' + 'a') : c;
}

inline char32_t next_codepoint(std::string_view s, std::size_t& i) {
  auto c = static_cast<unsigned char>(s[i]);
  std::size_t len = utf8_length(c);
  if (len == 1 || i + len > s.size()) {
    ++i;
    return c;
  }
  char32_t cp = c & (0x7f >> len);
  for (std::size_t k = 1; k < len; ++k) {
    cp = (cp << 6) | (static_cast<unsigned char>(s[i + k]) & 0x3f);
  }
  i += len;
  return cp;
}

inline bool is_alnum_codepoint(char32_t cp) {
  if (cp < 0x80) {
    return (cp >= '0' && cp <= '9') || (cp >= 'a' && cp <= 'z') ||
           (cp >= 'A' && cp <= 'Z');
  }
  // Latin-1 symbols, general punctuation, CJK punctuation, U+2581.
  if (cp <= 0xbf) return cp == 0xaa || cp == 0xb2 || cp == 0xb3 || cp == 0xb5 ||
                         cp == 0xb9 || cp == 0xba;
  if (cp == 0xd7 || cp == 0xf7) return false;
  if (cp >= 0x2000 && cp <= 0x206f) return false;
  if (cp >= 0x2580 && cp <= 0x259f) return false;
  if (cp >= 0x3000 && cp <= 0x303f) return false;
  return true;
}

}  // namespace detail

inline std::string_view trim(std::string_view s) {
  std::size_t b = 0;
  std::size_t e = s.size();
  while (b < e && detail::is_space(static_cast<unsigned char>(s[b]))) ++b;
  while (e > b && detail::is_space(static_cast<unsigned char>(s[e - 1]))) --e;
  return s.substr(b, e - b);
}

inline bool has_alnum(std::string_view s) {
  for (std::size_t i = 0; i < s.size();) {
    if (detail::is_alnum_codepoint(detail::next_codepoint(s, i))) return true;
  }
  return false;
}

// Removes sentinel markers (<extra_id_N>) and the </s> / <pad> specials,
// then trims surrounding whitespace.
inline std::string strip_sentinels(std::string_view s) {
  std::string out;
  out.reserve(s.size());
  for (std::size_t i = 0; i < s.size();) {
    if (s[i] == '<') {
      std::string_view rest = s.substr(i);
      if (rest.starts_with("</s>")) {
        i += 4;
        continue;
      }
      if (rest.starts_with("<pad>")) {
        i += 5;
        continue;
      }
      constexpr std::string_view kExtra = "<extra_id_";
      if (rest.starts_with(kExtra)) {
        std::size_t k = kExtra.size();
        while (k < rest.size() && rest[k] >= '0' && rest[k] <= '9') ++k;
        if (k > kExtra.size() && k < rest.size() && rest[k] == '>') {
          i += k + 1;
          continue;
        }
      }
    }
    out += s[i++];
  }
  return std::string(trim(out));
}

// SQuAD answer normalization: lowercase, drop punctuation, drop the
// articles a/an/the as whole words, collapse whitespace.
inline std::string normalize_answer(std::string_view s) {
  std::string text;
  text.reserve(s.size());
  for (char c : s) {
    if (!detail::is_ascii_punct(static_cast<unsigned char>(c))) {
      text += detail::ascii_lower(c);
    }
  }

  std::string no_articles;
  no_articles.reserve(text.size());
  for (std::size_t i = 0; i < text.size();) {
    bool boundary_before =
        i == 0 || !detail::is_word_byte(static_cast<unsigned char>(text[i - 1]));
    if (boundary_before) {
      std::size_t matched = 0;
      for (std::string_view art : {"the", "an", "a"}) {
        if (std::string_view(text).substr(i).starts_with(art)) {
          std::size_t end = i + art.size();
          if (end == text.size() ||
              !detail::is_word_byte(static_cast<unsigned char>(text[end]))) {
            matched = art.size();
            break;
          }
        }
      }
      if (matched) {
        no_articles += ' ';
        i += matched;
        continue;
      }
    }
    no_articles += text[i++];
  }

  std::string out;
  out.reserve(no_articles.size());
  std::size_t i = 0;
  while (i < no_articles.size()) {
    while (i < no_articles.size() &&
           detail::is_space(static_cast<unsigned char>(no_articles[i]))) {
      ++i;
    }
    std::size_t start = i;
    while (i < no_articles.size() &&
           !detail::is_space(static_cast<unsigned char>(no_articles[i]))) {
      ++i;
    }
    if (i > start) {
      if (!out.empty()) out += ' ';
      out.append(no_articles, start, i - start);
    }
  }
  return out;
}

inline std::vector<std::string> normalized_tokens(std::string_view s) {
  std::vector<std::string> toks;
  std::string norm = normalize_answer(s);
  std::size_t i = 0;
  while (i < norm.size()) {
    std::size_t j = norm.find(' ', i);
    if (j == std::string::npos) j = norm.size();
    toks.emplace_back(norm, i, j - i);
    i = j + 1;
  }
  return toks;
}

inline double token_f1_single(std::string_view prediction, std::string_view gold) {
  auto pred = normalized_tokens(prediction);
  auto ref = normalized_tokens(gold);
  if (pred.empty() || ref.empty()) return pred == ref ? 1.0 : 0.0;
  std::map<std::string, long> counts;
  for (const auto& t : ref) ++counts[t];
  long same = 0;
  for (const auto& t : pred) {
    auto it = counts.find(t);
    if (it != counts.end() && it->second > 0) {
      --it->second;
      ++same;
    }
  }
  if (same == 0) return 0.0;
  double precision = 1.0 * same / static_cast<double>(pred.size());
  double recall = 1.0 * same / static_cast<double>(ref.size());
  return (2 * precision * recall) / (precision + recall);
}

inline double token_f1(std::string_view prediction,
                       std::span<const std::string> golds) {
  if (golds.empty()) throw InvalidArgument("token_f1 needs at least one gold answer");
  double best = 0.0;
  for (const auto& g : golds) best = std::max(best, token_f1_single(prediction, g));
  return best;
}

inline bool exact_match(std::string_view prediction,
                        std::span<const std::string> golds) {
  if (golds.empty()) throw InvalidArgument("exact_match needs at least one gold answer");
  const std::string p = normalize_answer(prediction);
  return std::any_of(golds.begin(), golds.end(),
                     [&](const std::string& g) { return normalize_answer(g) == p; });
}

// Literal copying check: the sentinel-stripped, trimmed output must contain an
// alphanumeric character and occur verbatim (case-sensitive) in the passage.
inline bool is_extractive(std::string_view generated, std::string_view passage) {
  std::string g = strip_sentinels(generated);
  if (!has_alnum(g)) return false;
  return passage.find(g) != std::string_view::npos;
}

inline bool exactness(std::string_view greedy_text, std::string_view exact_text) {
  return trim(greedy_text) == trim(exact_text);
}

// Token-level span lookup: (start, length) of the first contiguous occurrence
// of `needle` in `haystack`. Empty needles never form an answer span.
inline std::optional<std::pair<std::size_t, std::size_t>> find_span(
    std::span<const TokenId> needle, std::span<const TokenId> haystack) {
  if (needle.empty()) return std::nullopt;
  auto at = find_subsequence(needle, haystack);
  if (!at) return std::nullopt;
  return std::pair{*at, needle.size()};
}

enum class Partition { s_in, s_out };

inline std::string_view to_string(Partition p) {
  return p == Partition::s_in ? "S_in" : "S_out";
}

inline Partition partition_example(std::span<const std::string> gold_answers,
                                   std::string_view passage,
                                   const Vocabulary& vocab) {
  if (gold_answers.empty()) {
    throw InvalidArgument("partition needs at least one gold answer");
  }
  TokenSeq passage_ids = encode(passage, vocab);
  for (const auto& g : gold_answers) {
    if (is_token_subsequence(encode(g, vocab), passage_ids)) return Partition::s_in;
  }
  return Partition::s_out;
}

struct ExampleScore {
  double f1 = 0.0;
  bool exact_match = false;
  bool extractive = false;
  bool exactness_match = false;
  Partition partition = Partition::s_in;
};

struct SummaryStats {
  std::size_t count = 0;
  double f1 = 0.0;
  double exact_match = 0.0;
  double extractive = 0.0;
  double exactness = 0.0;
};

// Means are fractions in [0, 1]; shares are the partition's relative size.
struct EvalReport {
  SummaryStats overall;
  SummaryStats s_in;
  SummaryStats s_out;
  double s_in_share = 0.0;
  double s_out_share = 0.0;
};

inline EvalReport aggregate(std::span<const ExampleScore> scores) {
  if (scores.empty()) throw InvalidArgument("cannot aggregate an empty score list");
  auto fold = [](SummaryStats& s, const ExampleScore& e) {
    ++s.count;
    s.f1 += e.f1;
    s.exact_match += e.exact_match ? 1.0 : 0.0;
    s.extractive += e.extractive ? 1.0 : 0.0;
    s.exactness += e.exactness_match ? 1.0 : 0.0;
  };
  auto finish = [](SummaryStats& s) {
    if (s.count == 0) return;
    const auto n = static_cast<double>(s.count);
    s.f1 /= n;
    s.exact_match /= n;
    s.extractive /= n;
    s.exactness /= n;
  };
  EvalReport r;
  for (const auto& e : scores) {
    fold(r.overall, e);
    fold(e.partition == Partition::s_in ? r.s_in : r.s_out, e);
  }
  const auto total = static_cast<double>(r.overall.count);
  r.s_in_share = static_cast<double>(r.s_in.count) / total;
  r.s_out_share = static_cast<double>(r.s_out.count) / total;
  finish(r.overall);
  finish(r.s_in);
  finish(r.s_out);
  return r;
}

inline void to_json(nlohmann::json& j, const SummaryStats& s) {
  j = {{"count", s.count},
       {"f1", s.f1},
       {"exact_match", s.exact_match},
       {"extractive", s.extractive},
       {"exactness", s.exactness}};
}

inline void from_json(const nlohmann::json& j, SummaryStats& s) {
  j.at("count").get_to(s.count);
  j.at("f1").get_to(s.f1);
  j.at("exact_match").get_to(s.exact_match);
  j.at("extractive").get_to(s.extractive);
  j.at("exactness").get_to(s.exactness);
}

inline void to_json(nlohmann::json& j, const EvalReport& r) {
  j = {{"overall", r.overall},
       {"s_in", r.s_in},
       {"s_out", r.s_out},
       {"s_in_share", r.s_in_share},
       {"s_out_share", r.s_out_share}};
}

inline void from_json(const nlohmann::json& j, EvalReport& r) {
  j.at("overall").get_to(r.overall);
  j.at("s_in").get_to(r.s_in);
  j.at("s_out").get_to(r.s_out);
  j.at("s_in_share").get_to(r.s_in_share);
  j.at("s_out_share").get_to(r.s_out_share);
}

}  // namespace spandecode
