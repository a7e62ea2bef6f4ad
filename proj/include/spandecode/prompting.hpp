#pragma once

// Prompt templates. An encoder pattern holds the placeholders {T} (passage)
// and {Q} (question) and the sentinel <extra_id_0> marking where the answer
// goes; the decoder target is always <extra_id_0>{a}<extra_id_1>.
//
// The six built-in templates are embedded below as a JSON resource. Their
// bytes, including the trailing period after the sentinel and the missing
// period on template 6, are significant: prompt bytes change model scores.

#include <filesystem>
#include <fstream>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "spandecode/error.hpp"
#include "spandecode/tokenizer.hpp"

namespace spandecode {

inline constexpr std::string_view kAnswerOpen = "<extra_id_0>";
inline constexpr std::string_view kAnswerClose = "<extra_id_1>";
inline constexpr int kDefaultTemplateId = 2;

inline constexpr std::string_view kBuiltinTemplatesJson = R"json([
  {"id": 1, "encoder": "{T}\nQuestion: {Q}\nAnswer:<extra_id_0>."},
  {"id": 2, "encoder": "Text: {T}\nQuestion: {Q}\nAnswer:<extra_id_0>."},
  {"id": 3, "encoder": "{T}\n{Q}\n<extra_id_0>."},
  {"id": 4, "encoder": "{T}\nAnswer the following question based on the above text: {Q}\n<extra_id_0>."},
  {"id": 5, "encoder": "Please read the following paragraph and answer the question at the end:\n{T}\n{Q}\n<extra_id_0>."},
  {"id": 6, "encoder": "Background: {T}\nQ: {Q}\nA:<extra_id_0>"}
])json";

namespace detail {

inline std::size_t count_occurrences(std::string_view hay, std::string_view needle) {
  std::size_t n = 0;
  for (auto pos = hay.find(needle); pos != std::string_view::npos;
       pos = hay.find(needle, pos + needle.size())) {
    ++n;
  }
  return n;
}

}  // namespace detail

struct PromptTemplate {
  int id = 0;
  std::string encoder_pattern;
  std::string target_pattern = "<extra_id_0>{a}<extra_id_1>";

  void validate() const {
    auto once = [&](std::string_view what) {
      if (detail::count_occurrences(encoder_pattern, what) != 1) {
        throw DataError("template " + std::to_string(id) + " must contain " +
                        std::string(what) + " exactly once");
      }
    };
    once("{T}");
    once("{Q}");
    once(kAnswerOpen);
    if (target_pattern != "<extra_id_0>{a}<extra_id_1>") {
      throw DataError("template " + std::to_string(id) +
                      " has a non-standard target pattern");
    }
  }
};

inline std::vector<PromptTemplate> parse_templates(const nlohmann::json& j) {
  if (!j.is_array()) throw DataError("prompt file must hold a JSON array");
  std::vector<PromptTemplate> out;
  try {
    for (const auto& item : j) {
      PromptTemplate t;
      t.id = item.at("id").get<int>();
      t.encoder_pattern = item.at("encoder").get<std::string>();
      if (item.contains("target")) t.target_pattern = item.at("target").get<std::string>();
      t.validate();
      out.push_back(std::move(t));
    }
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("malformed prompt template: ") + e.what());
  }
  return out;
}

inline const std::vector<PromptTemplate>& list_templates() {
  static const std::vector<PromptTemplate> templates =
      parse_templates(nlohmann::json::parse(kBuiltinTemplatesJson));
  return templates;
}

inline std::vector<PromptTemplate> load_templates(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open prompt file " + path.string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw DataError("prompt file " + path.string() + ": " + e.what());
  }
  return parse_templates(j);
}

inline const PromptTemplate& find_template(const std::vector<PromptTemplate>& templates,
                                           int id) {
  for (const auto& t : templates) {
    if (t.id == id) return t;
  }
  throw InvalidArgument("no prompt template with id " + std::to_string(id));
}

// Single left-to-right pass, so placeholder-like text inside the passage or
// question is never substituted again.
inline std::string render_encoder_input(const PromptTemplate& tpl,
                                        std::string_view passage,
                                        std::string_view question) {
  const std::string& p = tpl.encoder_pattern;
  std::string out;
  out.reserve(p.size() + passage.size() + question.size());
  for (std::size_t i = 0; i < p.size();) {
    if (p.compare(i, 3, "{T}") == 0) {
      out += passage;
      i += 3;
    } else if (p.compare(i, 3, "{Q}") == 0) {
      out += question;
      i += 3;
    } else {
      out += p[i++];
    }
  }
  return out;
}

inline std::string render_target(std::string_view answer) {
  std::string out(kAnswerOpen);
  out += answer;
  out += kAnswerClose;
  return out;
}

// Which event ends an answer: the closing sentinel, end-of-sequence, or
// either one (stop probability is then the sum of both).
enum class TerminatorMode { sentinel, eos, combined };

inline TerminatorMode parse_terminator_mode(std::string_view s) {
  if (s == "sentinel") return TerminatorMode::sentinel;
  if (s == "eos") return TerminatorMode::eos;
  if (s == "combined") return TerminatorMode::combined;
  throw InvalidArgument("unknown terminator mode '" + std::string(s) + "'");
}

struct TargetFraming {
  std::string forced_prefix;
  std::vector<std::string> terminators;
};

inline TargetFraming render_target_prefix_and_terminator(
    const PromptTemplate& tpl, TerminatorMode mode = TerminatorMode::sentinel,
    std::string_view eos_piece = "</s>") {
  tpl.validate();
  TargetFraming f{std::string(kAnswerOpen), {}};
  if (mode != TerminatorMode::eos) f.terminators.emplace_back(kAnswerClose);
  if (mode != TerminatorMode::sentinel) f.terminators.emplace_back(eos_piece);
  return f;
}

// Token-level framing: the forced prefix is the opening sentinel piece itself
// (no boundary marker) and terminators are resolved to single piece ids.
struct TokenFraming {
  TokenSeq forced_prefix;
  std::vector<TokenId> terminator_ids;
};

inline TokenFraming resolve_framing(const TargetFraming& f, const Vocabulary& vocab) {
  TokenFraming out;
  out.forced_prefix = make_seq(vocab, {vocab.id_of(f.forced_prefix)});
  for (const auto& t : f.terminators) out.terminator_ids.push_back(vocab.id_of(t));
  return out;
}

}  // namespace spandecode
