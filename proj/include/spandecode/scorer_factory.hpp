#pragma once

// Builds a scorer from a command-line spec:
//   table:FILE   TableLM loaded from FILE
//   remote:URL   HTTP scorer (POST URL/score)
//   stdio:CMD    child process speaking the line protocol on stdin/stdout
// A bare http:// URL is accepted as remote:URL.

#include <memory>
#include <string>
#include <string_view>
#include <vector>

#include "spandecode/error.hpp"
#include "spandecode/remote_scorer.hpp"
#include "spandecode/table_lm.hpp"

namespace spandecode {

inline std::unique_ptr<Scorer> make_scorer(std::string_view spec, const Vocabulary& vocab,
                                           const std::vector<TokenId>& terminators) {
  auto colon = spec.find(':');
  if (colon == std::string_view::npos) {
    throw InvalidArgument("scorer spec '" + std::string(spec) +
                          "' must be table:FILE, remote:URL or stdio:CMD");
  }
  std::string kind(spec.substr(0, colon));
  std::string arg(spec.substr(colon + 1));
  if (kind == "table") {
    return std::make_unique<TableLM>(TableLM::load(arg, vocab, terminators));
  }
  if (kind == "remote") {
    return std::make_unique<RemoteScorer>(vocab, std::make_unique<HttpTransport>(arg));
  }
  if (kind == "http") {
    return std::make_unique<RemoteScorer>(
        vocab, std::make_unique<HttpTransport>(std::string(spec)));
  }
  if (kind == "stdio") {
    return std::make_unique<RemoteScorer>(vocab, std::make_unique<StdioTransport>(arg));
  }
  throw InvalidArgument("unknown scorer kind '" + kind + "'");
}

}  // namespace spandecode
