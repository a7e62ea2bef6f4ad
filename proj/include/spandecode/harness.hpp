#pragma once

// Experiment harness: MRQA-style dataset loading, few-shot subsampling,
// evaluation runs comparing the decoders, and hyperparameter selection by
// size-normalized average score.

#include <zlib.h>

#include <algorithm>
#include <atomic>
#include <cstdint>
#include <filesystem>
#include <future>
#include <iomanip>
#include <map>
#include <numeric>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <unordered_set>
#include <vector>

#include <json.hpp>

#include "spandecode/decoding.hpp"
#include "spandecode/detail/hash.hpp"
#include "spandecode/error.hpp"
#include "spandecode/metrics.hpp"
#include "spandecode/prompting.hpp"
#include "spandecode/scorer.hpp"
#include "spandecode/tokenizer.hpp"

namespace spandecode {

struct QAExample {
  std::string id;
  std::string context;
  std::string question;
  std::vector<std::string> answers;
};

namespace detail {

// Reads a text file line by line; gzip-compressed input is inflated
// transparently.
class LineReader {
 public:
  explicit LineReader(const std::filesystem::path& path)
      : file_(gzopen(path.string().c_str(), "rb")) {
    if (!file_) throw DataError("cannot open " + path.string());
  }
  LineReader(const LineReader&) = delete;
  LineReader& operator=(const LineReader&) = delete;
  ~LineReader() { gzclose(file_); }

  bool next(std::string& line) {
    line.clear();
    char buf[1 << 16];
    for (;;) {
      if (gzgets(file_, buf, sizeof buf) == nullptr) {
        int err = 0;
        gzerror(file_, &err);
        if (err != Z_OK && err != Z_STREAM_END) throw DataError("read error");
        return !line.empty();
      }
      line += buf;
      if (!line.empty() && line.back() == '\n') {
        line.pop_back();
        if (!line.empty() && line.back() == '\r') line.pop_back();
        return true;
      }
    }
  }

 private:
  gzFile file_;
};

}  // namespace detail

// One JSON object per line: {"context": str, "qas": [{"qid", "question",
// "answers": [str]}]}. A leading {"header": ...} line is skipped. Each qa
// entry becomes one QAExample.
inline std::vector<QAExample> load_dataset(const std::filesystem::path& path) {
  detail::LineReader reader(path);
  std::vector<QAExample> out;
  std::string line;
  std::size_t lineno = 0;
  auto fail = [&](const std::string& why) {
    throw DataError(path.string() + ":" + std::to_string(lineno) + ": " + why);
  };
  while (reader.next(line)) {
    ++lineno;
    if (trim(line).empty()) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      fail(std::string("invalid JSON: ") + e.what());
    }
    if (!j.is_object()) fail("expected a JSON object");
    if (j.contains("header")) continue;
    if (!j.contains("context") || !j["context"].is_string()) fail("missing \"context\"");
    if (!j.contains("qas") || !j["qas"].is_array()) fail("missing \"qas\"");
    std::string context = j["context"].get<std::string>();
    if (context.empty()) fail("empty \"context\"");
    for (const auto& qa : j["qas"]) {
      if (!qa.is_object()) fail("qas entry is not an object");
      if (!qa.contains("qid") || !qa["qid"].is_string()) fail("qas entry missing \"qid\"");
      if (!qa.contains("question") || !qa["question"].is_string()) {
        fail("qas entry missing \"question\"");
      }
      if (!qa.contains("answers") || !qa["answers"].is_array()) {
        fail("qas entry missing \"answers\"");
      }
      QAExample ex{qa["qid"].get<std::string>(), context,
                   qa["question"].get<std::string>(), {}};
      for (const auto& a : qa["answers"]) {
        if (!a.is_string()) fail("non-string answer");
        ex.answers.push_back(a.get<std::string>());
      }
      if (ex.answers.empty()) fail("empty \"answers\"");
      out.push_back(std::move(ex));
    }
  }
  return out;
}

inline nlohmann::json to_mrqa_line(const QAExample& ex) {
  return {{"context", ex.context},
          {"qas", {{{"qid", ex.id}, {"question", ex.question}, {"answers", ex.answers}}}}};
}

// ---------------------------------------------------------------------------
// Few-shot subsampling

inline const std::vector<std::size_t>& default_fewshot_sizes() {
  static const std::vector<std::size_t> sizes = {16, 32, 64, 128, 256, 512, 1024};
  return sizes;
}

struct FewShotSplit {
  std::size_t size = 0;
  std::size_t sample_index = 0;
  std::uint64_t seed = 0;
  std::vector<std::string> example_ids;
};

inline std::uint64_t passage_hash(std::string_view context) {
  return detail::fnv1a(context);
}

// Throws DataError if any split example shares a passage with `validation`.
inline void check_passage_disjoint(const std::vector<FewShotSplit>& splits,
                                   const std::vector<QAExample>& dataset,
                                   const std::vector<QAExample>& validation) {
  std::unordered_set<std::uint64_t> held_out;
  for (const auto& v : validation) held_out.insert(passage_hash(v.context));
  std::map<std::string, const QAExample*> by_id;
  for (const auto& ex : dataset) by_id.emplace(ex.id, &ex);
  for (const auto& split : splits) {
    for (const auto& id : split.example_ids) {
      auto it = by_id.find(id);
      if (it == by_id.end()) throw DataError("split references unknown example " + id);
      if (held_out.contains(passage_hash(it->second->context))) {
        throw DataError("passage of example " + id + " (size " +
                        std::to_string(split.size) + ", sample " +
                        std::to_string(split.sample_index) +
                        ") also appears in the validation set");
      }
    }
  }
}

// Draws `num_samples` splits per size, each uniformly without replacement
// from the examples whose passage does not occur in `validation`. Split
// (size, k) is seeded from (seed, size, k), so every split has its own seed.
inline std::vector<FewShotSplit> subsample(const std::vector<QAExample>& dataset,
                                           const std::vector<std::size_t>& sizes,
                                           std::size_t num_samples, std::uint64_t seed,
                                           const std::vector<QAExample>& validation = {}) {
  if (sizes.empty() || num_samples == 0) {
    throw InvalidArgument("subsample needs at least one size and one sample");
  }
  std::unordered_set<std::uint64_t> held_out;
  for (const auto& v : validation) held_out.insert(passage_hash(v.context));
  std::vector<std::size_t> pool;
  for (std::size_t i = 0; i < dataset.size(); ++i) {
    if (!held_out.contains(passage_hash(dataset[i].context))) pool.push_back(i);
  }
  const std::size_t largest = *std::max_element(sizes.begin(), sizes.end());
  if (pool.size() < largest) {
    throw DataError("dataset has " + std::to_string(pool.size()) +
                    " eligible examples, need " + std::to_string(largest));
  }

  std::vector<FewShotSplit> splits;
  for (std::size_t size : sizes) {
    for (std::size_t k = 0; k < num_samples; ++k) {
      std::seed_seq seq{static_cast<std::uint32_t>(seed),
                        static_cast<std::uint32_t>(seed >> 32),
                        static_cast<std::uint32_t>(size), static_cast<std::uint32_t>(k)};
      std::mt19937_64 rng(seq);
      FewShotSplit split{size, k, rng(), {}};
      std::vector<std::size_t> chosen;
      chosen.reserve(size);
      std::sample(pool.begin(), pool.end(), std::back_inserter(chosen), size, rng);
      std::shuffle(chosen.begin(), chosen.end(), rng);
      for (std::size_t idx : chosen) split.example_ids.push_back(dataset[idx].id);
      splits.push_back(std::move(split));
    }
  }
  check_passage_disjoint(splits, dataset, validation);
  return splits;
}

inline nlohmann::json to_json(const FewShotSplit& s) {
  return {{"size", s.size},
          {"sample_index", s.sample_index},
          {"seed", s.seed},
          {"example_ids", s.example_ids}};
}

// ---------------------------------------------------------------------------
// Hyperparameter selection
//
// scores[i][n][k] is the validation score of configuration i trained on the
// k-th set of the n-th size. Per size, the sample mean is divided by the best
// configuration's mean; the normalized values are averaged across sizes and
// the best average wins (ties go to the smaller index).

struct ConfigScoreTable {
  std::vector<std::vector<std::vector<double>>> scores;
};

struct HyperparameterChoice {
  std::size_t index = 0;
  std::vector<double> normalized_mean;  // s_i for every configuration
};

inline HyperparameterChoice select_hyperparameters(const ConfigScoreTable& table) {
  const auto& s = table.scores;
  if (s.empty() || s.front().empty() || s.front().front().empty()) {
    throw InvalidArgument("score table is empty");
  }
  const std::size_t sizes = s.front().size();
  const std::size_t samples = s.front().front().size();
  for (const auto& cfg : s) {
    if (cfg.size() != sizes) throw InvalidArgument("inconsistent number of sizes");
    for (const auto& per_size : cfg) {
      if (per_size.size() != samples) throw InvalidArgument("inconsistent number of samples");
      for (double v : per_size) {
        if (!(v >= 0.0 && v <= 100.0)) throw InvalidArgument("score outside [0, 100]");
      }
    }
  }

  std::vector<std::vector<double>> mean(s.size(), std::vector<double>(sizes));
  for (std::size_t i = 0; i < s.size(); ++i) {
    for (std::size_t n = 0; n < sizes; ++n) {
      mean[i][n] = std::accumulate(s[i][n].begin(), s[i][n].end(), 0.0) /
                   static_cast<double>(samples);
    }
  }
  HyperparameterChoice out;
  out.normalized_mean.assign(s.size(), 0.0);
  for (std::size_t n = 0; n < sizes; ++n) {
    double best = 0.0;
    for (std::size_t i = 0; i < s.size(); ++i) best = std::max(best, mean[i][n]);
    if (best <= 0.0) {
      throw InvalidArgument("all configurations score 0 on size index " +
                            std::to_string(n) + "; normalization undefined");
    }
    for (std::size_t i = 0; i < s.size(); ++i) {
      out.normalized_mean[i] += mean[i][n] / best;
    }
  }
  for (double& v : out.normalized_mean) v /= static_cast<double>(sizes);
  out.index = static_cast<std::size_t>(
      std::max_element(out.normalized_mean.begin(), out.normalized_mean.end()) -
      out.normalized_mean.begin());
  return out;
}

inline ConfigScoreTable parse_score_table(const nlohmann::json& j) {
  try {
    const auto& s = j.is_object() ? j.at("scores") : j;
    return {s.get<std::vector<std::vector<std::vector<double>>>>()};
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("malformed score table: ") + e.what());
  }
}

// ---------------------------------------------------------------------------
// Evaluation runs

struct EvalConfig {
  int template_id = kDefaultTemplateId;
  TerminatorMode terminator_mode = TerminatorMode::sentinel;
  DecodeConfig decode;  // terminator_ids filled from the framing
  bool run_naive = false;
  std::size_t jobs = 1;  // examples in flight
};

struct ExampleOutcome {
  std::string id;
  bool skipped = false;
  std::string error;
  Partition partition = Partition::s_in;
  std::map<std::string, DecodeResult> results;  // keyed by algorithm name
  std::map<std::string, ExampleScore> scores;
};

struct RunReport {
  std::size_t processed = 0;
  std::size_t skipped = 0;
  std::map<std::string, EvalReport> by_algorithm;
  std::vector<ExampleOutcome> examples;
};

// Decodes one example with greedy and exact-extract (and naive when asked) and
// scores every output. Scorer transport failures propagate.
inline ExampleOutcome evaluate_example(const QAExample& ex, Scorer& scorer,
                                       const Vocabulary& vocab,
                                       const PromptTemplate& tpl,
                                       const EvalConfig& cfg) {
  TokenFraming framing = resolve_framing(
      render_target_prefix_and_terminator(tpl, cfg.terminator_mode, vocab.terminator_piece()),
      vocab);
  DecodeConfig dcfg = cfg.decode;
  dcfg.terminator_ids = framing.terminator_ids;

  SpanQuery q{encode(ex.context, vocab),
              encode(render_encoder_input(tpl, ex.context, ex.question), vocab),
              framing.forced_prefix};

  ExampleOutcome out;
  out.id = ex.id;
  out.partition = partition_example(ex.answers, ex.context, vocab);
  std::vector<Algorithm> algos = {Algorithm::greedy, Algorithm::exact_extract};
  if (cfg.run_naive) algos.push_back(Algorithm::naive);
  for (Algorithm a : algos) {
    out.results.emplace(std::string(to_string(a)), run_decoder(a, q, scorer, vocab, dcfg));
  }
  const std::string& exact_text = out.results.at("exact_extract").text;
  for (const auto& [name, r] : out.results) {
    ExampleScore s;
    s.f1 = token_f1(r.text, ex.answers);
    s.exact_match = exact_match(r.text, ex.answers);
    s.extractive = is_extractive(r.text, ex.context);
    s.exactness_match = exactness(r.text, exact_text);
    s.partition = out.partition;
    out.scores.emplace(name, s);
  }
  return out;
}

// Per-example scorer failures are recorded and skipped. The report does not
// depend on how examples were scheduled across jobs.
inline RunReport run_eval(const std::vector<QAExample>& dataset, Scorer& scorer,
                          const Vocabulary& vocab,
                          const std::vector<PromptTemplate>& templates,
                          const EvalConfig& cfg) {
  if (dataset.empty()) throw InvalidArgument("cannot evaluate an empty dataset");
  const PromptTemplate& tpl = find_template(templates, cfg.template_id);

  std::vector<ExampleOutcome> outcomes(dataset.size());
  std::atomic<std::size_t> next{0};
  auto work = [&] {
    for (std::size_t i = next++; i < dataset.size(); i = next++) {
      try {
        outcomes[i] = evaluate_example(dataset[i], scorer, vocab, tpl, cfg);
      } catch (const TransportError& e) {
        outcomes[i].id = dataset[i].id;
        outcomes[i].skipped = true;
        outcomes[i].error = e.what();
      }
    }
  };
  const std::size_t jobs = std::max<std::size_t>(1, std::min(cfg.jobs, dataset.size()));
  if (jobs == 1) {
    work();
  } else {
    std::vector<std::future<void>> workers;
    for (std::size_t w = 0; w < jobs; ++w) workers.push_back(std::async(std::launch::async, work));
    for (auto& f : workers) f.get();
  }

  RunReport report;
  std::map<std::string, std::vector<ExampleScore>> per_algo;
  for (const auto& o : outcomes) {
    if (o.skipped) {
      ++report.skipped;
      continue;
    }
    ++report.processed;
    for (const auto& [name, s] : o.scores) per_algo[name].push_back(s);
  }
  for (const auto& [name, scores] : per_algo) {
    report.by_algorithm.emplace(name, aggregate(scores));
  }
  report.examples = std::move(outcomes);
  return report;
}

inline nlohmann::json to_json(const RunReport& r, bool with_examples = true) {
  nlohmann::json j = {{"processed", r.processed}, {"skipped", r.skipped}};
  j["algorithms"] = nlohmann::json::object();
  for (const auto& [name, rep] : r.by_algorithm) j["algorithms"][name] = rep;
  if (with_examples) {
    j["examples"] = nlohmann::json::array();
    for (const auto& o : r.examples) {
      nlohmann::json e = {{"id", o.id}, {"skipped", o.skipped}};
      if (o.skipped) {
        e["error"] = o.error;
      } else {
        e["partition"] = to_string(o.partition);
        for (const auto& [name, res] : o.results) {
          const auto& s = o.scores.at(name);
          e[name] = {{"text", res.text},
                     {"f1", s.f1},
                     {"exact_match", s.exact_match},
                     {"extractive", s.extractive},
                     {"exactness", s.exactness_match}};
        }
      }
      j["examples"].push_back(std::move(e));
    }
  }
  return j;
}

// Fixed-width summary in the layout of the usual results tables: one row
// per algorithm, percentages, partition F1 with the partition share.
inline std::string render_report(const nlohmann::json& report) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(1);
  os << std::left << std::setw(15) << "algorithm" << std::right << std::setw(8) << "F1"
     << std::setw(8) << "EM" << std::setw(8) << "Extr." << std::setw(8) << "Exact"
     << std::setw(18) << "S_in F1 (%)" << std::setw(18) << "S_out F1 (%)" << '\n';
  os << std::string(83, '-') << '\n';
  auto pct = [](double x) { return 100.0 * x; };
  for (const auto& [name, j] : report.at("algorithms").items()) {
    EvalReport r = j.get<EvalReport>();
    std::ostringstream in_cell;
    std::ostringstream out_cell;
    in_cell << std::fixed << std::setprecision(1) << pct(r.s_in.f1) << " ("
            << pct(r.s_in_share) << ")";
    out_cell << std::fixed << std::setprecision(1) << pct(r.s_out.f1) << " ("
             << pct(r.s_out_share) << ")";
    os << std::left << std::setw(15) << name << std::right << std::setw(8)
       << pct(r.overall.f1) << std::setw(8) << pct(r.overall.exact_match) << std::setw(8)
       << pct(r.overall.extractive) << std::setw(8) << pct(r.overall.exactness)
       << std::setw(18) << in_cell.str() << std::setw(18) << out_cell.str() << '\n';
  }
  if (report.contains("processed")) {
    os << "processed " << report["processed"].get<std::size_t>() << ", skipped "
       << report.value("skipped", std::size_t{0}) << '\n';
  }
  return os.str();
}

}  // namespace spandecode
