// spandecode: command-line front end for the span decoders, metrics, RSS data
// generation and experiment harness.
//
// Exit codes: 0 success, 1 usage, 2 data error, 3 scorer transport error.

#include <cstdlib>
#include <fstream>
#include <iostream>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "spandecode/spandecode.hpp"

namespace {

using namespace spandecode;

constexpr int kExitUsage = 1;
constexpr int kExitData = 2;
constexpr int kExitTransport = 3;

class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct GlobalOptions {
  std::string vocab;
  std::string scorer;
  std::uint64_t seed = 0;
  std::size_t jobs = 1;
};

struct PromptOptions {
  int prompt_id = kDefaultTemplateId;
  std::string prompt_file;
  std::string terminator = "sentinel";
};

void add_prompt_options(CLI::App* cmd, PromptOptions& p) {
  cmd->add_option("--prompt-id", p.prompt_id, "prompt template id (1-6)");
  cmd->add_option("--prompt-file", p.prompt_file, "JSON file overriding the built-in templates");
  cmd->add_option("--terminator", p.terminator, "stop event: sentinel | eos | combined")
      ->check(CLI::IsMember({"sentinel", "eos", "combined"}));
}

std::vector<PromptTemplate> templates_for(const PromptOptions& p) {
  return p.prompt_file.empty() ? list_templates() : load_templates(p.prompt_file);
}

Vocabulary require_vocab(const GlobalOptions& g) {
  if (g.vocab.empty()) throw UsageError("--vocab is required");
  return Vocabulary::load(g.vocab);
}

std::vector<TokenId> terminator_ids(const PromptOptions& p, const PromptTemplate& tpl,
                                    const Vocabulary& vocab) {
  auto framing = render_target_prefix_and_terminator(
      tpl, parse_terminator_mode(p.terminator), vocab.terminator_piece());
  return resolve_framing(framing, vocab).terminator_ids;
}

std::unique_ptr<Scorer> require_scorer(const GlobalOptions& g, const Vocabulary& vocab,
                                       const std::vector<TokenId>& terms) {
  if (g.scorer.empty()) {
    throw UsageError("--scorer is required (or set SPANDECODE_SCORER_URL)");
  }
  return make_scorer(g.scorer, vocab, terms);
}

// Output goes to `path`, or stdout when it is empty or "-".
class Output {
 public:
  explicit Output(const std::string& path) {
    if (!path.empty() && path != "-") {
      file_.open(path);
      if (!file_) throw DataError("cannot write " + path);
    }
  }
  std::ostream& stream() { return file_.is_open() ? file_ : std::cout; }

 private:
  std::ofstream file_;
};

int run_decode(const GlobalOptions& g, const PromptOptions& p, const std::string& algo_name,
               std::optional<std::size_t> max_span_len, const std::string& input,
               const std::string& output) {
  Vocabulary vocab = require_vocab(g);
  auto templates = templates_for(p);
  const PromptTemplate& tpl = find_template(templates, p.prompt_id);
  auto framing = resolve_framing(
      render_target_prefix_and_terminator(tpl, parse_terminator_mode(p.terminator),
                                          vocab.terminator_piece()),
      vocab);
  auto scorer = require_scorer(g, vocab, framing.terminator_ids);
  Algorithm algo = parse_algorithm(algo_name);
  DecodeConfig cfg;
  cfg.max_span_len = max_span_len;
  cfg.terminator_ids = framing.terminator_ids;
  cfg.jobs = g.jobs;

  auto dataset = load_dataset(input);
  Output out(output);
  for (const auto& ex : dataset) {
    SpanQuery q{encode(ex.context, vocab),
                encode(render_encoder_input(tpl, ex.context, ex.question), vocab),
                framing.forced_prefix};
    auto j = to_json(run_decoder(algo, q, *scorer, vocab, cfg));
    j["id"] = ex.id;
    out.stream() << j.dump() << '\n';
  }
  return 0;
}

int run_eval_cmd(const GlobalOptions& g, const PromptOptions& p, bool naive,
                 std::optional<std::size_t> max_span_len, const std::string& input,
                 const std::string& output) {
  Vocabulary vocab = require_vocab(g);
  auto templates = templates_for(p);
  const PromptTemplate& tpl = find_template(templates, p.prompt_id);
  auto scorer = require_scorer(g, vocab, terminator_ids(p, tpl, vocab));
  EvalConfig cfg;
  cfg.template_id = p.prompt_id;
  cfg.terminator_mode = parse_terminator_mode(p.terminator);
  cfg.decode.max_span_len = max_span_len;
  cfg.run_naive = naive;
  cfg.jobs = g.jobs;

  auto report = run_eval(load_dataset(input), *scorer, vocab, templates, cfg);
  auto j = to_json(report);
  if (!output.empty()) {
    Output out(output);
    out.stream() << j.dump(2) << '\n';
  }
  std::cout << render_report(j);
  return 0;
}

int run_subsample(const GlobalOptions& g, const std::string& input,
                  const std::string& validation, std::vector<std::size_t> sizes,
                  std::size_t num_samples, const std::string& output) {
  auto dataset = load_dataset(input);
  std::vector<QAExample> held_out;
  if (!validation.empty()) held_out = load_dataset(validation);
  if (sizes.empty()) sizes = default_fewshot_sizes();
  auto splits = subsample(dataset, sizes, num_samples, g.seed, held_out);
  Output out(output);
  for (const auto& s : splits) out.stream() << to_json(s).dump() << '\n';
  return 0;
}

int run_partition(const GlobalOptions& g, const std::string& input, const std::string& output) {
  Vocabulary vocab = require_vocab(g);
  auto dataset = load_dataset(input);
  std::size_t in = 0;
  std::size_t out_count = 0;
  Output out(output);
  for (const auto& ex : dataset) {
    Partition part = partition_example(ex.answers, ex.context, vocab);
    (part == Partition::s_in ? in : out_count)++;
    out.stream() << nlohmann::json{{"id", ex.id}, {"partition", to_string(part)}}.dump()
                 << '\n';
  }
  const double total = static_cast<double>(dataset.size());
  nlohmann::json summary = {{"S_in", in}, {"S_out", out_count}};
  if (total > 0) {
    summary["S_in_share"] = in / total;
    summary["S_out_share"] = out_count / total;
  }
  std::cerr << summary.dump() << '\n';
  return 0;
}

int run_select_hp(const std::string& input) {
  std::ifstream in(input);
  if (!in) throw DataError("cannot open " + input);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw DataError(input + ": " + e.what());
  }
  auto choice = select_hyperparameters(parse_score_table(j));
  std::cout << nlohmann::json{{"index", choice.index},
                              {"normalized_mean", choice.normalized_mean}}
                   .dump()
            << '\n';
  return 0;
}

int run_rss(const GlobalOptions& g, const std::string& input, const std::string& output,
            std::size_t limit, const std::string& stopwords, std::size_t min_span,
            std::size_t max_span) {
  RssConfig cfg;
  if (!stopwords.empty()) cfg.stopwords = load_stopwords(stopwords);
  cfg.min_span_words = min_span;
  cfg.max_span_words = max_span;
  cfg.seed = g.seed;
  Output out(output);
  auto& os = out.stream();
  std::size_t n = generate_corpus(
      read_passages(input), cfg, limit,
      [&](const RssExample& e) { os << to_json(e).dump() << '\n'; }, g.jobs);
  std::cerr << "wrote " << n << " examples\n";
  return 0;
}

int run_report(const std::string& input) {
  std::ifstream in(input);
  if (!in) throw DataError("cannot open " + input);
  nlohmann::json j;
  try {
    in >> j;
    std::cout << render_report(j);
  } catch (const nlohmann::json::exception& e) {
    throw DataError(input + ": " + e.what());
  }
  return 0;
}

int run_serve(const GlobalOptions& g, const PromptOptions& p, const std::string& table,
              std::optional<int> port) {
  Vocabulary vocab = require_vocab(g);
  auto templates = templates_for(p);
  const PromptTemplate& tpl = find_template(templates, p.prompt_id);
  TableLM lm = TableLM::load(table, vocab, terminator_ids(p, tpl, vocab));
  if (!port) {
    wire::serve_stream(std::cin, std::cout, lm, vocab);
    return 0;
  }
  auto server = make_score_server(lm, vocab);
  std::cerr << "listening on 127.0.0.1:" << *port << '\n';
  if (!server->listen("127.0.0.1", *port)) throw TransportError("cannot listen");
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Exact span decoding and evaluation for extractive QA"};
  app.require_subcommand(1);
  app.fallthrough();

  GlobalOptions g;
  app.add_option("--vocab", g.vocab, "vocabulary JSON file");
  app.add_option("--scorer", g.scorer, "table:FILE | remote:URL | stdio:CMD")
      ->envname("SPANDECODE_SCORER_URL");
  app.add_option("--seed", g.seed, "random seed");
  app.add_option("--jobs", g.jobs, "parallel workers")->check(CLI::PositiveNumber);

  PromptOptions prompt;
  std::string input;
  std::string output;
  std::optional<std::size_t> max_span_len;

  auto* decode_cmd = app.add_subcommand("decode", "decode answers for a dataset");
  std::string algo = "exact";
  decode_cmd->add_option("--algo", algo, "greedy | exact | naive")
      ->check(CLI::IsMember({"greedy", "exact", "naive"}));
  decode_cmd->add_option("--max-span-len", max_span_len, "cap on span length in tokens");
  decode_cmd->add_option("--input", input, "MRQA JSONL dataset")->required();
  decode_cmd->add_option("--output", output, "JSONL output (default stdout)");
  add_prompt_options(decode_cmd, prompt);

  auto* eval_cmd = app.add_subcommand("eval", "compare greedy and exact-extract on a dataset");
  bool naive = false;
  eval_cmd->add_flag("--naive", naive, "also run the naive per-span decoder");
  eval_cmd->add_option("--max-span-len", max_span_len, "cap on span length in tokens");
  eval_cmd->add_option("--input", input, "MRQA JSONL dataset")->required();
  eval_cmd->add_option("--output", output, "write the full JSON report here");
  add_prompt_options(eval_cmd, prompt);

  auto* subsample_cmd = app.add_subcommand("subsample", "draw few-shot training splits");
  std::string validation;
  std::vector<std::size_t> sizes;
  std::size_t num_samples = 5;
  subsample_cmd->add_option("--input", input, "MRQA JSONL pool")->required();
  subsample_cmd->add_option("--validation", validation, "held-out set whose passages are excluded");
  subsample_cmd->add_option("--sizes", sizes, "split sizes (default 16 32 ... 1024)");
  subsample_cmd->add_option("--num-samples", num_samples, "splits per size")
      ->check(CLI::PositiveNumber);
  subsample_cmd->add_option("--output", output, "JSONL output (default stdout)");

  auto* partition_cmd = app.add_subcommand("partition", "label examples S_in / S_out");
  partition_cmd->add_option("--input", input, "MRQA JSONL dataset")->required();
  partition_cmd->add_option("--output", output, "JSONL output (default stdout)");

  auto* hp_cmd = app.add_subcommand("select-hp", "pick the best hyperparameter configuration");
  hp_cmd->add_option("--input", input, "JSON score table {\"scores\": [[[...]]]}")->required();

  auto* rss_cmd = app.add_subcommand("rss-gen", "generate recurring-span pretraining examples");
  std::size_t limit = 100000;
  std::string stopwords;
  std::size_t min_span = 1;
  std::size_t max_span = 10;
  rss_cmd->add_option("--input", input, "passages (.txt one per line, .jsonl {\"text\"})")
      ->required();
  rss_cmd->add_option("--output", output, "JSONL output (default stdout)");
  rss_cmd->add_option("--limit", limit, "maximum number of examples")->check(CLI::PositiveNumber);
  rss_cmd->add_option("--stopwords", stopwords, "stopword file, one per line");
  rss_cmd->add_option("--min-span", min_span, "minimum span length in words");
  rss_cmd->add_option("--max-span", max_span, "maximum span length in words");

  auto* report_cmd = app.add_subcommand("report", "render an eval report as a table");
  report_cmd->add_option("--input", input, "report JSON written by eval")->required();

  auto* serve_cmd = app.add_subcommand("serve", "serve a table LM over the scorer protocol");
  std::string table;
  std::optional<int> port;
  serve_cmd->add_option("--table", table, "table LM JSON file")->required();
  serve_cmd->add_option("--port", port, "HTTP port (default: stdio)");
  add_prompt_options(serve_cmd, prompt);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitUsage;
  }

  try {
    if (*decode_cmd) return run_decode(g, prompt, algo, max_span_len, input, output);
    if (*eval_cmd) return run_eval_cmd(g, prompt, naive, max_span_len, input, output);
    if (*subsample_cmd) return run_subsample(g, input, validation, sizes, num_samples, output);
    if (*partition_cmd) return run_partition(g, input, output);
    if (*hp_cmd) return run_select_hp(input);
    if (*rss_cmd) return run_rss(g, input, output, limit, stopwords, min_span, max_span);
    if (*report_cmd) return run_report(input);
    if (*serve_cmd) return run_serve(g, prompt, table, port);
  } catch (const UsageError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const TransportError& e) {
    std::cerr << "scorer error: " << e.what() << '\n';
    return kExitTransport;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitData;
  }
  return kExitUsage;
}
