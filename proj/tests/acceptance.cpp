// Acceptance checks. Prints one PASS/FAIL line per criterion and exits
// non-zero if any fails.

#include <chrono>
#include <cstdio>
#include <functional>
#include <iostream>
#include <random>
#include <set>
#include <sstream>

#include "test_util.hpp"

using namespace spandecode;
using namespace spandecode::testing;

namespace {

struct Outcome {
  bool ok = true;
  std::string detail;
};

// Records the first failure; later checks still run so the detail is the
// earliest problem.
struct Checker {
  Outcome out;
  void expect(bool cond, const std::string& what) {
    if (!cond && out.ok) {
      out.ok = false;
      out.detail = what;
    }
  }
};

SpanQuery query(const Vocabulary& v, std::vector<TokenId> passage) {
  return {make_seq(v, std::move(passage)), make_seq(v, {}), make_seq(v, {kOpen})};
}

std::string fmt(double x) {
  std::ostringstream os;
  os.precision(3);
  os << x;
  return os.str();
}

Outcome oracle_equivalence() {
  Checker c;
  std::mt19937 rng(20240601);
  std::uniform_int_distribution<std::size_t> vocab_size(4, 16);
  std::uniform_int_distribution<std::size_t> len(1, 12);
  const int instances = 1200;
  auto t0 = std::chrono::steady_clock::now();
  double worst = 0.0;
  for (int trial = 0; trial < instances; ++trial) {
    Vocabulary v = small_vocab(vocab_size(rng));
    std::uniform_int_distribution<TokenId> tok(3, static_cast<TokenId>(v.size() - 1));
    std::vector<TokenId> ids(len(rng));
    for (auto& t : ids) t = tok(rng);
    SpanQuery q = query(v, ids);
    TableLM lm = random_table_lm(v, {kClose}, q.passage, q.prefix, rng);
    DecodeResult fast = exact_extract(q, lm, v);
    DecodeResult slow = naive_exact(q, lm, v);
    worst = std::max(worst, std::abs(fast.span_logprob - slow.span_logprob));
    c.expect(fast.start == slow.start && fast.length == slow.length,
             "span mismatch on instance " + std::to_string(trial));
  }
  double secs =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  c.expect(worst <= 1e-9, "log-prob gap " + fmt(worst));
  c.expect(secs < 60.0, "took " + fmt(secs) + " s");
  if (c.out.ok) {
    c.out.detail = std::to_string(instances) + " instances, max gap " + fmt(worst) + ", " +
                   fmt(secs) + " s";
  }
  return c.out;
}

Outcome pass_counts() {
  Checker c;
  Vocabulary v = small_vocab(6);
  std::mt19937 rng(5);
  for (std::size_t n = 1; n <= 32; ++n) {
    std::vector<TokenId> ids(n);
    for (std::size_t k = 0; k < n; ++k) ids[k] = static_cast<TokenId>(3 + k % 3);
    SpanQuery q = query(v, ids);
    TableLM lm = random_table_lm(v, {kClose}, q.passage, q.prefix, rng);
    lm.reset_pass_count();
    exact_extract(q, lm, v);
    c.expect(lm.pass_count() == n, "exact_extract used " + std::to_string(lm.pass_count()) +
                                       " passes for n=" + std::to_string(n));
    lm.reset_pass_count();
    naive_exact(q, lm, v);
    c.expect(lm.pass_count() == n * (n + 1) / 2,
             "naive_exact used " + std::to_string(lm.pass_count()) + " passes for n=" +
                 std::to_string(n));
  }
  if (c.out.ok) c.out.detail = "n = 1..32";
  return c.out;
}

void check_table(Checker& c, const SpanScoreTable& t,
                 const std::vector<std::vector<double>>& expected, const std::string& name) {
  for (std::size_t i = 0; i < expected.size(); ++i) {
    c.expect(t.cumulative[i][0] == 0.0, name + ": L(" + std::to_string(i) + ",0) != 0");
    c.expect(t.cumulative[i].size() == expected[i].size(), name + ": row size");
    for (std::size_t j = 0; j < expected[i].size() && j < t.cumulative[i].size(); ++j) {
      c.expect(std::abs(t.cumulative[i][j] - expected[i][j]) <= 1e-12,
               name + ": L(" + std::to_string(i) + "," + std::to_string(j) + ")");
    }
  }
}

Outcome dp_recurrence() {
  Checker c;
  using std::log;
  {
    Vocabulary v = small_vocab(6);
    TableLM lm(v, {kClose});
    lm.set_distribution({kOpen}, {0.1, 0.0, 0.2, 0.4, 0.2, 0.1});
    lm.set_distribution({kOpen, 3}, {0.1, 0.0, 0.3, 0.1, 0.4, 0.1});
    lm.set_distribution({kOpen, 3, 4}, {0.0, 0.0, 0.5, 0.125, 0.125, 0.25});
    lm.set_distribution({kOpen, 4}, {0.0, 0.0, 0.1, 0.1, 0.1, 0.7});
    SpanScoreTable t = build_span_table(query(v, {3, 4, 5}), lm);
    check_table(c, t,
                {{0.0, log(0.4), log(0.4) + log(0.4), log(0.4) + log(0.4) + log(0.25)},
                 {0.0, log(0.2), log(0.2) + log(0.7)},
                 {0.0, log(0.1)}},
                "3-token");
  }
  {
    Vocabulary v = small_vocab(8);
    TableLM lm(v, {kClose});
    // rest of the mass: (1 - 0.96875) / 3 on each of ids 0, 1, 2
    lm.set_distribution({kOpen},
                        dist_with(8, {{3, 0.5}, {4, 0.25}, {5, 0.125}, {6, 0.0625}, {7, 0.03125}}));
    lm.set_distribution({kOpen, 5}, dist_with(8, {{6, 0.7}}));
    lm.set_distribution({kOpen, 5, 6}, dist_with(8, {{7, 0.9}}));
    const double u = log(1.0 / 8);
    SpanScoreTable t = build_span_table(query(v, {3, 4, 5, 6, 7}), lm);
    check_table(c, t,
                {{0.0, log(0.5), log(0.5) + u, log(0.5) + 2 * u, log(0.5) + 3 * u,
                  log(0.5) + 4 * u},
                 {0.0, log(0.25), log(0.25) + u, log(0.25) + 2 * u, log(0.25) + 3 * u},
                 {0.0, log(0.125), log(0.125) + log(0.7), log(0.125) + log(0.7) + log(0.9)},
                 {0.0, log(0.0625), log(0.0625) + u},
                 {0.0, log(0.03125)}},
                "5-token");
  }
  if (c.out.ok) c.out.detail = "3- and 5-token tables";
  return c.out;
}

Outcome f1_conformance() {
  Checker c;
  using G = std::vector<std::string>;
  c.expect(token_f1("the IRA", G{"IRA"}) == 1.0, "'the IRA' vs 'IRA'");
  c.expect(token_f1("sixty percent", G{"60%"}) == 0.0, "disjoint");
  c.expect(token_f1("Paris", G{"Paris"}) == 1.0, "identity");
  std::ifstream in(test_data("f1_golden.jsonl"));
  std::string line;
  int cases = 0;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    auto j = nlohmann::json::parse(line);
    auto golds = j["golds"].get<G>();
    std::string pred = j["prediction"];
    c.expect(token_f1(pred, golds) == j["f1"].get<double>(), "golden f1: " + line);
    c.expect(exact_match(pred, golds) == j["em"].get<bool>(), "golden em: " + line);
    ++cases;
  }
  c.expect(cases == 50, "golden file has " + std::to_string(cases) + " cases");
  if (c.out.ok) c.out.detail = "worked examples + " + std::to_string(cases) + " golden cases";
  return c.out;
}

Outcome tokenization_partition() {
  Checker c;
  const Vocabulary& v = toy_vocab();
  const std::string B(kBoundaryMarker);
  const std::string passage = "(1971)";
  const std::vector<std::string> gold = {"1971"};
  c.expect(partition_example(gold, passage, v) == Partition::s_out, "not classified S_out");

  TokenSeq ids = encode(passage, v);
  for (std::size_t i = 0; i < ids.size(); ++i) {
    for (std::size_t j = 1; i + j <= ids.size(); ++j) {
      c.expect(decode(ids.slice(i, j), v) != "1971", "a passage span decodes to 1971");
    }
  }

  const TokenId open = v.id_of("<extra_id_0>");
  const TokenId close = v.id_of("<extra_id_1>");
  SpanQuery q{ids, encode("Q", v), make_seq(v, {open})};
  std::mt19937 rng(71);
  for (int trial = 0; trial < 50; ++trial) {
    TableLM lm = random_table_lm(v, {close}, q.passage, q.prefix, rng);
    c.expect(exact_extract(q, lm, v).text != "1971", "exact-extract returned 1971");
  }

  TableLM lm(v, {close});
  force_greedy_path(lm, v.size(), {open}, {v.id_of(B + "1971")}, close);
  DecodeConfig cfg;
  cfg.terminator_ids = {close};
  DecodeResult g = greedy_decode(q, lm, v, cfg);
  c.expect(g.text == "1971", "greedy text is '" + g.text + "'");
  c.expect(!g.extractive, "greedy output counted as a passage span");
  c.expect(exact_match(g.text, gold) && token_f1(g.text, gold) == 1.0, "greedy misses gold");
  DecodeResult e = exact_extract(q, lm, v);
  c.expect(!exact_match(e.text, gold), "exact-extract matched gold");
  if (c.out.ok) {
    c.out.detail = "S_out; greedy '" + g.text + "' matches gold, exact-extract gives '" +
                   e.text + "'";
  }
  return c.out;
}

Outcome extractiveness() {
  Checker c;
  const Vocabulary& v = toy_vocab();
  const std::string B(kBoundaryMarker);
  const TokenId open = v.id_of("<extra_id_0>");
  const TokenId close = v.id_of("<extra_id_1>");
  DecodeConfig cfg;
  cfg.terminator_ids = {close};
  const std::vector<std::string> passages = {"the IRA was born in London",
                                             "Alan Turing died in London", "Paris is big",
                                             "the city of Paris was born"};
  std::mt19937 rng(6);
  int exact_runs = 0, exact_extractive = 0;
  int on_runs = 0, on_extractive = 0, off_runs = 0, off_extractive = 0;
  for (const auto& p : passages) {
    SpanQuery q{encode(p, v), encode("Where?", v), make_seq(v, {open})};
    for (int trial = 0; trial < 50; ++trial) {
      TableLM lm = random_table_lm(v, {close}, q.passage, q.prefix, rng);
      DecodeResult r = exact_extract(q, lm, v);
      ++exact_runs;
      exact_extractive += (r.extractive && is_extractive(r.text, p)) ? 1 : 0;
    }
    // greedy spelling the passage's second word
    TableLM on(v, {close});
    force_greedy_path(on, v.size(), {open}, {q.passage.ids[1]}, close);
    DecodeResult ro = greedy_decode(q, on, v, cfg);
    ++on_runs;
    on_extractive += is_extractive(ro.text, p) ? 1 : 0;
    // greedy leaving the passage
    TableLM off(v, {close});
    force_greedy_path(off, v.size(), {open}, {v.id_of(B + "What")}, close);
    DecodeResult rf = greedy_decode(q, off, v, cfg);
    ++off_runs;
    off_extractive += is_extractive(rf.text, p) ? 1 : 0;
  }
  c.expect(exact_extractive == exact_runs, "exact-extract extractiveness " +
                                               std::to_string(exact_extractive) + "/" +
                                               std::to_string(exact_runs));
  c.expect(on_extractive == on_runs, "on-passage greedy not 100%");
  c.expect(off_extractive == 0, "off-passage greedy not 0%");

  // "." copied from the passage is still garbage
  SpanQuery q{encode("Paris is big.", v), encode("Q", v), make_seq(v, {open})};
  TableLM dot(v, {close});
  force_greedy_path(dot, v.size(), {open}, {v.id_of(".")}, close);
  DecodeResult rd = greedy_decode(q, dot, v, cfg);
  c.expect(rd.text == ".", "dot path produced '" + rd.text + "'");
  c.expect(!is_extractive(rd.text, "Paris is big."), "'.' counted as extractive");
  if (c.out.ok) {
    c.out.detail = "exact-extract " + std::to_string(exact_extractive) + "/" +
                   std::to_string(exact_runs) + ", greedy on/off 100%/0%, '.' excluded";
  }
  return c.out;
}

Outcome rss_generation() {
  Checker c;
  std::mt19937 rng(1000);
  auto passages = synthetic_passages(1000, rng);
  RssConfig cfg;
  cfg.seed = 17;
  auto serialize = [&](std::size_t jobs) {
    std::string s;
    generate_corpus(passages, cfg, 1000000,
                    [&](const RssExample& e) { s += to_json(e).dump() + "\n"; }, jobs);
    return s;
  };
  std::size_t emitted = 0;
  std::size_t k = 0;
  for (const auto& p : passages) {
    auto ex = make_example(p, cfg);
    ++k;
    if (!ex) continue;
    ++emitted;
    std::string why = rss_violation(p, *ex, cfg);
    c.expect(why.empty(), "passage " + std::to_string(k) + ": " + why);
  }
  c.expect(emitted > 100, "only " + std::to_string(emitted) + " examples");
  std::string first = serialize(1);
  std::string second = serialize(1);
  std::string parallel = serialize(4);
  c.expect(first == second, "two runs differ");
  c.expect(first == parallel, "parallel run differs");
  c.expect(static_cast<std::size_t>(std::count(first.begin(), first.end(), '\n')) == emitted,
           "stream length");
  if (c.out.ok) {
    c.out.detail = std::to_string(emitted) + " examples from 1000 passages, byte-identical reruns";
  }
  return c.out;
}

Outcome hyperparameter_selection() {
  Checker c;
  c.expect(select_hyperparameters({{{{80}, {60}}, {{70}, {70}}}}).index == 1, "worked example");
  std::mt19937 rng(8);
  std::uniform_real_distribution<double> score(1.0, 50.0);
  std::uniform_real_distribution<double> scale(0.05, 2.0);
  std::uniform_int_distribution<std::size_t> dim(1, 5);
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t configs = dim(rng), sizes = dim(rng), samples = dim(rng);
    ConfigScoreTable t;
    t.scores.assign(configs, std::vector<std::vector<double>>(sizes, std::vector<double>(samples)));
    for (auto& cfg : t.scores)
      for (auto& n : cfg)
        for (auto& x : n) x = score(rng);
    ConfigScoreTable scaled = t;
    for (std::size_t n = 0; n < sizes; ++n) {
      double a = scale(rng);
      for (auto& cfg : scaled.scores)
        for (auto& x : cfg[n]) x *= a;
    }
    c.expect(select_hyperparameters(t).index == select_hyperparameters(scaled).index,
             "rescaling changed the argmax on table " + std::to_string(trial));
  }
  if (c.out.ok) c.out.detail = "worked example + 100 rescaled tables";
  return c.out;
}

Outcome fewshot_structure() {
  Checker c;
  std::vector<QAExample> pool;
  for (int i = 0; i < 1500; ++i) {
    // three questions per passage
    pool.push_back({"q" + std::to_string(i), "passage " + std::to_string(i / 3), "?", {"a"}});
  }
  std::vector<QAExample> validation;
  for (int i = 0; i < 60; ++i) validation.push_back({"v" + std::to_string(i), pool[i * 5].context, "?", {"a"}});

  auto a = subsample(pool, default_fewshot_sizes(), 5, 2022, validation);
  auto b = subsample(pool, default_fewshot_sizes(), 5, 2022, validation);
  c.expect(a.size() == 35, std::to_string(a.size()) + " splits");
  std::map<std::size_t, int> per_size;
  for (std::size_t i = 0; i < a.size(); ++i) {
    ++per_size[a[i].size];
    c.expect(a[i].example_ids.size() == a[i].size, "split size");
    c.expect(to_json(a[i]) == to_json(b[i]), "not deterministic");
  }
  for (std::size_t n : default_fewshot_sizes()) c.expect(per_size[n] == 5, "sizes");
  try {
    check_passage_disjoint(a, pool, validation);
  } catch (const DataError& e) {
    c.expect(false, std::string("leak: ") + e.what());
  }
  // the check itself must notice a planted leak
  FewShotSplit leaky{1, 0, 0, {pool[0].id}};
  bool caught = false;
  try {
    check_passage_disjoint({leaky}, pool, validation);
  } catch (const DataError&) {
    caught = true;
  }
  c.expect(caught, "planted leak not detected");
  if (c.out.ok) c.out.detail = "35 splits, deterministic, disjoint from validation";
  return c.out;
}

Outcome prompt_fidelity() {
  Checker c;
  for (const auto& t : list_templates()) {
    std::string golden =
        read_file(test_data("prompts/template_" + std::to_string(t.id) + ".txt"));
    c.expect(!golden.empty(), "missing golden " + std::to_string(t.id));
    c.expect(render_encoder_input(t, "Paris is big.", "What is big?") == golden,
             "template " + std::to_string(t.id) + " differs from golden");
  }
  c.expect(list_templates().size() == 6, "template count");
  c.expect(render_encoder_input(find_template(list_templates(), 2), "Paris is big.",
                                "What is big?") ==
               "Text: Paris is big.\nQuestion: What is big?\nAnswer:<extra_id_0>.",
           "template 2 block");
  if (c.out.ok) c.out.detail = "6 templates byte-exact";
  return c.out;
}

}  // namespace

int main() {
  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria = {
      {"oracle equivalence", oracle_equivalence},
      {"pass counts", pass_counts},
      {"DP recurrence", dp_recurrence},
      {"F1 conformance", f1_conformance},
      {"tokenization partition", tokenization_partition},
      {"extractiveness/exactness", extractiveness},
      {"RSS generation", rss_generation},
      {"hyperparameter selection", hyperparameter_selection},
      {"few-shot structure", fewshot_structure},
      {"prompt fidelity", prompt_fidelity},
  };
  int failed = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    if (!o.ok) ++failed;
    std::printf("%-4s %2zu %-26s %s\n", o.ok ? "PASS" : "FAIL", i + 1,
                criteria[i].first.c_str(), o.detail.c_str());
  }
  std::printf("%zu/%zu criteria passed\n", criteria.size() - failed, criteria.size());
  return failed == 0 ? 0 : 1;
}
