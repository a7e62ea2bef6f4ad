#pragma once

// Remote scorer wire protocol: one JSON object per request and per reply,
// newline-delimited over a child process's stdio or as the body of
// HTTP POST /score.
//
//   request:  {"id": u64, "op": "teacher_forced" | "next_dist",
//              "source_ids": [u32], "prefix_ids": [u32], "target_ids": [u32]}
//   response: {"id": u64, "gold_logprob": [f64], "term_logprob": [f64]}
//          or {"id": u64, "logits_logprob": [f64 of |V|]}
//
// Log-probabilities of zero-probability events are sent as null (JSON has no
// -inf) and read back as -inf. The remote side owns its terminator set.

#include <fcntl.h>
#include <signal.h>
#include <sys/types.h>
#include <sys/wait.h>
#include <unistd.h>

#include <atomic>
#include <cerrno>
#include <cstring>
#include <istream>
#include <memory>
#include <mutex>
#include <ostream>
#include <string>
#include <vector>

#include <httplib.h>
#include <json.hpp>

#include "spandecode/error.hpp"
#include "spandecode/scorer.hpp"

namespace spandecode {

namespace wire {

inline constexpr std::string_view kTeacherForced = "teacher_forced";
inline constexpr std::string_view kNextDist = "next_dist";

inline nlohmann::json make_request(std::uint64_t id, std::string_view op,
                                   const TokenSeq& source, const TokenSeq& prefix,
                                   const TokenSeq& target) {
  return {{"id", id},
          {"op", op},
          {"source_ids", source.ids},
          {"prefix_ids", prefix.ids},
          {"target_ids", target.ids}};
}

inline nlohmann::json encode_logprobs(const std::vector<double>& xs) {
  nlohmann::json arr = nlohmann::json::array();
  for (double x : xs) {
    if (std::isfinite(x)) {
      arr.push_back(x);
    } else {
      arr.push_back(nullptr);
    }
  }
  return arr;
}

inline std::vector<double> decode_logprobs(const nlohmann::json& j, const char* field) {
  if (!j.is_array()) {
    throw TransportError(std::string("reply field '") + field + "' is not an array");
  }
  std::vector<double> out;
  out.reserve(j.size());
  for (const auto& v : j) {
    if (v.is_null()) {
      out.push_back(kNegInf);
    } else if (v.is_number()) {
      out.push_back(v.get<double>());
    } else {
      throw TransportError(std::string("non-numeric entry in '") + field + "'");
    }
  }
  return out;
}

inline nlohmann::json parse_reply(std::string_view line) {
  try {
    auto j = nlohmann::json::parse(line);
    if (!j.is_object()) throw TransportError("reply is not a JSON object");
    return j;
  } catch (const nlohmann::json::exception& e) {
    throw TransportError(std::string("malformed scorer reply: ") + e.what());
  }
}

inline void check_id(const nlohmann::json& reply, std::uint64_t id) {
  const bool id_ok = reply.contains("id") && reply["id"].is_number_integer() &&
                     reply["id"].get<std::int64_t>() >= 0 &&
                     reply["id"].get<std::uint64_t>() == id;
  if (!id_ok) {
    throw TransportError("scorer reply id does not match request " + std::to_string(id));
  }
  if (reply.contains("error")) {
    throw TransportError("scorer reported: " + reply["error"].dump());
  }
}

inline StepScores parse_step_scores(const nlohmann::json& reply, std::uint64_t id,
                                    std::size_t target_len) {
  check_id(reply, id);
  if (!reply.contains("gold_logprob") || !reply.contains("term_logprob")) {
    throw TransportError("teacher_forced reply lacks gold_logprob/term_logprob");
  }
  StepScores s{decode_logprobs(reply["gold_logprob"], "gold_logprob"),
               decode_logprobs(reply["term_logprob"], "term_logprob")};
  validate_step_scores(s, target_len);
  return s;
}

inline LogDistribution parse_distribution(const nlohmann::json& reply, std::uint64_t id,
                                          std::size_t vocab_size) {
  check_id(reply, id);
  if (!reply.contains("logits_logprob")) {
    throw TransportError("next_dist reply lacks logits_logprob");
  }
  auto d = decode_logprobs(reply["logits_logprob"], "logits_logprob");
  if (d.size() != vocab_size) {
    throw TransportError("next_dist reply has " + std::to_string(d.size()) +
                         " entries, vocabulary has " + std::to_string(vocab_size));
  }
  return d;
}

// Server side: answers one request with `backend`. Errors become an
// {"id", "error"} reply rather than an exception.
inline nlohmann::json serve_request(const nlohmann::json& req, Scorer& backend,
                                    const Vocabulary& vocab) {
  std::uint64_t id = 0;
  try {
    id = req.at("id").get<std::uint64_t>();
    auto op = req.at("op").get<std::string>();
    auto ids = [&](const char* field) {
      std::vector<TokenId> v;
      if (req.contains(field)) v = req.at(field).get<std::vector<TokenId>>();
      return make_seq(vocab, std::move(v));
    };
    TokenSeq source = ids("source_ids");
    TokenSeq prefix = ids("prefix_ids");
    TokenSeq target = ids("target_ids");
    if (op == kTeacherForced) {
      StepScores s = backend.teacher_forced_pass({source, prefix, target});
      return {{"id", id},
              {"gold_logprob", encode_logprobs(s.gold_logprob)},
              {"term_logprob", encode_logprobs(s.term_logprob)}};
    }
    if (op == kNextDist) {
      prefix.ids.insert(prefix.ids.end(), target.ids.begin(), target.ids.end());
      return {{"id", id},
              {"logits_logprob",
               encode_logprobs(backend.next_token_distribution(source, prefix))}};
    }
    return {{"id", id}, {"error", "unknown op '" + op + "'"}};
  } catch (const std::exception& e) {
    return {{"id", id}, {"error", e.what()}};
  }
}

// Line-oriented server loop for the stdio transport.
inline void serve_stream(std::istream& in, std::ostream& out, Scorer& backend,
                         const Vocabulary& vocab) {
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    nlohmann::json reply;
    try {
      reply = serve_request(nlohmann::json::parse(line), backend, vocab);
    } catch (const nlohmann::json::exception& e) {
      reply = {{"id", 0}, {"error", std::string("bad request: ") + e.what()}};
    }
    out << reply.dump() << '\n' << std::flush;
  }
}

}  // namespace wire

// Moves one request/reply pair. Implementations serialize internally.
class Transport {
 public:
  virtual ~Transport() = default;
  virtual nlohmann::json exchange(const nlohmann::json& request) = 0;
};

// Spawns `/bin/sh -c command` and talks newline-delimited JSON over its
// stdin/stdout.
class StdioTransport : public Transport {
 public:
  explicit StdioTransport(const std::string& command) {
    int to_child[2];
    int from_child[2];
    if (pipe(to_child) != 0) throw TransportError("pipe failed: " + errno_text());
    if (pipe(from_child) != 0) {
      close(to_child[0]);
      close(to_child[1]);
      throw TransportError("pipe failed: " + errno_text());
    }
    pid_ = fork();
    if (pid_ < 0) throw TransportError("fork failed: " + errno_text());
    if (pid_ == 0) {
      dup2(to_child[0], STDIN_FILENO);
      dup2(from_child[1], STDOUT_FILENO);
      close(to_child[0]);
      close(to_child[1]);
      close(from_child[0]);
      close(from_child[1]);
      execl("/bin/sh", "sh", "-c", command.c_str(), static_cast<char*>(nullptr));
      _exit(127);
    }
    close(to_child[0]);
    close(from_child[1]);
    write_fd_ = to_child[1];
    read_fd_ = from_child[0];
    signal(SIGPIPE, SIG_IGN);
  }

  StdioTransport(const StdioTransport&) = delete;
  StdioTransport& operator=(const StdioTransport&) = delete;

  ~StdioTransport() override {
    if (write_fd_ >= 0) close(write_fd_);
    if (read_fd_ >= 0) close(read_fd_);
    if (pid_ > 0) {
      int status = 0;
      waitpid(pid_, &status, 0);
    }
  }

  nlohmann::json exchange(const nlohmann::json& request) override {
    std::lock_guard lock(mu_);
    std::string line = request.dump();
    line += '\n';
    std::size_t off = 0;
    while (off < line.size()) {
      ssize_t w = write(write_fd_, line.data() + off, line.size() - off);
      if (w < 0) {
        if (errno == EINTR) continue;
        throw TransportError("write to scorer process failed: " + errno_text());
      }
      off += static_cast<std::size_t>(w);
    }
    return wire::parse_reply(read_line());
  }

 private:
  static std::string errno_text() { return std::strerror(errno); }

  std::string read_line() {
    for (;;) {
      auto nl = buffer_.find('\n');
      if (nl != std::string::npos) {
        std::string line = buffer_.substr(0, nl);
        buffer_.erase(0, nl + 1);
        return line;
      }
      char chunk[4096];
      ssize_t r = read(read_fd_, chunk, sizeof chunk);
      if (r < 0 && errno == EINTR) continue;
      if (r <= 0) throw TransportError("scorer process closed its output");
      buffer_.append(chunk, static_cast<std::size_t>(r));
    }
  }

  pid_t pid_ = -1;
  int write_fd_ = -1;
  int read_fd_ = -1;
  std::string buffer_;
  std::mutex mu_;
};

// POSTs each request to <base>/score.
class HttpTransport : public Transport {
 public:
  explicit HttpTransport(const std::string& url) {
    std::string rest = url;
    if (rest.starts_with("http://")) rest = rest.substr(7);
    else if (rest.starts_with("https://")) {
      throw TransportError("https scorer URLs are not supported");
    }
    auto slash = rest.find('/');
    std::string hostport = rest.substr(0, slash);
    path_ = slash == std::string::npos ? "" : rest.substr(slash);
    while (!path_.empty() && path_.back() == '/') path_.pop_back();
    if (!path_.ends_with("/score")) path_ += "/score";
    auto colon = hostport.rfind(':');
    if (colon == std::string::npos) {
      host_ = hostport;
      port_ = 80;
    } else {
      host_ = hostport.substr(0, colon);
      try {
        port_ = std::stoi(hostport.substr(colon + 1));
      } catch (const std::exception&) {
        throw TransportError("bad port in scorer URL '" + url + "'");
      }
    }
    if (host_.empty()) throw TransportError("bad scorer URL '" + url + "'");
  }

  nlohmann::json exchange(const nlohmann::json& request) override {
    std::lock_guard lock(mu_);
    httplib::Client client(host_, port_);
    client.set_read_timeout(300, 0);
    auto res = client.Post(path_, request.dump(), "application/json");
    if (!res) {
      throw TransportError("scorer at " + host_ + ":" + std::to_string(port_) +
                           " unreachable: " + httplib::to_string(res.error()));
    }
    if (res->status != 200) {
      throw TransportError("scorer returned HTTP " + std::to_string(res->status));
    }
    return wire::parse_reply(res->body);
  }

  const std::string& host() const { return host_; }
  int port() const { return port_; }
  const std::string& path() const { return path_; }

 private:
  std::string host_;
  int port_ = 80;
  std::string path_;
  std::mutex mu_;
};

class RemoteScorer : public Scorer {
 public:
  RemoteScorer(const Vocabulary& vocab, std::unique_ptr<Transport> transport)
      : vocab_id_(vocab.fingerprint()),
        vocab_size_(vocab.size()),
        transport_(std::move(transport)) {}

  std::uint64_t vocab_id() const override { return vocab_id_; }
  std::size_t vocab_size() const override { return vocab_size_; }

 protected:
  StepScores score_forced(const ScoreRequest& req) override {
    const std::uint64_t id = next_id_.fetch_add(1);
    auto reply = transport_->exchange(wire::make_request(
        id, wire::kTeacherForced, req.source, req.forced_prefix, req.forced_target));
    return wire::parse_step_scores(reply, id, req.forced_target.size());
  }

  LogDistribution score_next(const TokenSeq& source, const TokenSeq& prefix) override {
    const std::uint64_t id = next_id_.fetch_add(1);
    TokenSeq empty{{}, prefix.vocab_id};
    auto reply = transport_->exchange(
        wire::make_request(id, wire::kNextDist, source, prefix, empty));
    return wire::parse_distribution(reply, id, vocab_size_);
  }

 private:
  std::uint64_t vocab_id_;
  std::size_t vocab_size_;
  std::unique_ptr<Transport> transport_;
  std::atomic<std::uint64_t> next_id_{1};
};

// Wraps `backend` in an HTTP server answering POST /score. Call listen() or
// bind_to_any_port() + listen_after_bind() on the returned server.
inline std::unique_ptr<httplib::Server> make_score_server(Scorer& backend,
                                                          const Vocabulary& vocab) {
  auto server = std::make_unique<httplib::Server>();
  server->Post("/score", [&backend, &vocab](const httplib::Request& req,
                                            httplib::Response& res) {
    nlohmann::json reply;
    try {
      reply = wire::serve_request(nlohmann::json::parse(req.body), backend, vocab);
    } catch (const nlohmann::json::exception& e) {
      res.status = 400;
      reply = {{"id", 0}, {"error", std::string("bad request: ") + e.what()}};
    }
    res.set_content(reply.dump(), "application/json");
  });
  return server;
}

}  // namespace spandecode
