#pragma once

// Table-driven subword tokenizer: greedy longest-match segmentation over a
// fixed piece inventory with byte fallback. Spaces are encoded with the
// word-boundary marker U+2581 and a dummy boundary is prepended to every
// non-empty input, the same convention sentencepiece vocabularies use. This
// is enough to reproduce subword-boundary artifacts such as "(1971)"
// segmenting as ["▁(19", "71", ")"] while "1971" becomes ["▁1971"].

#include <algorithm>
#include <array>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include <json.hpp>

#include "spandecode/detail/hash.hpp"
#include "spandecode/error.hpp"

namespace spandecode {

using TokenId = std::uint32_t;

inline constexpr std::string_view kBoundaryMarker = "\xE2\x96\x81";  // ▁

namespace detail {

struct StringHash {
  using is_transparent = void;
  std::size_t operator()(std::string_view s) const noexcept {
    return std::hash<std::string_view>{}(s);
  }
};

inline std::string byte_piece_name(std::uint8_t b) {
  static constexpr char kHex[] = "0123456789ABCDEF";
  std::string s = "<0x";
  s += kHex[b >> 4];
  s += kHex[b & 0xf];
  s += '>';
  return s;
}

inline std::optional<std::uint8_t> parse_byte_piece(std::string_view p) {
  if (p.size() != 6 || p.substr(0, 3) != "<0x" || p.back() != '>') {
    return std::nullopt;
  }
  auto nibble = [](char c) -> int {
    if (c >= '0' && c <= '9') return c - '0';
    if (c >= 'A' && c <= 'F') return c - 'A' + 10;
    return -1;
  };
  int hi = nibble(p[3]);
  int lo = nibble(p[4]);
  if (hi < 0 || lo < 0) return std::nullopt;
  return static_cast<std::uint8_t>(hi * 16 + lo);
}

// Length of the UTF-8 sequence introduced by lead byte `c`; 1 for stray
// continuation or invalid bytes so that byte fallback stays total.
inline std::size_t utf8_length(unsigned char c) {
  if (c < 0x80) return 1;
  if ((c >> 5) == 0x6) return 2;
  if ((c >> 4) == 0xe) return 3;
  if ((c >> 3) == 0x1e) return 4;
  return 1;
}

}  // namespace detail

// Immutable token inventory. Piece index is the token id. With byte fallback
// enabled (the default) the 256 pieces "<0x00>".."<0xFF>" are always present:
// those missing from the source list are appended after it, so ids of listed
// pieces never move. Without byte fallback the vocabulary is exactly the
// listed pieces and encoding uncovered text is an error; small closed
// vocabularies for table-driven tests use this.
class Vocabulary {
 public:
  Vocabulary(std::vector<std::string> pieces, std::string terminator,
             std::vector<std::string> sentinels, bool byte_fallback = true)
      : pieces_(std::move(pieces)),
        terminator_piece_(std::move(terminator)),
        sentinel_pieces_(std::move(sentinels)),
        byte_fallback_(byte_fallback) {
    byte_ids_.fill(0);
    std::array<bool, 256> have_byte{};
    for (std::size_t i = 0; i < pieces_.size(); ++i) {
      if (pieces_[i].empty()) {
        throw DataError("vocabulary piece " + std::to_string(i) + " is empty");
      }
      if (auto b = detail::parse_byte_piece(pieces_[i])) {
        have_byte[*b] = true;
        byte_ids_[*b] = static_cast<TokenId>(i);
      }
    }
    if (byte_fallback_) {
      for (int b = 0; b < 256; ++b) {
        if (!have_byte[b]) {
          byte_ids_[b] = static_cast<TokenId>(pieces_.size());
          have_byte[b] = true;
          pieces_.push_back(detail::byte_piece_name(static_cast<std::uint8_t>(b)));
        }
      }
    }
    byte_value_.assign(pieces_.size(), -1);
    for (int b = 0; b < 256; ++b) {
      if (have_byte[b]) byte_value_[byte_ids_[b]] = b;
    }

    for (std::size_t i = 0; i < pieces_.size(); ++i) {
      auto [it, inserted] = index_.emplace(pieces_[i], static_cast<TokenId>(i));
      if (!inserted) {
        throw DataError("duplicate vocabulary piece '" + pieces_[i] + "'");
      }
      if (byte_value_[i] < 0) {
        max_piece_bytes_ = std::max(max_piece_bytes_, pieces_[i].size());
      }
    }

    terminator_id_ = require(terminator_piece_, "terminator");
    for (const auto& s : sentinel_pieces_) {
      sentinel_ids_.push_back(require(s, "sentinel"));
    }

    std::uint64_t h = detail::kFnvOffset;
    for (const auto& p : pieces_) {
      h = detail::fnv1a(p, h);
      h = detail::fnv1a(std::string_view("\0", 1), h);
    }
    fingerprint_ = h;
  }

  static Vocabulary from_json(const nlohmann::json& j) {
    try {
      auto pieces = j.at("pieces").get<std::vector<std::string>>();
      auto terminator = j.at("terminator").get<std::string>();
      std::vector<std::string> sentinels;
      if (j.contains("sentinels")) {
        sentinels = j.at("sentinels").get<std::vector<std::string>>();
      }
      bool byte_fallback = j.value("byte_fallback", true);
      return Vocabulary(std::move(pieces), std::move(terminator),
                        std::move(sentinels), byte_fallback);
    } catch (const nlohmann::json::exception& e) {
      throw DataError(std::string("malformed vocabulary: ") + e.what());
    }
  }

  static Vocabulary load(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open vocabulary file " + path.string());
    nlohmann::json j;
    try {
      in >> j;
    } catch (const nlohmann::json::exception& e) {
      throw DataError("vocabulary file " + path.string() + ": " + e.what());
    }
    return from_json(j);
  }

  std::size_t size() const { return pieces_.size(); }
  std::uint64_t fingerprint() const { return fingerprint_; }

  bool contains(TokenId id) const { return id < pieces_.size(); }

  const std::string& piece(TokenId id) const {
    if (!contains(id)) {
      throw VocabularyMismatch("token id " + std::to_string(id) +
                               " outside vocabulary of size " +
                               std::to_string(size()));
    }
    return pieces_[id];
  }

  std::optional<TokenId> find(std::string_view piece) const {
    auto it = index_.find(piece);
    if (it == index_.end()) return std::nullopt;
    return it->second;
  }

  TokenId id_of(std::string_view piece) const {
    if (auto id = find(piece)) return *id;
    throw VocabularyMismatch("piece '" + std::string(piece) +
                             "' not in vocabulary");
  }

  // Byte value of a fallback piece, if `id` is one.
  std::optional<std::uint8_t> byte_value(TokenId id) const {
    if (!contains(id) || byte_value_[id] < 0) return std::nullopt;
    return static_cast<std::uint8_t>(byte_value_[id]);
  }
  TokenId byte_token(std::uint8_t b) const { return byte_ids_[b]; }
  bool has_byte_fallback() const { return byte_fallback_; }

  const std::string& terminator_piece() const { return terminator_piece_; }
  TokenId terminator_id() const { return terminator_id_; }
  const std::vector<std::string>& sentinel_pieces() const {
    return sentinel_pieces_;
  }
  const std::vector<TokenId>& sentinel_ids() const { return sentinel_ids_; }

  bool is_special(TokenId id) const {
    if (id == terminator_id_) return true;
    for (TokenId s : sentinel_ids_) {
      if (s == id) return true;
    }
    return false;
  }

  // Longest non-byte piece, in bytes; bounds the longest-match window.
  std::size_t max_piece_bytes() const { return max_piece_bytes_; }

  // Id of a matchable (non-byte-fallback) piece with exactly this surface.
  std::optional<TokenId> match(std::string_view surface) const {
    auto id = find(surface);
    if (!id || byte_value_[*id] >= 0) return std::nullopt;
    return id;
  }

  nlohmann::json to_json() const {
    return {{"pieces", pieces_},
            {"terminator", terminator_piece_},
            {"sentinels", sentinel_pieces_},
            {"byte_fallback", byte_fallback_}};
  }

 private:
  TokenId require(const std::string& p, const char* role) const {
    auto it = index_.find(p);
    if (it == index_.end()) {
      throw DataError(std::string(role) + " piece '" + p +
                      "' missing from vocabulary");
    }
    return it->second;
  }

  std::vector<std::string> pieces_;
  std::unordered_map<std::string, TokenId, detail::StringHash, std::equal_to<>>
      index_;
  std::array<TokenId, 256> byte_ids_{};
  std::vector<int> byte_value_;
  std::size_t max_piece_bytes_ = 0;
  std::string terminator_piece_;
  TokenId terminator_id_ = 0;
  std::vector<std::string> sentinel_pieces_;
  std::vector<TokenId> sentinel_ids_;
  bool byte_fallback_ = true;
  std::uint64_t fingerprint_ = 0;
};

// Token ids tagged with the fingerprint of the vocabulary that produced them.
struct TokenSeq {
  std::vector<TokenId> ids;
  std::uint64_t vocab_id = 0;

  std::size_t size() const { return ids.size(); }
  bool empty() const { return ids.empty(); }

  TokenSeq slice(std::size_t start, std::size_t length) const {
    return {std::vector<TokenId>(ids.begin() + static_cast<std::ptrdiff_t>(start),
                                 ids.begin() + static_cast<std::ptrdiff_t>(start + length)),
            vocab_id};
  }

  friend bool operator==(const TokenSeq&, const TokenSeq&) = default;
};

inline TokenSeq make_seq(const Vocabulary& vocab, std::vector<TokenId> ids) {
  for (TokenId id : ids) {
    if (!vocab.contains(id)) {
      throw VocabularyMismatch("token id " + std::to_string(id) +
                               " outside vocabulary");
    }
  }
  return {std::move(ids), vocab.fingerprint()};
}

inline void check_vocab(const TokenSeq& seq, const Vocabulary& vocab) {
  if (seq.vocab_id != vocab.fingerprint()) {
    throw VocabularyMismatch("token sequence was encoded under a different vocabulary");
  }
}

inline TokenSeq encode(std::string_view text, const Vocabulary& vocab) {
  TokenSeq out{{}, vocab.fingerprint()};
  if (text.empty()) return out;

  std::string norm(kBoundaryMarker);
  norm.reserve(text.size() * 2);
  for (char c : text) {
    if (c == ' ') {
      norm += kBoundaryMarker;
    } else {
      norm += c;
    }
  }

  const std::string_view s = norm;
  std::size_t pos = 0;
  while (pos < s.size()) {
    std::size_t window = std::min(vocab.max_piece_bytes(), s.size() - pos);
    bool matched = false;
    for (std::size_t len = window; len > 0; --len) {
      if (auto id = vocab.match(s.substr(pos, len))) {
        out.ids.push_back(*id);
        pos += len;
        matched = true;
        break;
      }
    }
    if (!matched) {
      if (!vocab.has_byte_fallback()) {
        throw InvalidArgument("text at byte " + std::to_string(pos) +
                              " is not covered by a vocabulary without byte fallback");
      }
      std::size_t len = std::min(
          detail::utf8_length(static_cast<unsigned char>(s[pos])), s.size() - pos);
      for (std::size_t k = 0; k < len; ++k) {
        out.ids.push_back(vocab.byte_token(static_cast<std::uint8_t>(s[pos + k])));
      }
      pos += len;
    }
  }
  return out;
}

inline std::string decode(std::span<const TokenId> ids, const Vocabulary& vocab) {
  std::string raw;
  for (TokenId id : ids) {
    if (auto b = vocab.byte_value(id)) {
      raw += static_cast<char>(*b);
    } else {
      raw += vocab.piece(id);
    }
  }
  std::string out;
  out.reserve(raw.size());
  for (std::size_t i = 0; i < raw.size();) {
    if (raw.compare(i, kBoundaryMarker.size(), kBoundaryMarker) == 0) {
      out += ' ';
      i += kBoundaryMarker.size();
    } else {
      out += raw[i++];
    }
  }
  if (!out.empty() && out.front() == ' ') out.erase(0, 1);
  return out;
}

inline std::string decode(const TokenSeq& seq, const Vocabulary& vocab) {
  check_vocab(seq, vocab);
  return decode(std::span<const TokenId>(seq.ids), vocab);
}

// First offset at which `needle` occurs contiguously inside `haystack`.
inline std::optional<std::size_t> find_subsequence(
    std::span<const TokenId> needle, std::span<const TokenId> haystack) {
  if (needle.empty()) return 0;
  if (needle.size() > haystack.size()) return std::nullopt;
  auto it = std::search(haystack.begin(), haystack.end(), needle.begin(),
                        needle.end());
  if (it == haystack.end()) return std::nullopt;
  return static_cast<std::size_t>(it - haystack.begin());
}

inline bool is_token_subsequence(const TokenSeq& needle, const TokenSeq& haystack) {
  if (needle.vocab_id != haystack.vocab_id) {
    throw VocabularyMismatch("needle and haystack use different vocabularies");
  }
  return find_subsequence(needle.ids, haystack.ids).has_value();
}

}  // namespace spandecode
