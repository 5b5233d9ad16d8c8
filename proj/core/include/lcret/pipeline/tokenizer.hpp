#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace lcret {

class Tokenizer {
 public:
  virtual ~Tokenizer() = default;
  /// Content ids only; no [CLS]/[SEP] added.
  virtual std::vector<std::int32_t> tokenize(std::string_view text) const = 0;
  /// Model vocabulary size (a multiple of 64).
  virtual std::size_t vocab_size() const noexcept = 0;
  /// Number of ids actually in use; ids in [used_ids, vocab_size) are padding.
  virtual std::size_t used_ids() const noexcept = 0;
};

/// Words seen in training map to one id each; anything else falls back to one
/// id per UTF-8 byte. Text is split into runs of ASCII alphanumerics or
/// non-ASCII bytes, and single punctuation characters; ASCII is lowercased.
///
/// Ids: 0-3 special, 4-259 bytes, then words by descending frequency with ties
/// broken lexically.
class WordByteTokenizer final : public Tokenizer {
 public:
  static constexpr std::int32_t kByteBase = 4;
  static constexpr std::int32_t kWordBase = kByteBase + 256;

  WordByteTokenizer() = default;
  explicit WordByteTokenizer(std::vector<std::string> words);

  /// Keeps at most `max_words` words occurring at least `min_count` times.
  [[nodiscard]] static WordByteTokenizer train(std::span<const std::string> texts, std::size_t max_words,
                                 std::size_t min_count = 1);

  std::vector<std::int32_t> tokenize(std::string_view text) const override;
  std::size_t vocab_size() const noexcept override;
  std::size_t used_ids() const noexcept override { return kWordBase + words_.size(); }

  const std::vector<std::string>& words() const noexcept { return words_; }
  /// Word or byte spelling of an id; specials render as [CLS], [SEP], [PAD], [MASK].
  std::string token_text(std::int32_t id) const;

  void save(std::ostream& out) const;
  static WordByteTokenizer load(std::istream& in);
  void save(const std::filesystem::path& path) const;
  static WordByteTokenizer load(const std::filesystem::path& path);

 private:
  std::vector<std::string> words_;
  std::unordered_map<std::string, std::int32_t> lookup_;
};

/// Splits `text` into the pre-tokens the word/byte tokenizer operates on.
std::vector<std::string> split_words(std::string_view text);

/// [CLS] followed by the text's ids, truncated to `max_len` ids in total.
std::vector<std::int32_t> encode_text(const Tokenizer& tokenizer, std::string_view text, std::size_t max_len);

/// "[CLS] q [SEP] d" for cross-encoding. The query keeps at most half the
/// budget; the document fills the rest.
std::vector<std::int32_t> encode_pair(const Tokenizer& tokenizer, std::string_view query, std::string_view document,
                                      std::size_t max_len);

}  // namespace lcret
