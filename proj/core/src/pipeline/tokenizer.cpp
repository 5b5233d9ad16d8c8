#include "lcret/pipeline/tokenizer.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <istream>
#include <map>
#include <ostream>
#include <stdexcept>

#include "lcret/encoder/config.hpp"
#include "lcret/numerics/checkpoint.hpp"

namespace lcret {
namespace {

constexpr std::string_view kHeader = "lcret-wordbyte 1";

bool is_word_byte(unsigned char c) { return std::isalnum(c) || c >= 0x80; }

}  // namespace

std::vector<std::string> split_words(std::string_view text) {
  std::vector<std::string> out;
  std::size_t i = 0;
  while (i < text.size()) {
    const auto c = static_cast<unsigned char>(text[i]);
    if (std::isspace(c)) {
      ++i;
    } else if (is_word_byte(c)) {
      std::string word;
      while (i < text.size() && is_word_byte(static_cast<unsigned char>(text[i]))) {
        word.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(text[i]))));
        ++i;
      }
      out.push_back(std::move(word));
    } else {
      out.emplace_back(1, static_cast<char>(c));
      ++i;
    }
  }
  return out;
}

WordByteTokenizer::WordByteTokenizer(std::vector<std::string> words) : words_(std::move(words)) {
  for (std::size_t i = 0; i < words_.size(); ++i) {
    if (words_[i].empty()) throw std::invalid_argument("tokenizer: empty word in vocabulary");
    if (!lookup_.emplace(words_[i], kWordBase + static_cast<std::int32_t>(i)).second) {
      throw std::invalid_argument("tokenizer: duplicate word '" + words_[i] + "'");
    }
  }
}

WordByteTokenizer WordByteTokenizer::train(std::span<const std::string> texts, std::size_t max_words,
                                           std::size_t min_count) {
  std::map<std::string, std::size_t> counts;
  for (const auto& t : texts) {
    for (auto& w : split_words(t)) ++counts[std::move(w)];
  }
  std::vector<std::pair<std::string, std::size_t>> ranked;
  for (auto& [w, n] : counts) {
    if (n >= min_count) ranked.emplace_back(w, n);
  }
  std::stable_sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) { return a.second > b.second; });
  if (ranked.size() > max_words) ranked.resize(max_words);
  std::vector<std::string> words;
  for (auto& [w, n] : ranked) words.push_back(std::move(w));
  return WordByteTokenizer(std::move(words));
}

std::vector<std::int32_t> WordByteTokenizer::tokenize(std::string_view text) const {
  std::vector<std::int32_t> ids;
  for (const auto& w : split_words(text)) {
    if (auto it = lookup_.find(w); it != lookup_.end()) {
      ids.push_back(it->second);
    } else {
      for (unsigned char c : w) ids.push_back(kByteBase + c);
    }
  }
  return ids;
}

std::size_t WordByteTokenizer::vocab_size() const noexcept { return round_up_vocab(used_ids()); }

std::string WordByteTokenizer::token_text(std::int32_t id) const {
  static const char* specials[] = {"[CLS]", "[SEP]", "[PAD]", "[MASK]"};
  if (is_special_token(id)) return specials[id];
  if (id >= kByteBase && id < kWordBase) return std::string(1, static_cast<char>(id - kByteBase));
  const auto w = static_cast<std::size_t>(id - kWordBase);
  if (id < 0 || w >= words_.size()) throw std::out_of_range("tokenizer: id " + std::to_string(id) + " unused");
  return words_[w];
}

void WordByteTokenizer::save(std::ostream& out) const {
  out << kHeader << '\n' << words_.size() << '\n';
  for (const auto& w : words_) out << w << '\n';
}

WordByteTokenizer WordByteTokenizer::load(std::istream& in) {
  std::string line;
  if (!std::getline(in, line) || line != kHeader) throw FormatError("tokenizer: missing header");
  std::size_t n = 0;
  if (!std::getline(in, line)) throw FormatError("tokenizer: missing word count");
  try {
    n = std::stoull(line);
  } catch (const std::exception&) {
    throw FormatError("tokenizer: bad word count '" + line + "'");
  }
  std::vector<std::string> words;
  words.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    if (!std::getline(in, line)) throw FormatError("tokenizer: truncated after " + std::to_string(i) + " words");
    words.push_back(line);
  }
  return WordByteTokenizer(std::move(words));
}

void WordByteTokenizer::save(const std::filesystem::path& path) const {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  save(out);
}

WordByteTokenizer WordByteTokenizer::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read " + path.string());
  return load(in);
}

std::vector<std::int32_t> encode_text(const Tokenizer& tokenizer, std::string_view text, std::size_t max_len) {
  if (max_len < 1) throw std::invalid_argument("encode_text: max_len must be positive");
  std::vector<std::int32_t> ids{kClsId};
  const auto body = tokenizer.tokenize(text);
  ids.insert(ids.end(), body.begin(), body.begin() + static_cast<std::ptrdiff_t>(std::min(body.size(), max_len - 1)));
  return ids;
}

std::vector<std::int32_t> encode_pair(const Tokenizer& tokenizer, std::string_view query, std::string_view document,
                                      std::size_t max_len) {
  if (max_len < 3) throw std::invalid_argument("encode_pair: max_len must be at least 3");
  const auto q = tokenizer.tokenize(query);
  const auto d = tokenizer.tokenize(document);
  const std::size_t budget = max_len - 2;
  const std::size_t q_len = std::min(q.size(), std::max(budget / 2, budget - std::min(d.size(), budget)));
  const std::size_t d_len = std::min(d.size(), budget - q_len);
  std::vector<std::int32_t> ids{kClsId};
  ids.insert(ids.end(), q.begin(), q.begin() + static_cast<std::ptrdiff_t>(q_len));
  ids.push_back(kSepId);
  ids.insert(ids.end(), d.begin(), d.begin() + static_cast<std::ptrdiff_t>(d_len));
  return ids;
}

}  // namespace lcret
