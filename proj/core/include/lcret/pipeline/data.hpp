#pragma once

#include <filesystem>
#include <iosfwd>
#include <stdexcept>
#include <string>
#include <vector>

namespace lcret {

/// Malformed input record; the message carries "<file>:<line>: ".
class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct Document {
  std::string id;
  std::string text;
  std::string lang;
};

struct TrainingExample {
  std::string query;
  std::string positive;
  std::vector<std::string> negatives;
  std::string lang;
  std::string source;
};

/// Documents grouped under one source for sampling; `token_count` is filled by
/// the caller when token-based weighting is wanted.
struct CorpusSource {
  std::string source_id;
  std::string lang;
  std::vector<Document> documents;
  std::size_t token_count = 0;
};

/// JSONL {"id", "text", "lang"}; `name` labels error messages.
std::vector<Document> read_corpus(std::istream& in, const std::string& name = "<corpus>");
std::vector<Document> load_corpus(const std::filesystem::path& path);
void write_corpus(std::ostream& out, const std::vector<Document>& docs);

/// JSONL {"query", "positive", "negatives", "lang", "source"}. With
/// `required_negatives` set, every example must carry exactly that many.
std::vector<TrainingExample> read_pairs(std::istream& in, const std::string& name = "<pairs>",
                                        std::size_t required_negatives = 0);
std::vector<TrainingExample> load_pairs(const std::filesystem::path& path, std::size_t required_negatives = 0);
void write_pairs(std::ostream& out, const std::vector<TrainingExample>& examples);

/// Groups documents by language, one source per language, in first-seen order.
std::vector<CorpusSource> group_by_language(const std::vector<Document>& docs);

/// Hard-negative count of an embedding fine-tuning example.
inline constexpr std::size_t kEmbeddingHardNegatives = 8;

}  // namespace lcret
