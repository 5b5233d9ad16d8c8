#include "lcret/pipeline/data.hpp"

#include <fstream>
#include <istream>
#include <map>
#include <ostream>

#include <nlohmann/json.hpp>

namespace lcret {
namespace {

using json = nlohmann::json;

[[noreturn]] void fail(const std::string& name, std::size_t line, const std::string& what) {
  throw DataError(name + ":" + std::to_string(line) + ": " + what);
}

std::string string_field(const json& obj, const char* key, const std::string& name, std::size_t line,
                         bool required = true) {
  auto it = obj.find(key);
  if (it == obj.end()) {
    if (!required) return {};
    fail(name, line, std::string("missing field \"") + key + "\"");
  }
  if (!it->is_string()) fail(name, line, std::string("field \"") + key + "\" must be a string");
  return it->get<std::string>();
}

template <class F>
void for_each_record(std::istream& in, const std::string& name, F&& f) {
  std::string text;
  std::size_t line = 0;
  while (std::getline(in, text)) {
    ++line;
    if (text.find_first_not_of(" \t\r") == std::string::npos) continue;
    json obj;
    try {
      obj = json::parse(text);
    } catch (const json::parse_error& e) {
      fail(name, line, std::string("invalid JSON: ") + e.what());
    }
    if (!obj.is_object()) fail(name, line, "expected a JSON object");
    f(obj, line);
  }
}

std::ifstream open(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError(path.string() + ": cannot open");
  return in;
}

}  // namespace

std::vector<Document> read_corpus(std::istream& in, const std::string& name) {
  std::vector<Document> docs;
  for_each_record(in, name, [&](const json& obj, std::size_t line) {
    Document d{string_field(obj, "id", name, line), string_field(obj, "text", name, line),
               string_field(obj, "lang", name, line, false)};
    if (d.id.empty()) fail(name, line, "empty document id");
    docs.push_back(std::move(d));
  });
  return docs;
}

std::vector<Document> load_corpus(const std::filesystem::path& path) {
  auto in = open(path);
  return read_corpus(in, path.string());
}

void write_corpus(std::ostream& out, const std::vector<Document>& docs) {
  for (const auto& d : docs) out << json{{"id", d.id}, {"text", d.text}, {"lang", d.lang}}.dump() << '\n';
}

std::vector<TrainingExample> read_pairs(std::istream& in, const std::string& name, std::size_t required_negatives) {
  std::vector<TrainingExample> out;
  for_each_record(in, name, [&](const json& obj, std::size_t line) {
    TrainingExample ex;
    ex.query = string_field(obj, "query", name, line);
    ex.positive = string_field(obj, "positive", name, line);
    if (ex.positive.empty()) fail(name, line, "empty positive");
    ex.lang = string_field(obj, "lang", name, line, false);
    ex.source = string_field(obj, "source", name, line, false);
    if (auto it = obj.find("negatives"); it != obj.end()) {
      if (!it->is_array()) fail(name, line, "field \"negatives\" must be an array");
      for (const auto& n : *it) {
        if (!n.is_string()) fail(name, line, "negatives must be strings");
        ex.negatives.push_back(n.get<std::string>());
      }
    }
    if (required_negatives > 0 && ex.negatives.size() != required_negatives) {
      fail(name, line, "expected " + std::to_string(required_negatives) + " negatives, found " +
                           std::to_string(ex.negatives.size()));
    }
    out.push_back(std::move(ex));
  });
  return out;
}

std::vector<TrainingExample> load_pairs(const std::filesystem::path& path, std::size_t required_negatives) {
  auto in = open(path);
  return read_pairs(in, path.string(), required_negatives);
}

void write_pairs(std::ostream& out, const std::vector<TrainingExample>& examples) {
  for (const auto& ex : examples) {
    out << json{{"query", ex.query},
                {"positive", ex.positive},
                {"negatives", ex.negatives},
                {"lang", ex.lang},
                {"source", ex.source}}
               .dump()
        << '\n';
  }
}

std::vector<CorpusSource> group_by_language(const std::vector<Document>& docs) {
  std::vector<CorpusSource> sources;
  std::map<std::string, std::size_t> slot;
  for (const auto& d : docs) {
    auto [it, fresh] = slot.emplace(d.lang, sources.size());
    if (fresh) sources.push_back({d.lang, d.lang, {}, 0});
    sources[it->second].documents.push_back(d);
  }
  return sources;
}

}  // namespace lcret
