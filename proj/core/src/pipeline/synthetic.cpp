#include "lcret/pipeline/synthetic.hpp"

#include <algorithm>
#include <random>
#include <set>
#include <stdexcept>

namespace lcret {
namespace {

struct Inventory {
  std::vector<std::vector<std::vector<std::string>>> phrases;  // topic -> phrase -> words
  std::vector<std::string> fillers;
  std::vector<std::string> entities;
};

class WordMaker {
 public:
  explicit WordMaker(std::uint64_t seed) : rng_(seed) {}

  std::string make(const std::string& consonants, std::size_t syllables) {
    static const std::string vowels = "aeiou";
    for (;;) {
      std::string w;
      for (std::size_t s = 0; s < syllables; ++s) {
        w += consonants[rng_() % consonants.size()];
        w += vowels[rng_() % vowels.size()];
      }
      if (used_.insert(w).second) return w;
    }
  }

 private:
  std::mt19937_64 rng_;
  std::set<std::string> used_;
};

Inventory make_inventory(const SyntheticSpec& spec) {
  static const std::string kConsonants[] = {"bdgkmnprst", "fhjlvwyzc"};
  WordMaker maker(spec.vocab_seed);
  Inventory inv;
  for (std::size_t e = 0; e < spec.num_entities; ++e) inv.entities.push_back(maker.make(kConsonants[0], 3));
  for (std::size_t f = 0; f < spec.num_fillers; ++f) inv.fillers.push_back(maker.make(kConsonants[0], 1 + f % 2));
  inv.phrases.resize(spec.num_topics);
  for (std::size_t t = 0; t < spec.num_topics; ++t) {
    const auto& cons = kConsonants[(t % spec.num_languages) % 2];
    for (std::size_t p = 0; p < spec.phrases_per_topic; ++p) {
      std::vector<std::string> phrase;
      for (std::size_t w = 0; w < spec.phrase_length; ++w) phrase.push_back(maker.make(cons, 2 + (p + w) % 2));
      inv.phrases[t].push_back(std::move(phrase));
    }
  }
  return inv;
}

std::string language_tag(std::size_t topic, const SyntheticSpec& spec) {
  return "x" + std::string(1, static_cast<char>('a' + topic % spec.num_languages));
}

void check(const SyntheticSpec& spec) {
  if (spec.num_topics == 0 || spec.phrases_per_topic == 0 || spec.phrase_length == 0 || spec.num_fillers == 0) {
    throw std::invalid_argument("synthetic corpus: topic, phrase and filler counts must be positive");
  }
  if (spec.num_languages == 0 || spec.num_languages > 2) {
    throw std::invalid_argument("synthetic corpus: one or two languages supported");
  }
  if (spec.min_phrases == 0 || spec.max_phrases < spec.min_phrases) {
    throw std::invalid_argument("synthetic corpus: bad phrase range");
  }
  if (spec.num_entities * (spec.num_entities - 1) / 2 < spec.num_docs) {
    throw std::invalid_argument("synthetic corpus: too few entity pairs for " + std::to_string(spec.num_docs) +
                                " documents");
  }
}

std::string join(const std::vector<std::string>& words) {
  std::string out;
  for (const auto& w : words) {
    if (!out.empty()) out += ' ';
    out += w;
  }
  return out;
}

}  // namespace

SyntheticCorpus generate_corpus(const SyntheticSpec& spec) {
  check(spec);
  const Inventory inv = make_inventory(spec);
  std::mt19937_64 rng(spec.seed);
  std::vector<std::pair<std::size_t, std::size_t>> pairs;
  for (std::size_t a = 0; a < spec.num_entities; ++a) {
    for (std::size_t b = a + 1; b < spec.num_entities; ++b) pairs.emplace_back(a, b);
  }
  std::shuffle(pairs.begin(), pairs.end(), rng);

  SyntheticCorpus corpus;
  std::uniform_int_distribution<std::size_t> topic_of(0, spec.num_topics - 1), phrase_count(spec.min_phrases,
                                                                                              spec.max_phrases);
  std::uniform_int_distribution<std::size_t> phrase_of(0, spec.phrases_per_topic - 1), filler_of(0, spec.num_fillers - 1);
  for (std::size_t d = 0; d < spec.num_docs; ++d) {
    const std::size_t topic = topic_of(rng);
    std::vector<std::vector<std::string>> units;
    const std::size_t n = phrase_count(rng);
    for (std::size_t p = 0; p < n; ++p) units.push_back(inv.phrases[topic][phrase_of(rng)]);
    for (std::size_t f = 0; f < spec.fillers_per_doc; ++f) units.push_back({inv.fillers[filler_of(rng)]});
    units.push_back({inv.entities[pairs[d].first]});
    units.push_back({inv.entities[pairs[d].second]});
    std::shuffle(units.begin(), units.end(), rng);
    std::vector<std::string> words;
    for (const auto& u : units) words.insert(words.end(), u.begin(), u.end());
    corpus.docs.push_back({spec.id_prefix + std::to_string(d), join(words), language_tag(topic, spec)});
    corpus.topics.push_back(topic);
    corpus.entities.push_back(pairs[d]);
  }
  return corpus;
}

namespace {

std::string query_text(const Inventory& inv, const SyntheticCorpus& corpus,
                       std::size_t doc, std::mt19937_64& rng) {
  // Topic words are drawn from the document's own text so the query overlaps it.
  std::vector<std::string> doc_words;
  {
    std::string w;
    for (char c : corpus.docs[doc].text + " ") {
      if (c == ' ') {
        if (!w.empty()) doc_words.push_back(std::move(w));
        w.clear();
      } else {
        w += c;
      }
    }
  }
  const auto& e = corpus.entities[doc];
  const auto& ea = inv.entities[e.first];
  const auto& eb = inv.entities[e.second];
  std::set<std::string> fillers(inv.fillers.begin(), inv.fillers.end());
  std::vector<std::string> topical;
  for (const auto& w : doc_words) {
    if (w != ea && w != eb && !fillers.count(w)) topical.push_back(w);
  }
  std::vector<std::string> words{ea, eb};
  std::shuffle(topical.begin(), topical.end(), rng);
  for (std::size_t i = 0; i < std::min<std::size_t>(2, topical.size()); ++i) words.push_back(topical[i]);
  std::shuffle(words.begin(), words.end(), rng);
  return join(words);
}

}  // namespace

std::vector<SyntheticQuery> generate_queries(const SyntheticSpec& spec, const SyntheticCorpus& corpus,
                                             const std::vector<std::size_t>& doc_indices, std::uint64_t seed,
                                             const std::string& id_prefix) {
  const Inventory inv = make_inventory(spec);
  std::mt19937_64 rng(seed);
  std::vector<SyntheticQuery> out;
  for (std::size_t i = 0; i < doc_indices.size(); ++i) {
    const std::size_t d = doc_indices[i];
    out.push_back({id_prefix + std::to_string(i), query_text(inv, corpus, d, rng), corpus.docs.at(d).id});
  }
  return out;
}

std::vector<TrainingExample> generate_pairs(const SyntheticSpec& spec, const SyntheticCorpus& corpus,
                                            const std::vector<std::size_t>& doc_indices, std::size_t hard,
                                            std::size_t random, std::uint64_t seed) {
  const Inventory inv = make_inventory(spec);
  const std::size_t n = corpus.docs.size();
  if (n < hard + random + 1) throw std::invalid_argument("synthetic pairs: corpus too small for the negatives");
  std::mt19937_64 rng(seed);
  std::vector<TrainingExample> out;
  for (std::size_t d : doc_indices) {
    TrainingExample ex;
    ex.query = query_text(inv, corpus, d, rng);
    ex.positive = corpus.docs.at(d).text;
    ex.lang = corpus.docs[d].lang;
    ex.source = "synthetic-" + ex.lang;
    std::vector<std::size_t> siblings, same_topic, rest;
    const auto [a, b] = corpus.entities[d];
    for (std::size_t o = 0; o < n; ++o) {
      if (o == d) continue;
      const auto [oa, ob] = corpus.entities[o];
      if (oa == a || oa == b || ob == a || ob == b) {
        siblings.push_back(o);
      } else if (corpus.topics[o] == corpus.topics[d]) {
        same_topic.push_back(o);
      } else {
        rest.push_back(o);
      }
    }
    std::shuffle(siblings.begin(), siblings.end(), rng);
    std::shuffle(same_topic.begin(), same_topic.end(), rng);
    std::shuffle(rest.begin(), rest.end(), rng);
    std::vector<std::size_t> pool = siblings;
    pool.insert(pool.end(), same_topic.begin(), same_topic.end());
    pool.insert(pool.end(), rest.begin(), rest.end());
    std::set<std::size_t> taken{d};
    for (std::size_t i = 0; i < hard; ++i) {
      taken.insert(pool[i]);
      ex.negatives.push_back(corpus.docs[pool[i]].text);
    }
    std::uniform_int_distribution<std::size_t> any(0, n - 1);
    for (std::size_t i = 0; i < random;) {
      const std::size_t o = any(rng);
      if (!taken.insert(o).second) continue;
      ex.negatives.push_back(corpus.docs[o].text);
      ++i;
    }
    out.push_back(std::move(ex));
  }
  return out;
}

}  // namespace lcret
