#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "lcret/pipeline/data.hpp"

namespace lcret {

/// Knobs of the synthetic retrieval corpus.
///
/// Every document belongs to one topic and is a shuffle of that topic's fixed
/// word phrases, a few filler words and two "entity" words. The entity pair is
/// unique per document, so a query naming both entities (plus two topic words)
/// has exactly one relevant document. Documents sharing one entity with the
/// source are the hard negatives.
struct SyntheticSpec {
  std::size_t num_docs = 1000;
  std::size_t num_topics = 8;
  std::size_t phrases_per_topic = 12;
  std::size_t phrase_length = 3;
  std::size_t num_fillers = 24;
  std::size_t num_entities = 64;
  std::size_t min_phrases = 4;
  std::size_t max_phrases = 6;
  std::size_t fillers_per_doc = 3;
  std::size_t num_languages = 1;
  std::uint64_t vocab_seed = 7;  // fixes the word inventory; share it across splits
  std::uint64_t seed = 1;        // fixes the documents
  std::string id_prefix = "d";
};

struct SyntheticQuery {
  std::string id;
  std::string text;
  std::string doc_id;  // the single relevant document
};

struct SyntheticCorpus {
  std::vector<Document> docs;
  std::vector<std::size_t> topics;
  std::vector<std::pair<std::size_t, std::size_t>> entities;  // indices into the entity inventory
};

SyntheticCorpus generate_corpus(const SyntheticSpec& spec);

/// One query per listed document, in the given order.
std::vector<SyntheticQuery> generate_queries(const SyntheticSpec& spec, const SyntheticCorpus& corpus,
                                             const std::vector<std::size_t>& doc_indices, std::uint64_t seed,
                                             const std::string& id_prefix = "q");

/// Training examples for the listed documents with `hard` same-entity and
/// `random` uniformly drawn negatives. Hard negatives fall back to same-topic
/// and then arbitrary documents when a document has too few entity siblings.
std::vector<TrainingExample> generate_pairs(const SyntheticSpec& spec, const SyntheticCorpus& corpus,
                                            const std::vector<std::size_t>& doc_indices, std::size_t hard,
                                            std::size_t random, std::uint64_t seed);

}  // namespace lcret
